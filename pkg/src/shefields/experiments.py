"""One runner per experiment kind.

Each runner takes a validated :class:`~shefields.config.ExperimentConfig`,
writes its data files into ``out_dir`` and returns an :class:`Outcome`.
Outputs depend only on the configuration, never on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coupling, ensemble, geometry, solver, stats
from .io import write_csv, write_json
from .noise import GridSpec, domain_length, sample_noise_grid

# seeds for independent sub-ensembles are offset by multiples of this
SEED_STRIDE = 1_000_000_007


@dataclass
class Outcome:
    files: list = field(default_factory=list)
    censored: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _case(sigma):
    return 1 if isinstance(sigma, solver.PAM) else 2


# ---------------------------------------------------------------------------


def run_tails(cfg, out: Path, workers) -> Outcome:
    res = Outcome()
    spec = cfg.grid()
    ens = ensemble.full_ensemble(spec, cfg.sigma, [cfg.t], cfg.paths, cfg.base_seed, sites=[0], workers=workers)
    samples = ens.kept()[:, 0, 0]
    res.censored["tails"] = ens.n_censored
    case = _case(cfg.sigma)
    lam = cfg.param("lambda")
    if lam is None:
        lam = stats.resolvable_grid(samples, case, censored=ens.n_censored)
    rep = stats.survival_curve(samples, lam, case, censored=ens.n_censored, min_samples=1)
    res.files.append(write_json(rep, out / "tails.json"))
    N = rep.n_samples
    rows = []
    for l, c in zip(rep.lambda_grid, rep.counts):
        lo, hi = stats.clopper_pearson(c, N)
        rows.append([l, c / N, lo, hi])
    res.files.append(write_csv(out / "tails.csv", ["abscissa", "estimate", "ci_lo", "ci_hi"], rows))
    res.summary = {"slope": rep.slope, "r2": rep.r2, "mean": float(samples.mean()), "var": float(samples.var(ddof=1))}
    return res


def run_small_ball(cfg, out, workers) -> Outcome:
    res = Outcome()
    spec = cfg.grid()
    ens = ensemble.full_ensemble(spec, cfg.sigma, [cfg.t], cfg.paths, cfg.base_seed, sites=[0], workers=workers)
    samples = ens.kept()[:, 0, 0]
    res.censored["small_ball"] = ens.n_censored
    eps = list(cfg.param("eps"))
    tilts = cfg.param("tilt")
    weighted = {}
    nonpos = int(np.count_nonzero(samples <= 0))
    if tilts is not None:
        if len(tilts) != len(eps):
            res.failures.append("params.tilt must list one drift strength per eps (0 for none)")
        else:
            tilt_paths = cfg.param("tilt_paths", cfg.paths)
            for i, (e, kappa) in enumerate(zip(eps, tilts)):
                if kappa <= 0:
                    continue
                tens = ensemble.tilted_site_ensemble(
                    spec, cfg.sigma, cfg.t, kappa, tilt_paths, cfg.base_seed + (i + 1) * SEED_STRIDE, workers=workers,
                    drift=cfg.param("drift", "kernel"),
                )
                keep = ~tens.censored
                vals = tens.values[keep]
                nonpos += int(np.count_nonzero(vals <= 0))
                weighted[e] = (vals, tens.log_weights[keep])
    rep = stats.small_ball_curve(samples, eps, weighted or None)
    res.files.append(write_json(rep, out / "small_ball.json"))
    rows = [[p.eps, p.normalized, p.normalized_ci[0], p.normalized_ci[1]] for p in rep.points]
    res.files.append(write_csv(out / "small_ball.csv", ["abscissa", "estimate", "ci_lo", "ci_hi"], rows,
                               ["estimate = log P(u < eps) / |log eps|"]))
    if nonpos:
        res.failures.append(f"{nonpos} nonpositive samples")
    else:
        ks = cfg.param("k", (2.0, 4.0, 8.0))
        nm = stats.negative_moments(samples, ks)
        rows = [[m.k, m.estimate, m.ci[0], m.ci[1], m.stabilized, m.dominated] for m in nm]
        res.files.append(write_csv(out / "negative_moments.csv",
                                   ["abscissa", "estimate", "ci_lo", "ci_hi", "stabilized", "dominated"], rows))
    res.summary = {"normalized": list(rep.normalized), "nonpositive": nonpos}
    return res


def _comparison_path(seed, spec, sigma, t, low):
    return np.array([solver.comparison_check(spec, sigma, sample_noise_grid(spec, seed), t, low)])


def run_comparison(cfg, out, workers) -> Outcome:
    from functools import partial

    res = Outcome()
    spec = cfg.grid(length=2.0 + domain_length(cfg.t))
    low = solver.indicator_initial(spec)
    ens = ensemble.run_paths(partial(_comparison_path, spec=spec, sigma=cfg.sigma, t=cfg.t, low=low),
                             cfg.paths, cfg.base_seed, workers)
    frac = ens.values[:, 0]
    rows = [[p, cfg.base_seed + p, f] for p, f in enumerate(frac)]
    res.files.append(write_csv(out / "comparison.csv", ["path", "seed", "violation_fraction"], rows,
                               [f"tolerance={solver.comparison_tolerance(spec.dx)!r}"]))
    bad = int(np.count_nonzero(frac > 0))
    if bad:
        res.failures.append(f"comparison violated on {bad} paths")
    res.summary = {"violating_paths": bad, "max_fraction": float(frac.max())}
    return res


def _schedule_cross(cfg):
    betas = cfg.param("beta", (1.0, 2.0, 4.0, 8.0))
    ns = cfg.param("n", (1, 2, 4, 8))
    return tuple((float(b), int(n)) for b in betas for n in ns)


def _coupling_grid(cfg, betas):
    finite = [b for b in betas if math.isfinite(b)]
    return cfg.grid(length=coupling.coupling_domain(cfg.t, max(finite) if finite else 1.0))


def run_coupling(cfg, out, workers) -> Outcome:
    res = Outcome()
    sched = _schedule_cross(cfg)
    spec = _coupling_grid(cfg, [b for b, _ in sched])
    ens = coupling.CouplingEnsemble.run(spec, cfg.sigma, cfg.t, sched, cfg.paths, cfg.base_seed, workers=workers)
    rep = coupling.coupling_report(ens, cfg.param("k", (2.0,)), cfg.param("delta", (0.05, 0.1)))
    res.files.append(rep.to_json(out / "coupling.json"))
    res.files.append(rep.to_csv(out / "coupling.csv"))
    res.censored["coupling"] = ens.censored
    for e in rep.entries:
        if not (e.moment >= 0 and all(0 <= p <= 1 for p in e.exceed_prob.values())):
            res.failures.append(f"invalid coupling entry {e}")
    res.summary = {k: (v.slope if v is not None else None) for k, v in rep.fitted_rates.items()}
    return res


def run_correlation_length(cfg, out, workers) -> Outcome:
    res = Outcome()
    sched = coupling.diagonal_schedule(cfg.param("schedule", coupling.DEFAULT_SCHEDULE))
    spec = _coupling_grid(cfg, [b for b, _ in sched])
    ens = coupling.CouplingEnsemble.run(spec, cfg.sigma, cfg.t, sched, cfg.paths, cfg.base_seed, workers=workers)
    res.censored["correlation_length"] = ens.censored
    rep = coupling.coupling_report(ens, (2.0,), cfg.param("delta"))
    res.files.append(rep.to_csv(out / "coupling.csv"))
    rows, witnesses = [], []
    for delta in cfg.param("delta"):
        for eps in cfg.param("epsilon"):
            r = coupling.correlation_length_from_ensemble(ens, eps, delta)
            w = r.witness
            ok = None
            if w is not None:
                ok = coupling.verify_witness(w, cfg.sigma, spec.dt, noise_seed=cfg.base_seed)
                if not ok:
                    res.failures.append(f"witness for eps={eps}, delta={delta} failed the cone test")
            rows.append([eps, delta, r.lag, None if w is None else w.beta, None if w is None else w.n, r.achieved])
            witnesses.append({"epsilon": eps, "delta": delta, "result": r.to_dict(), "cone_exact": ok})
    res.files.append(write_csv(out / "correlation_length.csv", ["epsilon", "delta", "lag", "beta", "n", "achieved"], rows))
    res.files.append(write_json({"witnesses": witnesses}, out / "witness.json"))
    res.summary = {"lags": [r[2] for r in rows]}
    return res


def field_ensemble(spec, sigma, t, paths, base_seed, workers):
    """Full terminal snapshots; ``None`` marks censored paths."""
    from functools import partial

    fn = partial(ensemble.full_field_path, spec=spec, sigma=sigma, times=[t])
    ens = ensemble.run_paths(fn, paths, base_seed, workers)
    snaps = []
    for p in range(paths):
        if ens.censored[p]:
            snaps.append(None)
        else:
            snaps.append(solver.FieldSnapshot(spec, t, ens.values[p, 0], solver.Provenance.full(), base_seed + p))
    return snaps, ens.n_censored


def run_exceedance(cfg, out, workers) -> Outcome:
    res = Outcome()
    gc = geometry.GaugeCase(_case(cfg.sigma), cfg.param("alpha"))
    measures = {}
    for i, R in enumerate(cfg.param("R")):
        spec = cfg.grid(length=R + domain_length(cfg.t))
        snaps, cens = field_ensemble(spec, cfg.sigma, cfg.t, cfg.paths, cfg.base_seed + i * SEED_STRIDE, workers)
        res.censored[f"R={R!r}"] = cens
        measures[R] = [geometry.exceedance_measure(s, R, gc) for s in snaps if s is not None]
    rep = geometry.exceedance_scaling(measures, seed=cfg.base_seed)
    rows = [[R, m, e, n] for R, m, e, n in zip(rep.R, rep.medians, rep.empty_frequency, rep.n_fields)]
    res.files.append(write_csv(out / "exceedance.csv", ["R", "median_measure", "empty_frequency", "fields"], rows,
                               [f"gauge case={gc.case} alpha={gc.alpha!r}"]))
    res.files.append(write_json(rep, out / "scaling.json"))
    res.summary = {"slope": rep.slope, "ci": rep.ci}
    return res


def run_islands(cfg, out, workers) -> Outcome:
    res = Outcome()
    a, b = cfg.param("a"), cfg.param("b")
    summary, listing = [], []
    for i, R in enumerate(cfg.param("R")):
        spec = cfg.grid(length=R + domain_length(cfg.t))
        snaps, cens = field_ensemble(spec, cfg.sigma, cfg.t, cfg.paths, cfg.base_seed + i * SEED_STRIDE, workers)
        res.censored[f"R={R!r}"] = cens
        J, counts = [], []
        for p, s in enumerate(snaps):
            if s is None:
                continue
            isl = geometry.find_islands(s, a, b, R)
            _check_islands(isl, res)
            J.append(max((x.length for x in isl), default=0.0))
            counts.append(len(isl))
            if p == 0:
                listing.extend([R, p, x.left, x.right, x.length, x.peak] for x in isl)
        J = np.array(J)
        lr2 = math.log(R) ** 2
        summary.append([R, float(J.max()), float(J.max() / lr2), float(J.mean()), float(np.mean(counts)), len(J)])
    res.files.append(write_csv(out / "islands_summary.csv",
                               ["R", "max_J", "max_J_over_log2R", "mean_J", "mean_islands", "fields"], summary))
    res.files.append(write_csv(out / "islands.csv", ["R", "path", "left", "right", "length", "peak"], listing))
    res.summary = {"max_J_over_log2R": [r[2] for r in summary]}
    return res


def _check_islands(isl, res):
    for x, y in zip(isl, isl[1:]):
        if not x.right <= y.left:
            res.failures.append("islands overlap or are unsorted")
    for x in isl:
        if not (x.peak > x.b and x.length > 0):
            res.failures.append(f"island {x} violates its defining conditions")


def _picard_field_path(seed, spec, sigma, t, beta, n):
    return solver.solve_picard(spec, sigma, sample_noise_grid(spec, seed), t, beta, n).values


def run_sojourn(cfg, out, workers) -> Outcome:
    from functools import partial

    res = Outcome()
    alpha = cfg.param("alpha")
    beta = cfg.param("beta", (3.0,))[0]
    n_pic = cfg.param("n", (int(beta),))[0]
    blocks = cfg.param("blocks", (4, 16))
    probe = GridSpec.from_resolution(1.0, cfg.dx, cfg.t, cfg.dt)
    w = coupling.LagClassWitness.for_picard(probe, beta, n_pic, cfg.t)
    ell = cfg.param("ell", w.lag)
    if ell < w.lag - 1e-12:
        res.failures.append(f"block width {ell} is below the witness lag {w.lag}")
    span = max(blocks) * ell
    spec = cfg.grid(length=span + 2 * w.lag)
    fn = partial(_picard_field_path, spec=spec, sigma=cfg.sigma, t=cfg.t, beta=beta, n=n_pic)
    # calibration: one site per independent field
    cal_paths = cfg.param("calibration_paths", cfg.paths)
    cal = ensemble.run_paths(fn, cal_paths, cfg.base_seed + SEED_STRIDE, workers).values[:, 0]
    G = geometry.UpperQuantile(cal)
    fields = ensemble.run_paths(fn, cfg.paths, cfg.base_seed, workers).values
    rows = []
    for nb in blocks:
        thr = G((nb * ell) ** (-alpha))
        Z = np.array([geometry.block_integrals(geometry.Profile(spec.x, f), ell, nb, thr) for f in fields])
        Y = Z.sum(axis=1)
        mean = float(Y.mean())
        norm2 = float(np.sqrt(np.mean((Y / mean - 1) ** 2)))
        est = geometry.block_moment_estimate(Z, 2)
        rows.append([nb, nb * ell, thr, mean, norm2, est])
    res.files.append(write_csv(out / "sojourn.csv", ["n", "span", "threshold", "mean_value", "norm2", "block_estimate"],
                               rows, [f"alpha={alpha!r} ell={ell!r} beta={beta!r} picard_n={n_pic}"]))
    res.summary = {"norm2": [r[4] for r in rows], "ell": ell}
    return res


def run_good_index(cfg, out, workers) -> Outcome:
    res = Outcome()
    a, b = cfg.param("a"), cfg.param("b")
    delta = (cfg.param("delta") or (0.05,))[0]
    c = cfg.param("spacing_c", 1.0)
    table, example = [], None
    for i, R in enumerate(cfg.param("R")):
        spec = cfg.grid(length=R + domain_length(cfg.t))
        snaps, cens = field_ensemble(spec, cfg.sigma, cfg.t, cfg.paths, cfg.base_seed + i * SEED_STRIDE, workers)
        res.censored[f"R={R!r}"] = cens
        scans = [geometry.good_index_scan(s, a, b, delta, c, R) for s in snaps if s is not None]
        if example is None and scans:
            example = scans[0]
        table.append({"R": R, "good_probability": float(np.mean([s.good_fraction for s in scans])),
                      "max_bad_gap_mean": float(np.mean([s.max_bad_gap for s in scans])),
                      "max_bad_gap_max": int(max(s.max_bad_gap for s in scans)), "fields": len(scans),
                      "log_R": math.log(R)})
    res.files.append(write_json({"per_R": table, "example_scan": example}, out / "good_index.json"))
    res.summary = {"good_probability": [r["good_probability"] for r in table]}
    return res


RUNNERS = {
    "tails": run_tails,
    "small_ball": run_small_ball,
    "comparison": run_comparison,
    "coupling": run_coupling,
    "correlation_length": run_correlation_length,
    "exceedance": run_exceedance,
    "islands": run_islands,
    "sojourn": run_sojourn,
    "good_index": run_good_index,
}
