"""Command-line entry point: ``shefields run|validate|replay|dump-noise``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__, solver
from .config import parse_config
from .errors import ConfigurationError
from .experiments import RUNNERS, Outcome
from .io import dumps_json, write_json
from .noise import GridSpec, NoiseGrid, sample_noise_grid

log = logging.getLogger("shefields")

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, cfg, outcome: Outcome, wall, status, error=None):
    files = sorted({Path(f).resolve() for f in outcome.files})
    manifest = {
        "config_hash": cfg.config_hash,
        "experiment": cfg.experiment,
        "code_version": __version__,
        "wall_time_s": wall,
        "status": status,
        "error": error,
        "hard_invariant_failures": list(outcome.failures),
        "censored": outcome.censored,
        "files": [{"name": f.name, "sha256": _sha256(f), "bytes": f.stat().st_size} for f in files],
    }
    return write_json(manifest, out / "manifest.json")


def run_experiment(cfg, out_dir, workers=1) -> tuple[int, dict]:
    """Run ``cfg`` into ``out_dir``; returns ``(exit_code, manifest_dict)``.

    On an exception the files written so far are kept, a ``FAILED`` marker is
    added and the manifest records the error.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.canonical.txt").write_text(cfg.canonical, encoding="utf-8")
    start = time.perf_counter()
    outcome = Outcome(files=[out / "config.canonical.txt"])
    try:
        result = RUNNERS[cfg.experiment](cfg, out, workers)
        result.files = outcome.files + result.files
        outcome = result
        status = "ok" if not outcome.failures else "invariant_failed"
        error = None
    except Exception as exc:  # flush what we have, then report
        log.error("experiment failed: %s", exc)
        error = f"{type(exc).__name__}: {exc}"
        marker = out / "FAILED"
        marker.write_text(traceback.format_exc(), encoding="utf-8")
        outcome.files += [p for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"]
        status = "error"
    wall = time.perf_counter() - start
    path = write_manifest(out, cfg, outcome, wall, status, error)
    manifest = json.loads(path.read_text())
    code = EXIT_OK if status == "ok" else EXIT_FAILED
    return code, manifest


def _read_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def cmd_validate(args):
    try:
        cfg = _read_config(args.config)
    except ConfigurationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: experiment={cfg.experiment} hash={cfg.config_hash}")
    return EXIT_OK


def cmd_run(args):
    try:
        cfg = _read_config(args.config)
    except ConfigurationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    out = Path(args.out or f"out-{cfg.experiment}")
    code, manifest = run_experiment(cfg, out, args.workers)
    print(f"{manifest['status']}: {len(manifest['files'])} files in {out} ({manifest['wall_time_s']:.1f} s)")
    for f in manifest["hard_invariant_failures"]:
        print(f"invariant failed: {f}", file=sys.stderr)
    return code


def cmd_replay(args):
    noise = NoiseGrid.load(args.dump)
    spec = noise.spec
    inc = noise.increments
    regenerated = sample_noise_grid(spec, noise.seed).increments
    info = {
        "nx": spec.nx,
        "nt": spec.nt,
        "dt": spec.dt,
        "dx": spec.dx,
        "seed": noise.seed,
        "sample_variance": float(inc.var()),
        "expected_variance": spec.dt * spec.dx,
        "matches_seed": bool(np.array_equal(inc, regenerated)),
    }
    if args.sigma:
        sigma = {"pam": lambda p: solver.PAM(p), "constant": lambda p: solver.constant(p)}[args.sigma](args.param)
        t_end = args.t if args.t is not None else spec.t_max
        snap = solver.solve_full(spec, sigma, noise, t_end)
        info["t"] = snap.time
        info["value_at_0"] = float(snap.values[0])
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            snap.to_csv(Path(args.out) / "snapshot.csv")
    sys.stdout.write(dumps_json(info))
    return EXIT_OK


def cmd_dump_noise(args):
    spec = GridSpec.from_resolution(args.length, args.dx, args.t, args.dt)
    sample_noise_grid(spec, args.seed).dump(args.path)
    print(f"wrote {args.path}: nx={spec.nx} nt={spec.nt}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="shefields", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.add_argument("--seed-override", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    y = sub.add_parser("replay", help="inspect (and optionally solve on) a noise dump")
    y.add_argument("dump")
    y.add_argument("--sigma", choices=["pam", "constant"])
    y.add_argument("--param", type=float, default=1.0, help="q for pam, c for constant")
    y.add_argument("--t", type=float)
    y.add_argument("--out")
    y.set_defaults(func=cmd_replay)

    d = sub.add_parser("dump-noise", help="write a noise grid in the replay format")
    d.add_argument("path")
    d.add_argument("--length", type=float, required=True)
    d.add_argument("--dx", type=float, required=True)
    d.add_argument("--t", type=float, required=True)
    d.add_argument("--dt", type=float, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_dump_noise)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
