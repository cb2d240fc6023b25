"""Experiment configuration: a flat ``key = value`` text format.

Example::

    experiment = tails
    t = 0.5
    paths = 10000

    [sigma]
    kind = constant
    c = 1.0

    [grid]
    dx = 0.01
    dt = 5e-5

``[section]`` lines only prefix the keys that follow (``sigma.kind``); the
same file may equally be written with dotted keys and no sections.  ``#``
starts a comment.  Lists are comma separated.  A JSON object with the same
(dotted or nested) keys is accepted too.  Every problem is collected and
reported together.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

from . import solver
from .errors import ConfigurationError
from .noise import GridSpec, domain_length

EXPERIMENTS = (
    "coupling",
    "correlation_length",
    "exceedance",
    "islands",
    "sojourn",
    "tails",
    "small_ball",
    "comparison",
    "good_index",
)

DEFAULTS = {
    "t": 0.25,
    "paths": 2000,
    "base_seed": 0,
    "grid.dx": 0.01,
    "grid.dt": 5e-5,
}

# key -> parser
_FLOAT, _INT, _STR, _FLOATS, _INTS, _BOOL = "float", "int", "str", "floats", "ints", "bool"

SCHEMA = {
    "experiment": _STR,
    "t": _FLOAT,
    "paths": _INT,
    "base_seed": _INT,
    "grid.dx": _FLOAT,
    "grid.dt": _FLOAT,
    "grid.length": _FLOAT,
    "sigma.kind": _STR,
    "sigma.q": _FLOAT,
    "sigma.lo": _FLOAT,
    "sigma.hi": _FLOAT,
    "sigma.shape": _STR,
    "sigma.c": _FLOAT,
    "sigma.case1": _BOOL,
    "sigma.bounded": _BOOL,
    "params.alpha": _FLOAT,
    "params.a": _FLOAT,
    "params.b": _FLOAT,
    "params.delta": _FLOATS,
    "params.R": _FLOATS,
    "params.beta": _FLOATS,
    "params.n": _INTS,
    "params.schedule": _FLOATS,
    "params.k": _FLOATS,
    "params.eps": _FLOATS,
    "params.epsilon": _FLOATS,
    "params.lambda": _FLOATS,
    "params.zeta": _FLOAT,
    "params.n_grid": _FLOATS,
    "params.spacing_c": _FLOAT,
    "params.ell": _FLOAT,
    "params.blocks": _INTS,
    "params.calibration_paths": _INT,
    "params.tilt": _FLOATS,
    "params.tilt_paths": _INT,
    "params.drift": _STR,
}


def _parse_value(kind, raw):
    if isinstance(raw, (list, tuple)):
        items = list(raw)
    else:
        items = [s.strip() for s in str(raw).split(",") if s.strip()]
    if kind == _STR:
        return str(raw).strip()
    if kind == _BOOL:
        s = str(raw).strip().lower()
        if s in ("true", "yes", "1", "on"):
            return True
        if s in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == _INT:
        v = float(raw)
        if v != int(v):
            raise ValueError(f"not an integer: {raw!r}")
        return int(v)
    if kind == _FLOAT:
        return float(raw)
    if kind == _FLOATS:
        return tuple(float(x) for x in items)
    if kind == _INTS:
        out = []
        for x in items:
            v = float(x)
            if v != int(v):
                raise ValueError(f"not an integer: {x!r}")
            out.append(int(v))
        return tuple(out)
    raise AssertionError(kind)


def _flatten(obj, prefix=""):
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def read_pairs(text):
    """Raw ``(key, value)`` mapping from either input format, plus syntax errors."""
    errors = []
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return {k: v for k, v in _flatten(json.loads(text)).items()}, errors
        except json.JSONDecodeError as exc:
            return {}, [f"invalid JSON: {exc}"]
    pairs, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        full = f"{section}.{key}" if section and "." not in key else key
        if full in pairs:
            errors.append(f"line {lineno}: duplicate key {full!r}")
        pairs[full] = value
    return pairs, errors


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    t: float
    paths: int
    base_seed: int
    dx: float
    dt: float
    length: float | None
    sigma: object
    params: dict = field(default_factory=dict)
    canonical: str = ""

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical.encode("utf-8")).hexdigest()

    def param(self, name, default=None):
        return self.params.get(name, default)

    def with_seed(self, seed):
        """Copy with a new base seed; the canonical text (and hash) follow."""
        lines = [l for l in self.canonical.splitlines() if not l.startswith("base_seed=")]
        lines.append(f"base_seed={int(seed)}")
        return replace(self, base_seed=int(seed), canonical="\n".join(sorted(lines)) + "\n")

    def grid(self, length=None, t_end=None) -> GridSpec:
        L = self.length if self.length is not None else length
        if L is None:
            L = domain_length(self.t)
        return GridSpec.from_resolution(L, self.dx, t_end or self.t, self.dt)


def canonical_text(values):
    """One ``key=value`` line per key, sorted; floats in 17 significant digits."""
    from .io import fmt_float

    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = fmt_float(v)
        elif isinstance(v, tuple):
            s = ",".join(fmt_float(x) if isinstance(x, float) else str(x) for x in v)
        else:
            s = str(v)
        lines.append(f"{k}={s}")
    return "\n".join(lines) + "\n"


def _build_sigma(v, errors):
    keys = {k for k in v if k.startswith("sigma.")}
    pam_keys = {"sigma.q", "sigma.case1"} & keys
    bounded_keys = {"sigma.lo", "sigma.hi", "sigma.shape", "sigma.c", "sigma.bounded"} & keys
    if v.get("sigma.case1") and v.get("sigma.bounded"):
        errors.append("conflicting sigma: both case1 and bounded are set")
        return None
    kind = v.get("sigma.kind")
    if kind is None:
        if v.get("sigma.case1") or ("sigma.q" in v and not bounded_keys):
            kind = "pam"
        elif v.get("sigma.bounded") or {"sigma.lo", "sigma.hi"} & keys:
            kind = "bounded"
        elif "sigma.c" in v:
            kind = "constant"
        else:
            errors.append("sigma is not specified (set sigma.kind)")
            return None
    try:
        if kind == "pam":
            if bounded_keys:
                errors.append(f"conflicting sigma: pam with bounded keys {sorted(bounded_keys)}")
                return None
            return solver.PAM(v.get("sigma.q", 1.0))
        if kind == "bounded":
            if pam_keys:
                errors.append(f"conflicting sigma: bounded with pam keys {sorted(pam_keys)}")
                return None
            return solver.BoundedPositive(v.get("sigma.lo", 0.5), v.get("sigma.hi", 1.5), v.get("sigma.shape", "tanh"))
        if kind == "constant":
            if pam_keys:
                errors.append(f"conflicting sigma: constant with pam keys {sorted(pam_keys)}")
                return None
            return solver.constant(v.get("sigma.c", 1.0))
    except ConfigurationError as exc:
        errors.append(str(exc))
        return None
    errors.append(f"unknown sigma kind {kind!r}; choose pam, bounded or constant")
    return None


_REQUIRED = {
    "islands": ("params.a", "params.b", "params.R"),
    "good_index": ("params.a", "params.b", "params.R"),
    "exceedance": ("params.alpha", "params.R"),
    "sojourn": ("params.alpha",),
    "comparison": (),
    "small_ball": ("params.eps",),
    "tails": (),
    "coupling": (),
    "correlation_length": ("params.epsilon", "params.delta"),
}


def _check_experiment(exp, v, sigma, errors):
    t = v.get("t")
    if "params.a" in v and "params.b" in v and exp in ("islands", "good_index"):
        a, b = v["params.a"], v["params.b"]
        if not 1 < a < b:
            errors.append(f"island levels need 1 < a < b, got a={a}, b={b}")
    if "params.alpha" in v and not v["params.alpha"] > 0:
        errors.append("alpha must be positive")
    if exp == "sojourn" and "params.alpha" in v and not 0 < v["params.alpha"] < 0.5:
        errors.append("sojourn alpha must lie in (0, 1/2)")
    for key in ("params.eps", "params.epsilon"):
        if key in v and any(not 0 < e for e in v[key]):
            errors.append(f"{key} values must be positive")
    if "params.epsilon" in v and any(e >= 1 for e in v["params.epsilon"]):
        errors.append("params.epsilon values must lie in (0, 1)")
    if "params.delta" in v and any(d <= 0 for d in v["params.delta"]):
        errors.append("params.delta values must be positive")
    if "params.k" in v and exp == "small_ball" and any(not 1 <= k <= 20 for k in v["params.k"]):
        errors.append("negative-moment orders must lie in [1, 20]")
    if exp in ("small_ball", "comparison") and sigma is not None and sigma.value_at_zero != 0:
        errors.append(f"{exp} needs sigma(0) = 0 (use sigma.kind = pam)")
    if "params.drift" in v and v["params.drift"] not in ("kernel", "feedback"):
        errors.append(f"params.drift must be 'kernel' or 'feedback', got {v['params.drift']!r}")
    if "params.R" in v and any(R <= 1 for R in v["params.R"]):
        errors.append("R values must exceed 1")
    # windows must fit in half the domain when the length is pinned
    L = v.get("grid.length")
    betas = list(v.get("params.beta", ())) + list(v.get("params.schedule", ()))
    if L is not None and t is not None:
        for beta in betas:
            if beta > 0 and math.isfinite(beta) and math.sqrt(beta * t) >= L / 2:
                errors.append(f"window sqrt(beta t) = {math.sqrt(beta * t):.4g} for beta={beta} exceeds half the domain {L / 2:.4g}")
    for beta in betas:
        if not beta > 0:
            errors.append(f"beta must be positive, got {beta}")


def parse_config(text) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigurationError` listing every problem."""
    pairs, errors = read_pairs(text)
    values = {}
    for key, raw in pairs.items():
        kind = SCHEMA.get(key)
        if kind is None:
            errors.append(f"unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(kind, raw)
        except (TypeError, ValueError) as exc:
            errors.append(f"{key}: {exc}")
    for k, d in DEFAULTS.items():
        values.setdefault(k, d)
    exp = values.get("experiment")
    if exp is None:
        errors.append("missing key 'experiment'")
    elif exp not in EXPERIMENTS:
        errors.append(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    else:
        for req in _REQUIRED[exp]:
            if req not in values:
                errors.append(f"experiment {exp} requires {req}")
    t, dx, dt = values["t"], values["grid.dx"], values["grid.dt"]
    if not t > 0:
        errors.append(f"t must be positive, got {t}")
    if not dx > 0 or not dt > 0:
        errors.append("grid.dx and grid.dt must be positive")
    elif dt > dx * dx * (1 + 1e-12):
        errors.append(f"stability rule dt <= dx^2 violated: dt={dt!r}, dx^2={dx * dx!r}")
    elif t > 0 and abs(round(t / dt) * dt - t) > 1e-9 * t:
        errors.append(f"t={t} is not a whole number of steps of dt={dt}")
    if values["paths"] < 1:
        errors.append("paths must be positive")
    if values["base_seed"] < 0:
        errors.append("base_seed must be non-negative")
    if "grid.length" in values and not values["grid.length"] > 0:
        errors.append("grid.length must be positive")
    sigma = _build_sigma(values, errors)
    if exp in EXPERIMENTS:
        _check_experiment(exp, values, sigma, errors)
    if errors:
        raise ConfigurationError("; ".join(errors), errors)
    params = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("params.")}
    return ExperimentConfig(
        experiment=exp,
        t=float(t),
        paths=int(values["paths"]),
        base_seed=int(values["base_seed"]),
        dx=float(dx),
        dt=float(dt),
        length=values.get("grid.length"),
        sigma=sigma,
        params=params,
        canonical=canonical_text(values),
    )
