"""Strict-feedback plant, reference signals, gains, and scenario files.

A scenario file is TOML with the sections ``[plant]``, ``[reference]``,
``[gains]``, ``[init]`` and ``[sim]``; expressions are quoted strings.  See
``docs/scenario.md`` for every key.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import exprlang as el
from .errors import ParseError, ValidationError

DEFAULT_DT = 1e-3
DEFAULT_T_END = 30.0
DEFAULT_STRIDE = 10


class Identifier(str, enum.Enum):
    H_PASSIVE = "h-passive"
    H_SWAPPING = "h-swapping"
    X_PASSIVE = "x-passive"
    X_SWAPPING = "x-swapping"

    @classmethod
    def parse(cls, text: str) -> "Identifier":
        key = str(text).strip().lower().replace("_", "-")
        aliases = {"hpassive": "h-passive", "hswapping": "h-swapping", "xpassive": "x-passive",
                   "xswapping": "x-swapping", "h-swap": "h-swapping", "x-swap": "x-swapping"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError("identifier", f"unknown identifier scheme {text!r}", text) from None

    @property
    def is_swapping(self) -> bool:
        return self in (Identifier.H_SWAPPING, Identifier.X_SWAPPING)

    @property
    def is_plant_observer(self) -> bool:
        return self in (Identifier.X_PASSIVE, Identifier.X_SWAPPING)


def state_names(n: int) -> list[str]:
    return [f"x{i}" for i in range(1, n + 1)]


def theta_names(p: int) -> list[str]:
    return [f"thetahat{j}" for j in range(1, p + 1)]


def reference_names(n: int) -> list[str]:
    return [f"r{k}" for k in range(n + 1)]


@dataclass(frozen=True, eq=False)
class Plant:
    """``x_i' = x_{i+1} + phi_i(x1..xi)^T theta``, ``x_n' = u + phi_n(x)^T theta``."""

    n: int
    p: int
    phi: tuple[tuple[el.Expr, ...], ...]
    theta_true: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Reference:
    r_expr: el.Expr
    derivs: tuple[el.Expr, ...]
    yr_expr: el.Expr
    yr_derivs: tuple[el.Expr, ...]

    @classmethod
    def from_exprs(cls, r_expr: el.Expr, yr_expr: el.Expr, n: int) -> "Reference":
        return cls(r_expr, _derivative_chain(r_expr, n), yr_expr, _derivative_chain(yr_expr, n))


def _derivative_chain(e: el.Expr, n: int) -> tuple[el.Expr, ...]:
    chain = [e]
    for _ in range(n):
        chain.append(el.diff(chain[-1], "t"))
    return tuple(chain)


def eval_reference(ref: Reference, t: float, k: int = 0) -> float:
    """k-th time derivative of the constraint boundary r at time t."""
    if not 0 <= k < len(ref.derivs):
        raise ValueError(f"derivative order {k} outside 0..{len(ref.derivs) - 1}")
    return el.evaluate(ref.derivs[k], {"t": t})


def eval_nominal_reference(ref: Reference, t: float, k: int = 0) -> float:
    return el.evaluate(ref.yr_derivs[k], {"t": t})


@dataclass(frozen=True)
class GainConfig:
    c: tuple[float, ...]
    kappa: tuple[float, ...]
    g: tuple[float, ...]
    sigma: float
    gamma: float
    nu: float = 0.0
    k_nominal: tuple[float, ...] = ()

    @property
    def c_min(self) -> float:
        return min(self.c)

    @property
    def kappa_min(self) -> float:
        return min(self.kappa)

    @property
    def g_min(self) -> float:
        """min over i >= 2; g_1 multiplies d(alpha_0)/d(thetahat) = 0 and is inert."""
        return min(self.g[1:]) if len(self.g) > 1 else math.inf


@dataclass(frozen=True, eq=False)
class Scenario:
    plant: Plant
    reference: Reference
    gains: GainConfig
    x0: tuple[float, ...]
    thetahat0: tuple[float, ...]
    identifier: Identifier
    gated: bool
    filter_on: bool
    t_end: float = DEFAULT_T_END
    dt: float = DEFAULT_DT
    stride: int = DEFAULT_STRIDE
    safety_checks: bool = True
    locate_switches: bool = True
    substeps: int | str = "auto"
    name: str = ""
    config: Mapping[str, Any] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def p(self) -> int:
        return self.plant.p

    @property
    def nsteps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def theta_err0(self) -> float:
        return math.dist(self.plant.theta_true, self.thetahat0)

    def fingerprint(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return copy.deepcopy(dict(self.config))

    def with_changes(self, **changes) -> "Scenario":
        """Rebuild with dotted-key overrides, e.g. ``{"gains.sigma": 0.5}``."""
        data = self.to_dict()
        for dotted, value in changes.items():
            section, _, key = dotted.replace("__", ".").partition(".")
            data.setdefault(section, {})[key] = value
        return scenario_from_dict(data, name=self.name)


# --- loading -------------------------------------------------------------------

def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file.

    Raises ``FileNotFoundError`` for a missing file, :class:`ParseError` for
    malformed TOML or expressions, :class:`ValidationError` for a broken
    invariant.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, name=path.stem)


def _section(data, name) -> dict:
    sec = data.get(name)
    if not isinstance(sec, dict):
        raise ParseError(f"missing section [{name}]")
    return sec


def _floats(value, what, length=None) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ValidationError("type", f"{what} must be a list of numbers", value)
    out = tuple(float(v) for v in value)
    if length is not None and len(out) != length:
        raise ValidationError("dimension", f"{what} must have length {length}, got {len(out)}", value)
    if not all(math.isfinite(v) for v in out):
        raise ValidationError("finite", f"{what} must be finite", value)
    return out


def _positive(values, what):
    for v in values:
        if not v > 0:
            raise ValidationError("positivity", f"{what} entries must be > 0", v)


def _parse_expr(text, symbols, what) -> el.Expr:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ParseError(f"{what} must be an expression string")
    return el.parse(text, symbols)


def scenario_from_dict(data: Mapping[str, Any], name: str = "") -> Scenario:
    data = copy.deepcopy(dict(data))
    plant_sec = _section(data, "plant")
    ref_sec = _section(data, "reference")
    gains_sec = _section(data, "gains")
    init_sec = _section(data, "init")
    sim_sec = data.get("sim", {})

    phi_raw = plant_sec.get("phi")
    if not isinstance(phi_raw, list) or not phi_raw:
        raise ValidationError("dimension", "plant.phi must be a non-empty list of rows", phi_raw)
    rows = [[r] if isinstance(r, (str, int, float)) else r for r in phi_raw]
    n = len(rows)
    p = len(rows[0]) if isinstance(rows[0], list) else 0
    if plant_sec.get("n", n) != n:
        raise ValidationError("dimension", f"plant.n = {plant_sec['n']} but phi has {n} rows", plant_sec["n"])
    if p < 1 or any(not isinstance(r, list) or len(r) != p for r in rows):
        raise ValidationError("dimension", "every phi row must have p entries", phi_raw)
    if plant_sec.get("p", p) != p:
        raise ValidationError("dimension", f"plant.p = {plant_sec['p']} but phi rows have {p} entries", plant_sec["p"])

    xs = state_names(n)
    phi = []
    for i, row in enumerate(rows):
        exprs = []
        for j, text in enumerate(row):
            e = _parse_expr(text, xs, f"phi[{i + 1}][{j + 1}]")
            extra = el.free_vars(e) - set(xs[: i + 1])
            if extra:
                raise ValidationError(
                    "strict_feedback",
                    f"phi_{i + 1} may depend on x1..x{i + 1} only, found {sorted(extra)}", text)
            exprs.append(e)
        phi.append(tuple(exprs))
    theta = _floats(plant_sec.get("theta"), "plant.theta", p)

    r_expr = _parse_expr(ref_sec.get("r"), ["t"], "reference.r")
    yr_expr = _parse_expr(ref_sec.get("y_r", "0"), ["t"], "reference.y_r")
    reference = Reference.from_exprs(r_expr, yr_expr, n)

    c = _floats(gains_sec.get("c"), "gains.c", n)
    kappa = _floats(gains_sec.get("kappa"), "gains.kappa", n)
    g = _floats(gains_sec.get("g"), "gains.g", n)
    k_nom = _floats(gains_sec.get("k_nominal", [2.0] * n), "gains.k_nominal", n)
    for vals, what in ((c, "gains.c"), (kappa, "gains.kappa"), (g, "gains.g"), (k_nom, "gains.k_nominal")):
        _positive(vals, what)
    sigma = _floats(gains_sec.get("sigma"), "gains.sigma", 1)[0]
    gamma = _floats(gains_sec.get("gamma"), "gains.gamma", 1)[0]
    nu = _floats(gains_sec.get("nu", 0.0), "gains.nu", 1)[0]
    _positive([sigma], "gains.sigma")
    _positive([gamma], "gains.gamma")
    if nu < 0:
        raise ValidationError("positivity", "gains.nu must be >= 0", nu)
    gains = GainConfig(c, kappa, g, sigma, gamma, nu, k_nom)

    x0 = _floats(init_sec.get("x0"), "init.x0", n)
    thetahat0 = _floats(init_sec.get("thetahat0"), "init.thetahat0", p)

    identifier = Identifier.parse(sim_sec.get("identifier", "h-passive"))
    dt = _floats(sim_sec.get("dt", DEFAULT_DT), "sim.dt", 1)[0]
    t_end = _floats(sim_sec.get("t_end", DEFAULT_T_END), "sim.t_end", 1)[0]
    stride = sim_sec.get("stride", DEFAULT_STRIDE)
    _positive([dt], "sim.dt")
    _positive([t_end], "sim.t_end")
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        raise ValidationError("positivity", "sim.stride must be an integer >= 1", stride)
    substeps = sim_sec.get("substeps", "auto")
    if substeps != "auto" and (isinstance(substeps, bool) or not isinstance(substeps, int) or substeps < 1):
        raise ValidationError("positivity", 'sim.substeps must be "auto" or an integer >= 1', substeps)
    flags = {}
    for key, default in (("gated", None), ("filter", True), ("safety_checks", True), ("locate_switches", True)):
        v = sim_sec.get(key, default)
        if key == "gated" and v is None:
            # adaptation gate defaults on only for h-passive behind the filter
            v = identifier is Identifier.H_PASSIVE and bool(sim_sec.get("filter", True))
        if not isinstance(v, bool):
            raise ValidationError("type", f"sim.{key} must be true or false", v)
        flags[key] = v

    if flags["safety_checks"]:
        h10 = x0[0] - el.evaluate(r_expr, {"t": 0.0})
        if h10 < 0:
            raise ValidationError("h1_nonneg", f"h1(0) = y(0) - r(0) = {h10:.6g} < 0", h10)

    # normalized config drives the fingerprint and rebuilds
    config = {
        "plant": {"n": n, "p": p, "phi": [[el.to_string(e) for e in row] for row in phi], "theta": list(theta)},
        "reference": {"r": el.to_string(r_expr), "y_r": el.to_string(yr_expr)},
        "gains": {"c": list(c), "kappa": list(kappa), "g": list(g), "sigma": sigma, "gamma": gamma,
                  "nu": nu, "k_nominal": list(k_nom)},
        "init": {"x0": list(x0), "thetahat0": list(thetahat0)},
        "sim": {"identifier": identifier.value, "gated": flags["gated"], "filter": flags["filter"],
                "t_end": t_end, "dt": dt, "stride": stride, "safety_checks": flags["safety_checks"],
                "locate_switches": flags["locate_switches"], "substeps": substeps},
    }
    return Scenario(Plant(n, p, tuple(phi), theta), reference, gains, x0, thetahat0, identifier,
                    flags["gated"], flags["filter"], t_end, dt, stride, flags["safety_checks"],
                    flags["locate_switches"], substeps, name, config)
