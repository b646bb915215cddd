"""Scenario parameters and flat key=value config I/O."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    """Malformed scenario file or inconsistent parameter set."""


def _per_device(value, k, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if arr.size == 1:
        arr = np.full(k, float(arr[0]))
    if arr.shape != (k,):
        raise ConfigError(f"{name} must be a scalar or length {k}, got {arr.size} entries")
    return arr


def _point(value, name):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.shape != (2,):
        raise ConfigError(f"{name} must be a 2-d point")
    return (float(arr[0]), float(arr[1]))


@dataclass
class Scenario:
    """Static parameters of one network instance.

    Per-device fields (eps, eh_*, P_circ_bc, p_circ_at, Q, gamma_min)
    accept scalars and broadcast to length K. Distances are meters,
    powers watts, sigma2 is the total noise power over the band.
    """

    K: int = 4
    N: int = 20
    T: float = 1.0
    P_max: float = 1.0
    sigma2: float = 1e-15
    zeta: float = 0.0316
    bandwidth: float = 1e5
    C_cpu: float = 1000.0
    f_max: float = 5e8
    delta: float = 1.0
    eps: object = 1e-26
    eh_a: object = 2.463
    eh_b: object = 1.635
    eh_c: object = 0.826
    P_circ_bc: object = 1e-4
    p_circ_at: object = 5e-3
    Q: object = (1.0, 1.0, 0.0, 0.0)
    gamma_min: object = 2e4
    pb_pos: object = (0.0, 0.0)
    mec_pos: object = (60.0, 0.0)
    ris_pos: object = (30.0, 10.0)
    wd_center: object = (30.0, 0.0)
    wd_radius: float = 5.0
    pl_exp_direct: float = 3.0
    pl_exp_reflected: float = 2.2
    fading: str = "rayleigh"
    rician_k_db: float = 10.0
    penalty_delta: float = 5e5
    curvature_l: float = 2.5e-16
    alpha_step: float = 0.1

    def __post_init__(self):
        self.K = int(self.K)
        self.N = int(self.N)
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.N < 0:
            raise ConfigError("N must be non-negative")
        for name in ("T", "P_max", "sigma2", "bandwidth", "C_cpu", "f_max"):
            if not float(getattr(self, name)) > 0.0:
                raise ConfigError(f"{name} must be positive")
        self.T = float(self.T)
        self.P_max = float(self.P_max)
        self.sigma2 = float(self.sigma2)
        self.bandwidth = float(self.bandwidth)
        self.C_cpu = float(self.C_cpu)
        self.f_max = float(self.f_max)
        self.wd_radius = float(self.wd_radius)
        self.pl_exp_direct = float(self.pl_exp_direct)
        self.pl_exp_reflected = float(self.pl_exp_reflected)
        self.rician_k_db = float(self.rician_k_db)
        self.penalty_delta = float(self.penalty_delta)
        self.curvature_l = float(self.curvature_l)
        self.alpha_step = float(self.alpha_step)
        self.zeta = float(self.zeta)
        self.delta = float(self.delta)
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigError("zeta must lie in (0, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]")
        if self.wd_radius < 0.0:
            raise ConfigError("wd_radius must be non-negative")
        if self.pl_exp_direct <= 0.0 or self.pl_exp_reflected <= 0.0:
            raise ConfigError("path-loss exponents must be positive")
        if not 0.0 < self.alpha_step <= 1.0:
            raise ConfigError("alpha_step must lie in (0, 1]")
        if self.curvature_l <= 0.0:
            raise ConfigError("curvature_l must be positive")
        if self.penalty_delta < 0.0:
            raise ConfigError("penalty_delta must be non-negative")
        if self.fading not in ("rayleigh", "rician"):
            raise ConfigError(f"unknown fading kind {self.fading!r}")
        for name in ("eps", "eh_a", "eh_b", "eh_c", "P_circ_bc", "p_circ_at",
                     "Q", "gamma_min"):
            setattr(self, name, _per_device(getattr(self, name), self.K, name))
        if np.any(self.eps <= 0) or np.any(self.eh_a <= 0) or np.any(self.eh_b <= 0) \
                or np.any(self.eh_c <= 0):
            raise ConfigError("eps and harvester coefficients must be positive")
        # a*c > b keeps the harvester output positive and increasing.
        if np.any(self.eh_a * self.eh_c <= self.eh_b):
            raise ConfigError("harvester coefficients must satisfy a*c > b")
        if np.any(self.P_circ_bc < 0) or np.any(self.p_circ_at < 0):
            raise ConfigError("circuit powers must be non-negative")
        if np.any(self.Q < 0) or np.any(self.gamma_min < 0):
            raise ConfigError("Q and gamma_min must be non-negative")
        for name in ("pb_pos", "mec_pos", "ris_pos", "wd_center"):
            setattr(self, name, _point(getattr(self, name), name))

    def replace(self, **overrides) -> "Scenario":
        return dataclasses.replace(self, **overrides)

    def as_mapping(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = [float(x) for x in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def canonical_text(self) -> str:
        return "".join(f"{k}={_format_value(v)}\n" for k, v in self.as_mapping().items())

    def scenario_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


def _format_value(v):
    if isinstance(v, list):
        return "[" + ",".join(repr(float(x)) for x in v) + "]"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"unterminated list: {text!r}")
        body = text[1:-1].strip()
        if not body:
            return []
        return [float(x) for x in body.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_overrides(pairs) -> dict:
    """Parse `key=value` strings (the --set flag) into a mapping."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, val = pair.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"override {pair!r} has an empty key")
        out[key] = _parse_value(val)
    return out


def scenario_from_mapping(mapping) -> Scenario:
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        return Scenario(**mapping)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    mapping = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, _, val = line.partition("=")
            mapping[key.strip()] = _parse_value(val)
    return scenario_from_mapping(mapping)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(scenario.canonical_text())


def default_scenario(**overrides) -> Scenario:
    sc = Scenario()
    return sc.replace(**overrides) if overrides else sc
