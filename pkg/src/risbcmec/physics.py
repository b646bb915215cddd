"""Per-block rates, energy bookkeeping and feasibility residuals.

All channel rates carry the bandwidth factor and integrate over their
slot, so every rate-like quantity below is in bits per block. Computed
bits from the local CPU count toward the same totals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet, cascaded_gains
from .scenario import Scenario

_LN2 = np.log(2.0)


@dataclass
class Allocation:
    """Primal operating point: slot lengths, powers, reflection, CPU speed.

    s = rho * t_b is the backscattered energy-time share, z = p * t_o the
    active-transmission energy. tau is the local-computing span.
    """

    t_b: np.ndarray
    t_o: np.ndarray
    p: np.ndarray
    rho: np.ndarray
    f: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        for name in ("t_b", "t_o", "p", "rho", "f", "tau"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        k = self.t_b.size
        if any(getattr(self, n).size != k for n in ("t_o", "p", "rho", "f", "tau")):
            raise ValueError("allocation fields must share one length")

    @property
    def K(self) -> int:
        return self.t_b.size

    @property
    def s(self) -> np.ndarray:
        return self.rho * self.t_b

    @property
    def z(self) -> np.ndarray:
        return self.p * self.t_o

    @classmethod
    def zeros(cls, scenario: Scenario) -> "Allocation":
        k = scenario.K
        z = np.zeros(k)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(),
                   np.full(k, scenario.T))

    def copy(self) -> "Allocation":
        return Allocation(self.t_b.copy(), self.t_o.copy(), self.p.copy(),
                          self.rho.copy(), self.f.copy(), self.tau.copy())


@dataclass
class Metrics:
    """Block outcome: totals plus the per-device breakdown."""

    R_sum: float
    E_total: float
    EE: float
    bits_bc: np.ndarray
    bits_at: np.ndarray
    bits_local: np.ndarray
    E_bc: np.ndarray
    E_at_local: np.ndarray
    E_harvested: np.ndarray


def eh_power(x, a, b, c):
    """Harvested power for incident RF power x, rational saturation model.

    f(x) = (a x + b)/(x + c) - b/c; f(0) = 0, f(inf) = a - b/c.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("incident power must be non-negative")
    out = (a * x + b) / (x + c) - b / c
    return out if out.ndim else float(out)


def _slot_rate(t, energy_like, sc):
    """B * t * log2(1 + energy_like / (t * sigma2)) with the t -> 0 limit."""
    t = np.asarray(t, dtype=float)
    e = np.asarray(energy_like, dtype=float)
    safe_t = np.where(t > 0.0, t, 1.0)
    snr = np.where(t > 0.0, e / (safe_t * sc.sigma2), 0.0)
    return sc.bandwidth * np.where(t > 0.0, t * np.log2(1.0 + snr), 0.0)


def bc_rate(t_b, s, g2, h2, sc: Scenario):
    """Backscatter bits over a slot of length t_b with reflected share s."""
    return _slot_rate(t_b, sc.zeta * np.asarray(s) * sc.P_max * g2 * h2, sc)


def at_rate(t_o, z, h2, sc: Scenario):
    """Active-transmission bits over a slot of length t_o with energy z."""
    return _slot_rate(t_o, np.asarray(z) * h2, sc)


def local_bits(f, tau, sc: Scenario):
    return np.asarray(tau, dtype=float) * np.asarray(f, dtype=float) / sc.C_cpu


def local_energy(f, tau, sc: Scenario):
    return sc.eps * np.asarray(f, dtype=float) ** 3 * np.asarray(tau, dtype=float)


def harvested_energy(alloc: Allocation, g2, sc: Scenario):
    """Energy harvested per device: own backscatter slot plus all others'.

    During its own slot a device harvests the non-reflected share
    (1 - rho) of the incident power; during other devices' slots it sees
    the full beacon power.
    """
    g2 = np.asarray(g2, dtype=float)
    own = alloc.t_b * eh_power((1.0 - alloc.rho) * sc.P_max * g2, sc.eh_a, sc.eh_b, sc.eh_c)
    cross_rate = eh_power(sc.P_max * g2, sc.eh_a, sc.eh_b, sc.eh_c)
    other_time = np.sum(alloc.t_b) - alloc.t_b
    return own + cross_rate * other_time


def energy_consumed(alloc: Allocation, sc: Scenario):
    """Per-device consumed energy, split (backscatter slot, AT + local)."""
    e_bc = sc.P_circ_bc * alloc.t_b
    e_at_local = alloc.z / sc.delta + sc.p_circ_at * alloc.t_o \
        + local_energy(alloc.f, alloc.tau, sc)
    return e_bc, e_at_local


def system_metrics(alloc: Allocation, channels: ChannelSet, theta, sc: Scenario) -> Metrics:
    g, h = cascaded_gains(channels, theta)
    return metrics_from_gains(alloc, np.abs(g) ** 2, np.abs(h) ** 2, sc)


def metrics_from_gains(alloc: Allocation, g2, h2, sc: Scenario) -> Metrics:
    bits_bc = bc_rate(alloc.t_b, alloc.s, g2, h2, sc)
    bits_at = at_rate(alloc.t_o, alloc.z, h2, sc)
    bits_loc = local_bits(alloc.f, alloc.tau, sc)
    e_bc, e_at_local = energy_consumed(alloc, sc)
    e_h = harvested_energy(alloc, g2, sc)
    r_sum = float(np.sum(bits_bc + bits_at + bits_loc))
    e_total = float(np.sum(e_bc + e_at_local))
    ee = r_sum / e_total if e_total > 0.0 else 0.0
    return Metrics(r_sum, e_total, ee, bits_bc, bits_at, bits_loc,
                   e_bc, e_at_local, e_h)


@dataclass
class FeasibilityReport:
    """Signed constraint residuals; positive means violated by that much."""

    residuals: dict
    max_violation: float
    worst: str
    feasible: bool


def check_feasible(alloc: Allocation, channels: ChannelSet, theta, sc: Scenario,
                   tol: float = 1e-9) -> FeasibilityReport:
    g, h = cascaded_gains(channels, theta)
    g2, h2 = np.abs(g) ** 2, np.abs(h) ** 2
    m = metrics_from_gains(alloc, g2, h2, sc)
    res = {
        "time_budget": float(np.sum(alloc.t_b + alloc.t_o) - sc.T),
        "rate_floor": sc.gamma_min - (m.bits_bc + m.bits_at + m.bits_local),
        "energy_causality": (m.E_bc + m.E_at_local) - (sc.Q + m.E_harvested),
        "reflect_share": alloc.s - alloc.t_b,
        "rho_box_low": -alloc.rho,
        "rho_box_high": alloc.rho - 1.0,
        "f_cap": alloc.f - sc.f_max,
        "tau_cap": alloc.tau - sc.T,
        "nonneg_t_b": -alloc.t_b,
        "nonneg_t_o": -alloc.t_o,
        "nonneg_p": -alloc.p,
        "nonneg_f": -alloc.f,
        "nonneg_tau": -alloc.tau,
    }
    worst_name, worst_val = "", -np.inf
    for name, val in res.items():
        v = float(np.max(val))
        if v > worst_val:
            worst_name, worst_val = name, v
    return FeasibilityReport(res, worst_val, worst_name, worst_val <= tol)


def metrics_header(k: int) -> list:
    cols = ["seed", "alpha", "R_sum_bits", "E_total_J", "EE_bits_per_J"]
    per_dev = ["t_b", "t_o", "p", "rho", "f", "bits_bc", "bits_at", "bits_local",
               "E_bc", "E_at_local", "E_harvested"]
    for i in range(k):
        cols += [f"{name}_{i}" for name in per_dev]
    return cols


def metrics_row(seed, alpha, metrics: Metrics, alloc: Allocation) -> list:
    row = [seed, alpha, metrics.R_sum, metrics.E_total, metrics.EE]
    for i in range(alloc.K):
        row += [alloc.t_b[i], alloc.t_o[i], alloc.p[i], alloc.rho[i], alloc.f[i],
                metrics.bits_bc[i], metrics.bits_at[i], metrics.bits_local[i],
                metrics.E_bc[i], metrics.E_at_local[i], metrics.E_harvested[i]]
    return row
