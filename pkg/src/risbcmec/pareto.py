"""Throughput-energy trade-off: utopia references, the worst-deviation
sweep that traces the Pareto front, and the bits-per-joule maximizer.

The sweep reuses one shared pool of weighted solves per channel draw.
Every scalarized point picks the best answer the pool (plus the two
endpoint solves) can offer, which keeps the eleven points mutually
consistent; a final cross-pollination pass removes any residual
domination noise between them.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .lagrangian import (InfeasibleProblem, SolverConfig, maximize_weighted,
                         solve_energy_min, solve_pareto_point,
                         solve_throughput_max)
from .physics import Allocation, Metrics, system_metrics
from .scenario import Scenario

# A ratio objective stops meaning anything once the rate collapses; one
# bit per block is the smallest answer worth reporting.
MIN_USEFUL_RATE = 1.0


@dataclass
class UtopiaPoint:
    """Componentwise ideal (max rate, min energy); not jointly attainable."""

    r_max: float
    e_min: float
    provenance: dict
    throughput: object = None    # SolveResult behind r_max, if available
    energy: object = None        # SolveResult behind e_min, if available


@dataclass
class ParetoPoint:
    """One sweep point: scalarization weights and the solution found."""

    alpha: float
    beta: float
    chi: float
    metrics: Metrics
    allocation: Allocation
    feasible: bool = True


@dataclass
class DinkelbachResult:
    """Outcome of the ratio iteration for sum-rate over consumed energy."""

    ee: float
    rate_bits: float
    energy_J: float
    allocation: Allocation
    rounds: int
    converged: bool
    degenerate: bool
    trace: list = field(default_factory=list)   # (round, ratio, residual)


def compute_utopia(channels, theta, scenario: Scenario,
                   cfg: SolverConfig = None) -> UtopiaPoint:
    """Solve both single-objective endpoints for a fixed phase profile."""
    cfg = cfg or SolverConfig()
    thr = solve_throughput_max(channels, theta, scenario, cfg)
    if not thr.feasible:
        raise InfeasibleProblem("throughput endpoint infeasible")
    en = solve_energy_min(channels, theta, scenario, cfg)
    if not en.feasible:
        raise InfeasibleProblem("energy endpoint infeasible")
    prov = {"throughput": thr.status, "energy": en.status}
    return UtopiaPoint(float(thr.rate_bits), float(en.energy_J), prov, thr, en)


def _candidate_pool(channels, theta, scenario, cfg, utopia, pool_size):
    """Allocations worth offering to every sweep point.

    The endpoint solutions anchor alpha = 1 and alpha = 0; a geometric
    ladder of rate-minus-weighted-energy solves covers the knee. Weights
    run from "energy barely matters" (0.1 bits-per-joule slopes at the
    throughput end) to well past the slope at the energy end.
    """
    pool = []
    for res in (utopia.throughput, utopia.energy):
        if res is not None and getattr(res, "feasible", False):
            pool.append(res.allocation)
    if pool_size <= 0:
        return pool
    r_norm = max(abs(utopia.r_max), 1.0)
    e_norm = max(abs(utopia.e_min), 1e-9)
    e_hi = e_norm
    if utopia.throughput is not None:
        e_hi = max(e_hi, float(utopia.throughput.energy_J))
    lo = 0.1 * r_norm / e_hi
    hi = max(30.0 * r_norm / e_norm, 10.0 * lo)
    for w in np.geomspace(lo, hi, pool_size):
        res = maximize_weighted(channels, theta, scenario, float(w), cfg)
        if res.feasible:
            pool.append(res.allocation)
    return pool


def _chi_of(alpha, beta, m, utopia):
    r_norm = max(abs(utopia.r_max), 1.0)
    e_norm = max(abs(utopia.e_min), 1e-9)
    devs = [0.0]
    if alpha > 0.0:
        devs.append(alpha * (utopia.r_max - m.R_sum) / r_norm)
    if beta > 0.0:
        devs.append(beta * (m.E_total - utopia.e_min) / e_norm)
    chi = max(devs)
    tie = alpha * m.R_sum / r_norm - beta * m.E_total / e_norm
    return chi, tie


def _repair_domination(points, utopia):
    """Let every point borrow a better answer found for another alpha.

    Selection by worst deviation over one shared candidate set cannot
    produce cross-dominated points; the per-point polish step can, by a
    hair. Re-offering each final answer to each scalarization removes it.
    """
    changed = True
    while changed:
        changed = False
        for donor in points:
            if not donor.feasible:
                continue
            for pt in points:
                if pt is donor or not pt.feasible:
                    continue
                chi, tie = _chi_of(pt.alpha, pt.beta, donor.metrics, utopia)
                cur_chi, cur_tie = _chi_of(pt.alpha, pt.beta, pt.metrics, utopia)
                if (chi, -tie) < (cur_chi, -cur_tie):
                    pt.chi = chi
                    pt.metrics = donor.metrics
                    pt.allocation = donor.allocation
                    changed = True
    return points


def tchebycheff_sweep(channels, theta, scenario: Scenario, alpha_grid=None,
                      cfg: SolverConfig = None, utopia: UtopiaPoint = None,
                      pool_size: int = 14):
    """Trace the front for alpha in [0, 1]; infeasible points are flagged.

    Returns ParetoPoint entries sorted by alpha. alpha weighs the rate
    shortfall, 1 - alpha the energy excess, both normalized by the utopia
    coordinates.
    """
    cfg = cfg or SolverConfig()
    if alpha_grid is None:
        alpha_grid = np.linspace(0.0, 1.0, 11)
    alphas = sorted(float(a) for a in np.atleast_1d(alpha_grid))
    for a in alphas:
        if a < -1e-12 or a > 1.0 + 1e-12:
            raise ValueError("alpha grid entries must lie in [0, 1]")
    if utopia is None:
        utopia = compute_utopia(channels, theta, scenario, cfg)
    pool = _candidate_pool(channels, theta, scenario, cfg, utopia, pool_size)

    points = []
    for a in alphas:
        a = min(max(a, 0.0), 1.0)
        res = solve_pareto_point(a, 1.0 - a, utopia, channels, theta, scenario,
                                 cfg, candidates=pool if pool else None)
        if res.feasible:
            m = system_metrics(res.allocation, channels, theta, scenario)
            points.append(ParetoPoint(a, 1.0 - a, float(res.chi), m,
                                      res.allocation, True))
        else:
            zeros = Allocation.zeros(scenario)
            m = system_metrics(zeros, channels, theta, scenario)
            points.append(ParetoPoint(a, 1.0 - a, float("nan"), m, zeros,
                                      False))
    return _repair_domination(points, utopia)


def dinkelbach_ee(channels, theta, scenario: Scenario, cfg: SolverConfig = None,
                  max_rounds: int = 30, tol: float = 1e-6,
                  init_alloc: Allocation = None) -> DinkelbachResult:
    """Maximize sum bits per joule consumed via the classic ratio iteration.

    Each round solves max R - ratio * E with the incumbent ratio, then
    updates the ratio to R/E of the solution. Rounds are chained through
    the floor allocation so the parametric value cannot regress. When the
    iterates drive the rate below one bit the ratio is diverging (energy
    falls faster than rate); the result is flagged degenerate instead of
    chasing an unbounded supremum.
    """
    cfg = cfg or SolverConfig()
    ratio = 0.0
    floor = init_alloc
    best = None
    trace = []
    converged = False
    degenerate = False
    rounds = 0
    for j in range(max_rounds):
        res = maximize_weighted(channels, theta, scenario, ratio, cfg,
                                floor_alloc=floor)
        rounds = j + 1
        if not res.feasible:
            break
        r, e = float(res.rate_bits), float(res.energy_J)
        residual = r - ratio * e
        trace.append((j, ratio, residual))
        if r < MIN_USEFUL_RATE or e <= 0.0:
            degenerate = True
            break
        ee = r / e
        if best is None or ee > best[0]:
            best = (ee, res.allocation, r, e)
        if residual <= tol * max(1.0, ratio * e):
            converged = True
            break
        if abs(ee - ratio) <= 1e-4 * max(abs(ratio), 1.0):
            # ratio stalled within solver noise; further rounds cannot move
            converged = True
            break
        ratio = ee
        floor = res.allocation
    if best is None:
        zeros = Allocation.zeros(scenario)
        return DinkelbachResult(0.0, 0.0, 0.0, zeros, rounds, False,
                                degenerate, trace)
    ee, alloc, r, e = best
    return DinkelbachResult(float(ee), r, e, alloc, rounds, converged,
                            degenerate, trace)


def write_front_csv(path, points):
    """One row per sweep point; energy efficiency is the achieved R/E."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "chi", "R_sum_bits", "E_total_J",
                         "EE_bits_per_J"])
        for p in points:
            writer.writerow([p.alpha, p.chi, p.metrics.R_sum,
                             p.metrics.E_total, p.metrics.EE])
