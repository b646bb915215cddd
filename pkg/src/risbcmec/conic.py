"""First-order solver for concave programs over unit-diagonal PSD matrices.

The feasible set is {X hermitian PSD, diag(X) = d} intersected with concave
inequality constraints expr_i(X) >= 0, where each expression is affine in X
plus a weighted sum of log2 terms of affine maps. Projected gradient ascent
with a backtracking line search stays on the cone-slice intersection via
alternating projections (PSD clamp, then diagonal refill, swept until the
pinned iterate is PSD to tolerance); the inequality rows enter through an
exact penalty w * sum_i min(0, expr_i(X)) whose weight grows whenever the
ascent stalls while rows are still violated. Steps are seeded by a
power-iteration estimate of the penalized objective's curvature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

_LN2 = np.log(2.0)
_LOG_FLOOR = 1e-12


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def project_psd(m: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix to the hermitian part of m."""
    h = hermitian_part(np.asarray(m))
    vals, vecs = np.linalg.eigh(h)
    vals = np.maximum(vals, 0.0)
    return hermitian_part((vecs * vals) @ vecs.conj().T)


def leading_eigvec(m: np.ndarray):
    """(eigenvalue, unit eigenvector) of the largest eigenvalue."""
    vals, vecs = np.linalg.eigh(hermitian_part(m))
    return float(vals[-1]), vecs[:, -1]


def spectral_norm(m: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(hermitian_part(m))
    return float(max(abs(vals[0]), abs(vals[-1])))


def norms(m: np.ndarray):
    """(nuclear, spectral, leading eigenvector) of a hermitian matrix.

    Nuclear is the sum of absolute eigenvalues (singular values for the
    hermitian case); for PSD inputs it equals the trace.
    """
    vals, vecs = np.linalg.eigh(hermitian_part(m))
    nuclear = float(np.sum(np.abs(vals)))
    lead = int(np.argmax(np.abs(vals)))
    return nuclear, float(abs(vals[lead])), vecs[:, lead]


@dataclass
class ConicExpr:
    """const + Re tr(mat X) + sum_j w_j log2(off_j + Re tr(A_j X)).

    Log weights must be nonnegative so the expression is concave in X.
    Arguments falling below a small floor are clamped with zero gradient.
    """

    mat: np.ndarray
    const: float = 0.0
    logs: list = field(default_factory=list)   # (weight, offset, A)

    def value(self, x: np.ndarray) -> float:
        v = self.const + float(np.real(np.trace(self.mat @ x)))
        for w, off, a in self.logs:
            arg = off + float(np.real(np.trace(a @ x)))
            v += w * np.log2(max(arg, _LOG_FLOOR))
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.mat.astype(complex).copy()
        for w, off, a in self.logs:
            arg = off + float(np.real(np.trace(a @ x)))
            if arg > _LOG_FLOOR:
                g = g + (w / (arg * _LN2)) * a
        return hermitian_part(g)


@dataclass
class ConicProblem:
    objective: ConicExpr
    constraints: list
    diag: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size


@dataclass
class ConicConfig:
    penalty0: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    max_iters: int = 5000
    tol_rel: float = 1e-6
    tol_feas: float = 1e-5
    proj_sweeps: int = 3
    stall_window: int = 25
    check_grads: bool = True


@dataclass
class ConicResult:
    x: np.ndarray
    objective: float
    max_violation: float
    feasible: bool
    iterations: int
    converged: bool
    penalty: float
    grad_check: float = 0.0
    trace: list = field(default_factory=list)


class _Stacked:
    """Vectorized evaluator over [objective] + constraints (row 0 = objective).

    The solver's inner loop needs every expression value (and every
    rotation slope) per trial; evaluating ConicExpr objects one by one in
    Python dominates the runtime, so the affine parts and log arguments
    are stacked once and evaluated with batched einsums.
    """

    def __init__(self, problem: ConicProblem):
        exprs = [problem.objective] + list(problem.constraints)
        mats = np.stack([np.asarray(e.mat, dtype=complex) for e in exprs])
        self.mats = 0.5 * (mats + mats.conj().transpose(0, 2, 1))
        self.consts = np.array([e.const for e in exprs], dtype=float)
        owner, ws, offs, amats = [], [], [], []
        for i, e in enumerate(exprs):
            for w, off, a in e.logs:
                owner.append(i)
                ws.append(w)
                offs.append(off)
                amats.append(np.asarray(a, dtype=complex))
        self.owner = np.asarray(owner, dtype=int)
        self.logw = np.asarray(ws, dtype=float)
        self.off = np.asarray(offs, dtype=float)
        if amats:
            am = np.stack(amats)
            self.amats = 0.5 * (am + am.conj().transpose(0, 2, 1))
        else:
            n = self.mats.shape[1]
            self.amats = np.zeros((0, n, n), dtype=complex)

    def values(self, x: np.ndarray) -> np.ndarray:
        v = self.consts + np.einsum('ipq,qp->i', self.mats, x).real
        if self.amats.shape[0]:
            args = self.off + np.einsum('jpq,qp->j', self.amats, x).real
            np.add.at(v, self.owner,
                      self.logw * np.log2(np.maximum(args, _LOG_FLOOR)))
        return v

    def rot_slopes(self, x: np.ndarray) -> np.ndarray:
        """Per-expression slopes 2 Im diag(grad_i(X) X) of diagonal rotations."""
        dm = np.einsum('ipq,qp->ip', self.mats, x)
        if self.amats.shape[0]:
            args = self.off + np.einsum('jpq,qp->j', self.amats, x).real
            coef = np.where(args > _LOG_FLOOR,
                            self.logw / (np.maximum(args, _LOG_FLOOR) * _LN2),
                            0.0)
            da = coef[:, None] * np.einsum('jpq,qp->jp', self.amats, x)
            np.add.at(dm, self.owner, da)
        return 2.0 * np.imag(dm)


def project_feasible_set(x: np.ndarray, diag: np.ndarray, sweeps: int = 3) -> np.ndarray:
    """Land on {PSD, diag fixed}: alternating projection sweeps, then a
    congruence polish.

    Each sweep clamps to the cone and refills the diagonal. Near rank-one
    points the sweeps alone contract slowly, so after a final clamp the
    diagonal is restored by a congruence rescale D X D, which keeps the
    cone exactly and costs one more pass. Points already in the set map to
    themselves.
    """
    out = np.asarray(x, dtype=complex)
    d = np.asarray(diag, dtype=float)
    for _ in range(max(sweeps, 1)):
        out = project_psd(out)
        np.fill_diagonal(out, d)
    out = project_psd(out)
    cur = np.real(np.diag(out)).copy()
    dead = cur <= 1e-12 * np.maximum(d, 1e-30)
    if np.any(dead):
        idx = np.where(dead)[0]
        out[idx, :] = 0.0
        out[:, idx] = 0.0
        out[idx, idx] = d[idx]
        cur[dead] = d[dead]
    scale = np.sqrt(d / np.maximum(cur, 1e-300))
    out = out * np.outer(scale, scale)
    np.fill_diagonal(out, d)
    return hermitian_part(out)


def _violations(problem: ConicProblem, x: np.ndarray) -> np.ndarray:
    return np.array([c.value(x) for c in problem.constraints]) \
        if problem.constraints else np.zeros(0)


def _penalized(problem: ConicProblem, x: np.ndarray, w: float):
    """(objective + w * sum of row shortfalls, row values)."""
    vals = _violations(problem, x)
    pen = float(np.sum(np.minimum(0.0, vals)))
    return problem.objective.value(x) + w * pen, vals


def _penalized_grad(problem: ConicProblem, x: np.ndarray, w: float,
                    vals: np.ndarray) -> np.ndarray:
    g = problem.objective.grad(x)
    for viol, cons in zip(vals, problem.constraints):
        if viol < 0.0:
            g = g + w * cons.grad(x)
    return g


def _ascent_direction(problem: ConicProblem, x: np.ndarray, w: float,
                      vals: np.ndarray, act_tol: float) -> np.ndarray:
    """Steepest supergradient of the penalized objective.

    Strictly violated rows push back with weight w. Rows sitting on their
    boundary (|value| <= act_tol) make the penalty kinked there; the
    steepest choice removes the component of the gradient inside the cone
    of their normals (a small nonnegative least-squares problem), so the
    ascent rides active faces instead of stalling against them.
    """
    g = problem.objective.grad(x)
    normals = []
    for viol, cons in zip(vals, problem.constraints):
        if viol < -act_tol:
            g = g + w * cons.grad(x)
        elif viol <= act_tol:
            normals.append(cons.grad(x))
    if not normals:
        return g
    cols = np.stack([np.concatenate([m.real.ravel(), m.imag.ravel()])
                     for m in normals], axis=1)
    rhs = -np.concatenate([g.real.ravel(), g.imag.ravel()])
    # KKT of the NNLS problem gives <grad r_i, d> >= 0 on every active row,
    # so d points into the cone the rows carve out (no first-order dip).
    lam, _ = nnls(cols, rhs)
    return g + sum(lm * m for lm, m in zip(lam, normals))


def _rotation_direction(st: _Stacked, x: np.ndarray, w: float,
                        vals: np.ndarray, act_tol: float) -> np.ndarray:
    """Steepest diagonal-rotation direction (phi dot), riding active rows.

    The cone slice {PSD, diag = d} is invariant under diagonal unitaries,
    so X -> U X U^H moves exactly within it with no projection; at extreme
    points of the slice, where the PSD clamp kills off-face components of
    ordinary gradient steps at first order, these rotations are the motions
    that survive. The kink handling mirrors _ascent_direction on the
    rotation coordinates.
    """
    slopes = st.rot_slopes(x)
    g = slopes[0].copy()
    normals = []
    for viol, s in zip(vals, slopes[1:]):
        if viol < -act_tol:
            g = g + w * s
        elif viol <= act_tol:
            normals.append(s)
    if normals:
        cols = np.stack(normals, axis=1)
        lam, _ = nnls(cols, -g)
        g = g + cols @ lam
    return g


def _line_search(st: _Stacked, x: np.ndarray, fval: float,
                 fence: float, eta: float, make_trial, halvings: int = 40):
    """Backtrack over eta; accept an objective gain with rows inside the fence."""
    for _ in range(halvings):
        trial = make_trial(eta)
        allv = st.values(trial)
        if _row_violation(allv[1:]) <= fence \
                and allv[0] > fval + 1e-15 * max(1.0, abs(fval)):
            return trial, float(allv[0]), allv[1:], eta
        eta *= 0.5
        if eta < 1e-18:
            break
    return None


def _repay_debt(st: _Stacked, x: np.ndarray, fval: float,
                vals: np.ndarray, cfg: "ConicConfig", target: float,
                max_calls: int = 40):
    """Repeated restorative rotations until row debt is at most target."""
    for _ in range(max_calls):
        if _row_violation(vals) <= target:
            break
        fix = _restore_rotation(st, x, fval, vals, cfg)
        if fix is None:
            break
        x, fval, vals = fix
    return x, fval, vals


def _restore_rotation(st: _Stacked, x: np.ndarray, fval: float,
                      vals: np.ndarray, cfg: "ConicConfig"):
    """One rotation step repaying row debt, objective and actives ridden.

    Fenced line searches leave rows hovering at their worst allowed value;
    that debt throttles every later step because the fence budget is spent.
    A diagonal rotation raising the indebted rows, constrained (via the
    same NNLS kink handling) to not decrease the objective or the other
    near-active rows, refills the budget. Returns (x, fval, vals) or None.
    """
    act = cfg.tol_feas
    slopes = st.rot_slopes(x)
    g = None
    rides = [slopes[0]]
    for viol, s in zip(vals, slopes[1:]):
        if viol < -0.25 * act:
            g = s if g is None else g + s
        elif viol <= act:
            rides.append(s)
    if g is None:
        return None
    cols = np.stack(rides, axis=1)
    lam, _ = nnls(cols, -g)
    d = g + cols @ lam
    dmax = float(np.max(np.abs(d)))
    if dmax <= 1e-15:
        return None
    debt = float(np.sum(np.minimum(0.0, vals)))
    worst = _row_violation(vals)
    eta = min(1.0, 0.5 * np.pi) / dmax
    for _ in range(30):
        u = np.exp(1j * eta * d)
        trial = x * np.outer(u, u.conj())
        allv = st.values(trial)
        if float(np.sum(np.minimum(0.0, allv[1:]))) > 0.95 * debt \
                and _row_violation(allv[1:]) <= worst + 1e-12 \
                and allv[0] >= fval - 1e-12 * max(1.0, abs(fval)):
            return trial, float(allv[0]), allv[1:]
        eta *= 0.5
    return None


def _restore_rows(problem: ConicProblem, x: np.ndarray, diag: np.ndarray,
                  cfg: "ConicConfig", max_steps: int = 30):
    """Pull mildly violated rows back to feasibility, objective ignored.

    Ascends sum_i min(0, r_i(X)) on the cone-slice set. Face-riding leaves
    violations of the order of the step curvature; restoring them here is
    far cheaper than escalating the penalty weight, which just crushes the
    ascent that produced them.
    """
    vals = _violations(problem, x)
    cur = float(np.sum(np.minimum(0.0, vals)))
    eta = None
    for _ in range(max_steps):
        if _row_violation(vals) <= cfg.tol_feas:
            break
        g = None
        for viol, cons in zip(vals, problem.constraints):
            if viol < 0.0:
                g = cons.grad(x) if g is None else g + cons.grad(x)
        gnorm = float(np.linalg.norm(g)) if g is not None else 0.0
        if gnorm <= 1e-15:
            break
        if eta is None:
            eta = 1.0 / gnorm
        improved = False
        for _ in range(25):
            trial = project_feasible_set(x + eta * g, diag, cfg.proj_sweeps)
            vtrial = _violations(problem, trial)
            shortfall = float(np.sum(np.minimum(0.0, vtrial)))
            if shortfall > cur + 1e-15 * max(1.0, abs(cur)):
                x, vals, cur = trial, vtrial, shortfall
                improved = True
                eta *= 2.0
                break
            eta *= 0.5
        if not improved:
            break
    return x, vals


def _lipschitz_estimate(problem: ConicProblem, x: np.ndarray, w: float,
                        vals: np.ndarray, iters: int = 6) -> float:
    """Power iteration on the penalized gradient's difference quotients.

    The set of penalized rows is frozen at x so boundary rows do not
    inject their full weight into the quotient and dwarf the estimate.
    """
    rng = np.random.default_rng(54321)
    n = x.shape[0]
    v = hermitian_part(rng.standard_normal((n, n))
                       + 1j * rng.standard_normal((n, n)))
    nv = float(np.linalg.norm(v))
    if nv <= 0.0:
        return 1.0
    v = v / nv
    active = [cons for viol, cons in zip(vals, problem.constraints)
              if viol < 0.0]

    def frozen_grad(y):
        g = problem.objective.grad(y)
        for cons in active:
            g = g + w * cons.grad(y)
        return g

    g0 = frozen_grad(x)
    eps = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    lip = 0.0
    for _ in range(iters):
        hv = (frozen_grad(x + eps * v) - g0) / eps
        lip = float(np.linalg.norm(hv))
        if lip <= 1e-12:
            break
        v = hv / lip
    return max(lip, 1e-12)


def _directional_grad_err(expr: ConicExpr, x: np.ndarray, rng) -> float:
    """Relative error of the analytic gradient along one random direction."""
    n = x.shape[0]
    d = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    d = hermitian_part(d)
    np.fill_diagonal(d, 0.0)    # the diagonal is pinned by the feasible set
    nd = float(np.linalg.norm(d))
    if nd <= 0.0:
        return 0.0
    d /= nd
    an = float(np.real(np.trace(expr.grad(x) @ d)))
    err = np.inf
    for t in (1e-5 * max(1.0, float(np.linalg.norm(x))), 1e-7):
        fd = (expr.value(x + t * d) - expr.value(x - t * d)) / (2.0 * t)
        den = max(abs(an), abs(fd), 1e-12 * max(1.0, abs(expr.value(x))))
        err = min(err, abs(fd - an) / den)
    return float(err)


def _check_gradients(problem: ConicProblem, x: np.ndarray) -> float:
    """Validate every evaluator against central differences at the start."""
    rng = np.random.default_rng(12345)
    worst = 0.0
    for expr in [problem.objective] + list(problem.constraints):
        for _ in range(2):
            worst = max(worst, _directional_grad_err(expr, x, rng))
    if worst > 1e-5:
        raise ValueError(f"gradient evaluator disagrees with finite "
                         f"differences (relative error {worst:.2e})")
    return worst


def _row_violation(vals: np.ndarray) -> float:
    return float(max(0.0, -np.min(vals))) if vals is not None and vals.size \
        else 0.0


def solve(problem: ConicProblem, x0: np.ndarray = None,
          config: ConicConfig = None) -> ConicResult:
    cfg = config or ConicConfig()
    n = problem.n
    diag = np.asarray(problem.diag, dtype=float)
    seed = np.eye(n, dtype=complex) * diag if x0 is None \
        else np.asarray(x0, dtype=complex)
    x = project_feasible_set(seed, diag, cfg.proj_sweeps)
    grad_check = _check_gradients(problem, x) if cfg.check_grads else 0.0

    # Exact penalty on the rows needs w above the objective's gradient
    # scale or the pushback never wins; it only acts below the fence.
    w = max(cfg.penalty0,
            2.0 * float(np.linalg.norm(problem.objective.grad(x))))
    st = _Stacked(problem)
    vals = st.values(x)[1:]
    if _row_violation(vals) > cfg.tol_feas:
        x, vals = _restore_rows(problem, x, diag, cfg, max_steps=200)
    rows = _row_violation(vals)
    fval = float(st.values(x)[0])
    # The caller's start is often the previous (feasible) iterate; track
    # the best row-feasible point so the result never regresses below it.
    best = (fval, x.copy(), rows) if rows <= cfg.tol_feas else None

    eta0 = 1.0 / _lipschitz_estimate(problem, x, w, vals)
    eta = eta0
    trace = [fval]
    stall = 0
    it = 0
    converged = False

    eta_rot = None
    prefer_rot = False
    # Fence slack ratchets at most 1e-12 per accepted step; the 1% headroom
    # on the feasibility flag absorbs the accumulated total.
    feas = cfg.tol_feas * 1.01
    while it < cfg.max_iters:
        it += 1
        if rows > 100.0 * cfg.tol_feas:
            x, fval, vals = _repay_debt(st, x, fval, vals, cfg,
                                        0.5 * cfg.tol_feas)
            rows = _row_violation(vals)
            if rows <= feas and (best is None or fval > best[0]):
                best = (fval, x.copy(), rows)
        # Feasible-point line searches: a trial must keep every row inside
        # the fence AND gain objective. The fence widens geometrically with
        # accepted steps (bigger steps as long as debt stays repayable) but
        # is capped; the repayment pass above pulls the debt back down, and
        # a final pass tightens the returned iterate to tol_feas. Projected
        # gradient steps explore the full slice; diagonal-rotation steps
        # keep ascending at extreme points where the clamp kills the
        # projected step at first order. Prefer whichever worked last.
        fence = min(max(cfg.tol_feas, 2.0 * rows),
                    1000.0 * cfg.tol_feas) + 1e-12
        hit = None
        hit_rot = False
        for kind in (("rot", "grad") if prefer_rot else ("grad", "rot")):
            if kind == "grad":
                d = _ascent_direction(problem, x, w, vals, cfg.tol_feas)
                dn = float(np.linalg.norm(d))
                if dn <= 1e-15:
                    continue
                xc = x
                hit = _line_search(
                    st, x, fval, fence, min(eta, 2.0 * n / dn),
                    lambda e: project_feasible_set(xc + e * d, diag,
                                                   cfg.proj_sweeps))
                if hit is not None:
                    eta = hit[3] * 2.0
                    break
            else:
                phi = _rotation_direction(st, x, w, vals, cfg.tol_feas)
                pmax = float(np.max(np.abs(phi))) if phi.size else 0.0
                if pmax <= 1e-15:
                    continue
                eta_r = min(eta_rot if eta_rot is not None
                            else 1.0 / pmax, 0.5 * np.pi / pmax)
                xc = x

                def rotate(e, xc=xc, phi=phi):
                    u = np.exp(1j * e * phi)
                    return xc * np.outer(u, u.conj())

                hit = _line_search(st, x, fval, fence, eta_r, rotate)
                if hit is not None:
                    eta_rot = hit[3] * 2.0
                    hit_rot = True
                    break
        if hit is not None:
            trial, ftrial, vtrial, _ = hit
            rel = abs(ftrial - fval) / max(1.0, abs(fval))
            x, fval, vals = trial, ftrial, vtrial
            rows = _row_violation(vals)
            trace.append(fval)
            if rows <= feas and (best is None or fval > best[0]):
                best = (fval, x.copy(), rows)
            prefer_rot = hit_rot
            stall = stall + 1 if rel < cfg.tol_rel else 0
            if stall >= cfg.stall_window:
                x, fval, vals = _repay_debt(st, x, fval, vals, cfg,
                                            cfg.tol_feas)
                rows = _row_violation(vals)
                if rows <= feas and (best is None or fval > best[0]):
                    best = (fval, x.copy(), rows)
                converged = rows <= feas
                break
        else:
            if rows > 0.0:
                fix = _restore_rotation(st, x, fval, vals, cfg)
                if fix is not None and _row_violation(fix[2]) < rows:
                    x, fval, vals = fix
                    rows = _row_violation(vals)
                    stall = 0
                    continue
            if rows <= feas:
                if best is None or fval > best[0]:
                    best = (fval, x.copy(), rows)
                converged = True
                break
            # Infeasible hover (restoration at entry fell short): push the
            # rows harder and retry before giving up.
            if w < cfg.penalty_max:
                w *= cfg.penalty_growth
                x, vals = _restore_rows(problem, x, diag, cfg)
                rows = _row_violation(vals)
                fval = float(st.values(x)[0])
                eta, stall = eta0, 0
            else:
                break

    if not converged:
        warnings.warn("iteration cap reached before convergence; returning "
                      "the best iterate", RuntimeWarning, stacklevel=2)
    maxviol = _row_violation(vals)
    if maxviol > cfg.tol_feas:
        x2, f2, v2 = _repay_debt(st, x, fval, vals, cfg, cfg.tol_feas,
                                 max_calls=12)
        if _row_violation(v2) < maxviol:
            x, fval, vals = x2, f2, v2
            maxviol = _row_violation(vals)
    if best is not None and (maxviol > feas or best[0] >= fval):
        obj, x, maxviol = best
        return ConicResult(x, obj, maxviol, True, it, converged, w,
                           grad_check, trace)
    return ConicResult(x, fval, maxviol, maxviol <= feas, it, converged, w,
                       grad_check, trace)
