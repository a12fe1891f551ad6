"""Standard and adversarially robust recourse.

Two solvers are provided:

* :func:`robust_linear_recourse` — exact greedy solution for a linear
  classifier over a linear (or IMF) SCM.  Robustness to every additive
  perturbation with ``|delta|_2 <= eps`` reduces to shifting the decision
  boundary by ``eps * |J^T w|_2``; the remaining problem is an L1 fractional
  knapsack.
* :func:`robust_recourse_pgd` — a penalty-continuation min-max solver for
  any differentiable classifier and SCM.  Each step finds a local worst-case
  perturbation by projected gradient ascent, then takes a projected proximal
  gradient step on the action.

Both solvers work on batches internally; the single-individual functions
are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .actions import (
    NOT_FOUND,
    CostFn,
    FeasibilitySpec,
    NotFound,
    RecourseAction,
    UncertaintySpec,
)
from .model import Classifier, LinearClassifier
from .scm import Scm

__all__ = [
    "RecourseAction",
    "FeasibilitySpec",
    "UncertaintySpec",
    "CostFn",
    "NotFound",
    "NOT_FOUND",
    "SolverParams",
    "RecourseError",
    "robust_linear_recourse",
    "robust_recourse_pgd",
    "robust_recourse_pgd_batch",
    "inner_maximize",
    "cost_bound_beta",
    "masked_cost_bound_beta",
    "counterfactual",
    "is_valid",
    "standard_recourse",
    "action_objective",
    "solve_recourse_batch",
    "sampled_cost_variation",
]


class RecourseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared helpers


def default_intervened(feas: FeasibilitySpec) -> tuple:
    return tuple(int(i) for i in np.flatnonzero(feas.actionable))


def _cf(scm, x, delta, intervened, theta_full):
    """``CF(CF(x, delta), do(X_I = x'_I + theta))``; ``scm=None`` means IMF."""
    if scm is None:
        out = x
        if delta is not None:
            out = ad.add(out, delta)
        if theta_full is not None:
            mask = np.zeros(np.shape(ad.value_of(x))[-1])
            mask[list(intervened)] = 1.0
            out = ad.add(out, ad.mul(theta_full, mask))
        return out
    n = scm.n
    delta = np.zeros(n) if delta is None else delta
    theta_full = np.zeros(n) if theta_full is None else theta_full
    return scm.apply_action_to_perturbed(x, delta, intervened, theta_full)


def counterfactual(scm, x, action: RecourseAction, delta=None):
    """Counterfactual of ``x`` (optionally perturbed by ``delta``) under ``action``."""
    x = np.asarray(x, dtype=np.float64)
    return np.asarray(_cf(scm, x, delta, action.intervened, action.full_theta(x.shape[-1])))


def is_valid(classifier: Classifier, scm, x, action: RecourseAction, delta=None) -> bool:
    return bool(classifier.predict(counterfactual(scm, x, action, delta)))


def _linear_parts(classifier, scm, n, intervened):
    if not isinstance(classifier, LinearClassifier):
        raise RecourseError("closed-form recourse needs a linear classifier; use robust_recourse_pgd")
    if scm is not None and not scm.is_linear:
        raise RecourseError("closed-form recourse needs a linear SCM; use robust_recourse_pgd")
    w, b_tilde = classifier.half_space()
    if scm is None:
        J = np.eye(n)
        A = np.zeros((n, n))
        A[list(intervened), list(intervened)] = 1.0
    else:
        J = scm.total_effect
        A = scm.action_matrix(intervened)
    return w, b_tilde, J, A


# ---------------------------------------------------------------------------
# closed form


def robust_linear_recourse(classifier: LinearClassifier, scm: Scm | None, x,
                           feas: FeasibilitySpec, unc: UncertaintySpec = UncertaintySpec(0.0),
                           cost: CostFn = CostFn(), intervened: Sequence[int] | None = None):
    """Minimum-L1-cost action that stays valid for every perturbation in the ball.

    Returns a :class:`RecourseAction` (with ``info`` holding ``tight``,
    ``margin`` and ``dual_norm``) or ``NOT_FOUND`` when the feasibility box
    cannot reach the shifted boundary.
    """
    if not cost.is_l1:
        raise RecourseError("closed-form solver supports (weighted) L1 costs only")
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    intervened = default_intervened(feas) if intervened is None else tuple(intervened)
    w, b_tilde, J, A = _linear_parts(classifier, scm, n, intervened)
    coef = A.T @ w  # effect of theta_i on <w, CF(x, a)>
    dual = float(np.linalg.norm(J.T @ w))
    need = b_tilde + unc.epsilon * dual - float(w @ x)
    if unc.epsilon > 0:
        # keep the certified distance strictly above eps despite rounding
        need += 1e-12 * max(1.0, abs(need))
    lo, hi = feas.theta_bounds(x)
    cw = np.ones(n) if cost.weights is None else np.asarray(cost.weights, dtype=np.float64)

    def greedy(target):
        theta = np.zeros(n)
        if target <= 0:
            return theta, True, target == 0
        ratio = np.array([abs(coef[i]) / cw[i] if i in intervened else 0.0 for i in range(n)])
        order = sorted((i for i in intervened if coef[i] != 0), key=lambda i: (-ratio[i], i))
        remaining = target
        for i in order:
            cap = hi[i] if coef[i] > 0 else -lo[i]
            if cap <= 0:
                continue
            gain = abs(coef[i]) * cap
            if gain >= remaining:
                theta[i] = np.sign(coef[i]) * min(remaining / abs(coef[i]), cap)
                return theta, True, True
            theta[i] = np.sign(coef[i]) * cap
            remaining -= gain
        return theta, False, False

    slack = 0.0
    for _ in range(40):
        theta, ok, tight = greedy(need + slack)
        if not ok:
            return NOT_FOUND
        action = RecourseAction.from_full(intervened, theta)
        if is_valid(classifier, scm, x, action):
            margin = float(w @ counterfactual(scm, x, action)) - b_tilde
            action.info.update(tight=tight, margin=margin, dual_norm=dual, coef=coef)
            return action
        # floating-point rounding left the counterfactual a hair short of the boundary
        slack = max(4.0 * slack, 1e-15 * (1.0 + abs(b_tilde) + abs(need)))
    return NOT_FOUND


# ---------------------------------------------------------------------------
# cost bounds


def cost_bound_beta(classifier: LinearClassifier, scm: Scm | None, x, action: RecourseAction,
                    mask=None, unc: UncertaintySpec = UncertaintySpec(0.0)) -> float:
    """Upper bound on the relative extra cost of robustifying ``action``.

    ``beta = eps * |J^T w|_2 / <w, A theta>`` where ``A theta`` is the change
    the action causes in the counterfactual.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    w, _, J, A = _linear_parts(classifier, scm, n, action.intervened)
    den = float(w @ (A @ action.full_theta(n)))
    if den <= 0:
        raise RecourseError("action does not move the score towards acceptance (not valid recourse)")
    return unc.epsilon * float(np.linalg.norm(J.T @ w)) / den


def masked_cost_bound_beta(classifier: LinearClassifier, action: RecourseAction, mask,
                           unc: UncertaintySpec) -> float:
    """IMF split form ``eps (|m_A w| + |(1 - m_A) w|) / <m_A w, theta>``."""
    w = classifier.effective_w
    m = np.asarray(getattr(mask, "m", mask), dtype=np.float64)
    den = float((m * w) @ action.full_theta(w.size))
    if den <= 0:
        raise RecourseError("action does not move the score towards acceptance (not valid recourse)")
    return unc.epsilon * (np.linalg.norm(m * w) + np.linalg.norm((1 - m) * w)) / den


# ---------------------------------------------------------------------------
# inner maximization


def _normalize_rows(g):
    r = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / np.where(r > 0, r, 1.0)


class _Maps:
    """How delta and theta enter the counterfactual.

    For linear (or IMF) SCMs ``CF(CF(x, delta), a) = x + delta J^T + theta A^T``
    exactly, so the solver graphs reduce to two matrix products; otherwise
    the full abduction/propagation graph is used.
    """

    def __init__(self, scm, n, intervened):
        self.scm = scm
        self.intervened = tuple(intervened)
        self.linear = scm is None or scm.is_linear
        if self.linear:
            if scm is None:
                self.J = np.eye(n)
                self.A = np.zeros((n, n))
                self.A[list(self.intervened), list(self.intervened)] = 1.0
            else:
                self.J = scm.total_effect
                self.A = scm.action_matrix(self.intervened)

    def cf(self, X, delta, theta):
        if not self.linear:
            return _cf(self.scm, X, delta, self.intervened, theta)
        out = X
        if delta is not None:
            out = ad.add(out, ad.matmul(delta, self.J.T))
        if theta is not None:
            out = ad.add(out, ad.matmul(theta, self.A.T))
        return out

    def perturb(self, X, delta):
        if not self.linear:
            return _cf(self.scm, X, delta, (), None)
        return X + delta @ self.J.T


def _inner_max_batch(classifier, maps, X, theta, eps, steps, step_size):
    """Batched projected gradient ascent over delta; returns best iterate per row."""
    B, n = X.shape
    delta = np.zeros((B, n))
    best = delta.copy()
    best_val = None
    if eps == 0:
        return best
    if maps.linear:
        # delta enters additively after the action for linear SCMs
        X, theta = np.asarray(maps.cf(X, None, theta)), None
    for it in range(steps + 1):
        dl = ad.leaf(delta)
        z = classifier.logit(maps.cf(X, dl, theta))
        loss = ad.neg(ad.log_sigmoid(z))
        val = np.asarray(loss.value)
        if best_val is None:
            best_val = val
        else:
            better = val > best_val
            best[better] = delta[better]
            best_val = np.where(better, val, best_val)
        if it == steps:
            break
        g = ad.gradient(ad.sum(loss), [dl])[0]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in the inner maximization")
        delta = delta + step_size * _normalize_rows(g)
        r = np.linalg.norm(delta, axis=-1, keepdims=True)
        delta = delta * np.where(r > eps, eps / np.where(r > 0, r, 1.0), 1.0)
    return best


def inner_maximize(classifier: Classifier, scm: Scm | None, x, action: RecourseAction,
                   unc: UncertaintySpec, steps: int = 20, step_size: float | None = None):
    """Local worst-case perturbation of ``x`` for ``action`` within the ball.

    Returns ``(delta_star, x_star)`` with ``x_star = CF(x, delta_star)``.  The
    ascent starts at 0 and keeps the best iterate; for nonconvex classifiers
    this is a local maximizer only.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    step_size = unc.epsilon / 5.0 if step_size is None else step_size
    theta = action.full_theta(n)[None, :]
    maps = _Maps(scm, n, action.intervened)
    d = _inner_max_batch(classifier, maps, x[None, :], theta, unc.epsilon, steps, step_size)[0]
    xs = np.asarray(maps.perturb(x[None, :], d[None, :]))[0]
    return d, xs


# ---------------------------------------------------------------------------
# min-max solver


@dataclass(frozen=True)
class SolverParams:
    """Hyperparameters of the penalty-continuation min-max solver.

    ``schedule="increase"`` multiplies the constraint weight by ``gamma`` after
    every round (``gamma > 1``); ``"decrease"`` multiplies it by ``gamma``
    with ``gamma < 1`` instead.  ``l1_step`` selects the proximal
    soft-threshold update (``"prox"``) or the plain subgradient update.
    After the exit, ``polish_iters`` passes shift action mass towards the
    coordinate with the best worst-case gradient per unit cost (0 disables).
    """

    lam0: float = 1.0
    gamma: float = 1.0 / 0.9
    schedule: str = "increase"
    n_max: int = 100
    inner_steps: int = 50
    alpha: float = 0.2
    tol: float = 1e-5
    pga_steps: int = 20
    pga_step: float | None = None
    l1_step: str = "prox"
    refine_exit: bool = True
    refine_iters: int = 12
    exit_margin: float = 1e-4
    polish_iters: int = 3

    def __post_init__(self):
        if self.schedule not in ("increase", "decrease"):
            raise ValueError("schedule must be 'increase' or 'decrease'")
        if self.schedule == "increase" and self.gamma <= 1:
            raise ValueError("an increasing schedule needs gamma > 1")
        if self.schedule == "decrease" and not 0 < self.gamma < 1:
            raise ValueError("a decreasing schedule needs 0 < gamma < 1")
        if self.l1_step not in ("prox", "subgradient"):
            raise ValueError("l1_step must be 'prox' or 'subgradient'")
        if self.polish_iters < 0:
            raise ValueError("polish_iters must be nonnegative")
        if self.n_max < 1 or self.inner_steps < 1 or self.pga_steps < 1:
            raise ValueError("iteration counts must be positive")


def action_objective(classifier: Classifier, scm: Scm | None, x, theta_full, delta, intervened,
                     lam: float = 1.0, cost: CostFn = CostFn()) -> tuple[float, np.ndarray]:
    """Value and theta-gradient of ``c(theta) + lam * l(h(CF(CF(x, delta), a)), 1)``.

    ``l`` is the cross-entropy against label 1 and ``delta`` is held fixed;
    this is the per-step objective of the min-max solver.  The cost enters
    through its subgradient (``sign(theta) * weights``).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    maps = _Maps(scm, n, tuple(intervened))
    x_star = maps.perturb(x[None, :], np.asarray(delta, dtype=np.float64)[None, :])
    tl = ad.leaf(np.asarray(theta_full, dtype=np.float64)[None, :])
    loss = ad.neg(ad.log_sigmoid(classifier.logit(maps.cf(x_star, None, tl))))
    g = ad.gradient(ad.sum(loss), [tl])[0][0]
    cw = np.ones(n) if cost.weights is None else np.asarray(cost.weights, dtype=np.float64)
    theta = np.asarray(theta_full, dtype=np.float64)
    value = cost(theta) + lam * float(np.sum(loss.value))
    return value, cw * np.sign(theta) + lam * g


def _exit_check(classifier, maps, X, theta, eps, params, pga_step, b):
    """Local worst case for each row, then whether the action survives it."""
    delta = _inner_max_batch(classifier, maps, X, theta, eps, params.pga_steps, pga_step)
    x_star = maps.perturb(X, delta)
    tl = ad.leaf(theta)
    z = classifier.logit(maps.cf(x_star, None, tl))
    zv = np.asarray(z.value)
    valid = 1.0 / (1.0 + np.exp(-zv)) >= b
    if eps > 0 and params.exit_margin > 0:
        # the inner maximizer is approximate; demand a little slack in logit units
        valid &= zv >= np.log(b / (1.0 - b)) + params.exit_margin
    return valid, z, tl


def _refine_exit(classifier, maps, X, lo_theta, hi_theta, eps, params, pga_step, b):
    """Bisect the last update segment for the first point passing the exit check.

    ``lo_theta`` failed the check on the previous step and ``hi_theta`` passed
    it, so the returned point passes it as well.
    """
    lo = np.zeros(X.shape[0])
    hi = np.ones(X.shape[0])
    for _ in range(params.refine_iters):
        mid = 0.5 * (lo + hi)
        cand = lo_theta + mid[:, None] * (hi_theta - lo_theta)
        ok, _, _ = _exit_check(classifier, maps, X, cand, eps, params, pga_step, b)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return lo_theta + hi[:, None] * (hi_theta - lo_theta)


def _polish(classifier, maps, X, theta, eps, params, pga_step, b, lo, hi, cw):
    """Move action mass from the least to the most cost-efficient coordinate.

    Efficiency is the worst-case logit gradient per unit cost.  Each pass
    zeroes the least efficient nonzero coordinate and bisects for the
    smallest compensating move along the most efficient one; the move is
    kept only if the result passes the exit check and is strictly cheaper.
    """
    theta = theta.copy()
    live = np.ones(X.shape[0], dtype=bool)
    for _ in range(params.polish_iters):
        rows = np.flatnonzero(live)
        if rows.size == 0:
            break
        Xr, Tr = X[rows], theta[rows]
        _, z, tl = _exit_check(classifier, maps, Xr, Tr, eps, params, pga_step, b)
        g = ad.gradient(ad.sum(z), [tl])[0]
        eff = np.abs(g) / cw
        room = np.where(g > 0, hi[rows] - Tr, Tr - lo[rows])
        src = np.where(Tr != 0, eff, np.inf)
        src = np.where(Tr * g < 0, -np.inf, src)  # coordinates working against validity go first
        dst = np.where((room > 1e-12) & (g != 0), eff, -np.inf)
        j = np.argmin(src, axis=1)
        k = np.argmax(dst, axis=1)
        idx = np.arange(rows.size)
        go = np.isfinite(dst[idx, k]) & (j != k) & np.isfinite(np.abs(Tr[idx, j])) & (Tr[idx, j] != 0)
        go &= src[idx, j] < dst[idx, k] * (1.0 - 1e-9)
        live[rows[~go]] = False
        if not go.any():
            break
        rows, idx, j, k = rows[go], idx[go], j[go], k[go]
        base = Tr[idx].copy()
        base[np.arange(rows.size), j] = 0.0
        tmax = np.minimum(np.abs(Tr[idx, j]) * cw[j] / cw[k], room[idx, k])
        step = np.zeros_like(base)
        step[np.arange(rows.size), k] = np.sign(g[idx, k]) * tmax
        ok, _, _ = _exit_check(classifier, maps, X[rows], base + step, eps, params, pga_step, b)
        live[rows[~ok]] = False
        if not ok.any():
            continue
        rows, base, step = rows[ok], base[ok], step[ok]
        cand = _refine_exit(classifier, maps, X[rows], base, base + step, eps, params, pga_step, b)
        better = np.sum(cw * np.abs(cand), axis=1) < np.sum(cw * np.abs(theta[rows]), axis=1) - 1e-12
        theta[rows[better]] = cand[better]
        live[rows[~better]] = False
    return theta


def robust_recourse_pgd_batch(classifier: Classifier, scm: Scm | None, X, feas: FeasibilitySpec,
                              unc: UncertaintySpec = UncertaintySpec(0.0), cost: CostFn = CostFn(),
                              params: SolverParams = SolverParams(),
                              intervened: Sequence[int] | None = None) -> list:
    """Run the min-max solver on every row of ``X``; returns actions or ``NOT_FOUND``."""
    if not cost.is_l1:
        raise RecourseError("the min-max solver supports (weighted) L1 costs only")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B, n = X.shape
    intervened = default_intervened(feas) if intervened is None else tuple(intervened)
    eps = unc.epsilon
    pga_step = eps / 5.0 if params.pga_step is None else params.pga_step
    cw = np.ones(n) if cost.weights is None else np.asarray(cost.weights, dtype=np.float64)
    lo = np.empty((B, n))
    hi = np.empty((B, n))
    for r in range(B):
        lo[r], hi[r] = feas.theta_bounds(X[r])
    imask = np.zeros(n)
    imask[list(intervened)] = 1.0
    lo *= imask
    hi *= imask
    b = classifier.threshold
    maps = _Maps(scm, n, intervened)

    theta = np.zeros((B, n))
    prev = np.zeros((B, n))
    started = np.zeros(B, dtype=bool)
    results: list = [NOT_FOUND] * B
    meta = [None] * B
    active = np.ones(B, dtype=bool)
    lam = params.lam0
    for rnd in range(params.n_max):
        moving = active.copy()
        for step in range(params.inner_steps):
            rows = np.flatnonzero(moving)
            if rows.size == 0:
                break
            Xa, Ta = X[rows], theta[rows]
            valid, z, tl = _exit_check(classifier, maps, Xa, Ta, eps, params, pga_step, b)
            if params.refine_exit and valid.any():
                vr = np.flatnonzero(valid & started[rows])
                if vr.size:
                    theta[rows[vr]] = _refine_exit(classifier, maps, Xa[vr], prev[rows[vr]], Ta[vr],
                                                   eps, params, pga_step, b)
            for k in np.flatnonzero(valid):
                r = rows[k]
                results[r] = RecourseAction.from_full(intervened, theta[r])
                meta[r] = {"round": rnd, "step": step, "lambda": lam}
            active[rows[valid]] = False
            moving[rows[valid]] = False
            keep = ~valid
            if not keep.any():
                break
            loss = ad.neg(ad.log_sigmoid(z))
            g = ad.gradient(ad.sum(loss), [tl])[0]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite action gradient in round {rnd}, step {step}")
            alpha = params.alpha
            if params.l1_step == "prox":
                t = Ta - alpha * lam * g
                t = np.sign(t) * np.maximum(np.abs(t) - alpha * cw, 0.0)
            else:
                t = Ta - alpha * (cw * np.sign(Ta) + lam * g)
            t = np.clip(t, lo[rows], hi[rows])
            change = np.max(np.abs(t - Ta), axis=1)
            kr = rows[keep]
            prev[kr] = Ta[keep]
            started[kr] = True
            theta[kr] = t[keep]
            moving[kr[change[keep] < params.tol]] = False
        if not active.any():
            break
        lam *= params.gamma
    found = [r for r in range(B) if results[r] is not NOT_FOUND]
    if found and params.polish_iters > 0:
        fr = np.array(found)
        polished = _polish(classifier, maps, X[fr], theta[fr], eps, params, pga_step, b, lo[fr], hi[fr], cw)
        for r, t in zip(found, polished):
            results[r] = RecourseAction.from_full(intervened, t)
    for r in range(B):
        if results[r] is not NOT_FOUND:
            results[r].info.update(meta[r])
    return results


def robust_recourse_pgd(classifier: Classifier, scm: Scm | None, x, feas: FeasibilitySpec,
                        unc: UncertaintySpec = UncertaintySpec(0.0), cost: CostFn = CostFn(),
                        params: SolverParams = SolverParams(),
                        intervened: Sequence[int] | None = None):
    """Robust recourse for a differentiable classifier (single individual)."""
    x = np.asarray(x, dtype=np.float64)
    return robust_recourse_pgd_batch(classifier, scm, x[None, :], feas, unc, cost, params, intervened)[0]


def standard_recourse(classifier, scm, x, feas, cost: CostFn = CostFn(), params: SolverParams = SolverParams()):
    """Minimum-cost (non-robust) recourse; closed form when available."""
    if isinstance(classifier, LinearClassifier) and (scm is None or scm.is_linear):
        return robust_linear_recourse(classifier, scm, x, feas, UncertaintySpec(0.0), cost)
    return robust_recourse_pgd(classifier, scm, x, feas, UncertaintySpec(0.0), cost, params)


def solve_recourse_batch(classifier, scm, X, feas, unc: UncertaintySpec = UncertaintySpec(0.0),
                         cost: CostFn = CostFn(), params: SolverParams = SolverParams()) -> list:
    """Robust recourse for every row of ``X``, using the closed form when it applies."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(classifier, LinearClassifier) and (scm is None or scm.is_linear):
        return [robust_linear_recourse(classifier, scm, x, feas, unc, cost) for x in X]
    return robust_recourse_pgd_batch(classifier, scm, X, feas, unc, cost, params)


def sampled_cost_variation(classifier: LinearClassifier, x, feas: FeasibilitySpec, unc: UncertaintySpec,
                           n_samples: int = 200, rng=None, cost: CostFn = CostFn()) -> float:
    """Largest change in minimum recourse cost over points sampled from the ball (IMF).

    Samples are drawn uniformly from the L2 ball of radius ``unc.epsilon``
    around ``x``; points for which no recourse exists are skipped.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    base = robust_linear_recourse(classifier, None, x, feas, UncertaintySpec(0.0), cost)
    if base is NOT_FOUND:
        raise RecourseError("no recourse exists at the centre of the ball")
    c0 = cost(base.theta)
    d = rng.standard_normal((n_samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d *= unc.epsilon * rng.random(n_samples)[:, None] ** (1.0 / n)
    worst = 0.0
    for xp in x + d:
        a = robust_linear_recourse(classifier, None, xp, feas, UncertaintySpec(0.0), cost)
        if a is not NOT_FOUND:
            worst = max(worst, abs(cost(a.theta) - c0))
    return worst
