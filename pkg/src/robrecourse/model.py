"""Binary classifiers, decision thresholds and recourse-aware training.

A classifier produces a logit ``z(x)``; its score is ``sigmoid(z)`` and the
decision is ``score >= threshold``.  All forward passes go through the
autodiff ops, so the same code serves plain prediction, input gradients for
the solvers, and weight gradients for training.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logit as _logit

from . import autodiff as ad

OBJECTIVES = ("ERM", "AF", "ALLR", "ROSS")


class TrainingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# classifiers


class Classifier:
    """Base class: subclasses implement ``logit(x, params)``."""

    kind = "base"

    def __init__(self, threshold: float = 0.5, feature_mask=None):
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        self.threshold = float(threshold)
        self.feature_mask = None if feature_mask is None else np.asarray(feature_mask, dtype=np.float64)

    # parameters as a flat list of arrays (possibly replaced by graph leaves)
    @property
    def params(self) -> list:
        return []

    def logit(self, x, params=None):
        raise NotImplementedError

    def _masked(self, x):
        if self.feature_mask is None:
            return x
        return ad.mul(x, self.feature_mask)

    def score(self, x, params=None):
        return ad.sigmoid(self.logit(x, params))

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.score(np.asarray(x, dtype=np.float64))) >= self.threshold

    @property
    def logit_threshold(self) -> float:
        return float(_logit(self.threshold))

    def input_gradient(self, x, of: str = "score") -> np.ndarray:
        """Exact reverse-mode gradient of the score (or logit) w.r.t. ``x``."""
        x = np.asarray(x, dtype=np.float64)
        xl = ad.leaf(x)
        out = self.score(xl) if of == "score" else self.logit(xl)
        return ad.gradient(ad.sum(out), [xl])[0]

    def with_threshold(self, b: float) -> "Classifier":
        clone = self._clone()
        clone.threshold = float(b)
        if not 0.0 < b < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        return clone

    def _clone(self):
        raise NotImplementedError

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        h.update(np.float64(self.threshold).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


class LinearClassifier(Classifier):
    """Logistic model ``sigmoid(<w, x> + c)``."""

    kind = "linear"

    def __init__(self, w, c: float = 0.0, threshold: float = 0.5, feature_mask=None):
        super().__init__(threshold, feature_mask)
        self.w = np.asarray(w, dtype=np.float64).reshape(-1)
        self.c = float(c)

    @property
    def params(self):
        return [self.w, np.array([self.c])]

    def logit(self, x, params=None):
        w, c = (self.w, self.c) if params is None else (params[0], ad.getitem(params[1], 0))
        return ad.add(ad.dot(self._masked(x), w), c)

    @property
    def effective_w(self) -> np.ndarray:
        return self.w if self.feature_mask is None else self.w * self.feature_mask

    def half_space(self) -> tuple[np.ndarray, float]:
        """``(w, b_tilde)`` with ``h(x) = 1  iff  <w, x> >= b_tilde``."""
        return self.effective_w, self.logit_threshold - self.c

    def _clone(self):
        return LinearClassifier(self.w.copy(), self.c, self.threshold, self.feature_mask)

    def to_dict(self):
        return {
            "kind": "linear",
            "shapes": [[self.w.size]],
            "weights": [self.w.tolist()],
            "bias": [self.c],
            "threshold": self.threshold,
            "mask": None if self.feature_mask is None else self.feature_mask.tolist(),
        }


class MLPClassifier(Classifier):
    """Dense network with tanh or relu hidden layers and an affine logit."""

    kind = "mlp"

    def __init__(self, weights: Sequence, biases: Sequence, activation: str = "tanh",
                 threshold: float = 0.5, feature_mask=None):
        super().__init__(threshold, feature_mask)
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = [np.ascontiguousarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64).reshape(-1) for b in biases]
        if self.weights[-1].shape[1] != 1:
            raise ValueError("last layer must have a single output")
        for W, Wn in zip(self.weights[:-1], self.weights[1:]):
            if W.shape[1] != Wn.shape[0]:
                raise ad.ShapeError("mlp", [W.shape, Wn.shape], "consecutive layers do not chain")
        self.activation = activation

    @classmethod
    def init(cls, n_in: int, hidden=(32, 32), activation="tanh", rng=None, feature_mask=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [n_in, *hidden, 1]
        Ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (a + b))
            Ws.append(rng.uniform(-lim, lim, size=(a, b)))
            bs.append(np.zeros(b))
        return cls(Ws, bs, activation, feature_mask=feature_mask)

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def logit(self, x, params=None):
        return ad.mlp(self._masked(x), self.params if params is None else params, self.activation)

    def _clone(self):
        return MLPClassifier([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                             self.activation, self.threshold, self.feature_mask)

    def to_dict(self):
        return {
            "kind": "mlp",
            "activation": self.activation,
            "shapes": [list(W.shape) for W in self.weights],
            "weights": [W.reshape(-1).tolist() for W in self.weights],
            "bias": [b.tolist() for b in self.biases],
            "threshold": self.threshold,
            "mask": None if self.feature_mask is None else self.feature_mask.tolist(),
        }


class FunctionClassifier(Classifier):
    """Wraps a fixed logit function built from autodiff ops (no trainable weights)."""

    kind = "function"

    def __init__(self, logit_fn: Callable, threshold: float = 0.5, name: str = "function"):
        super().__init__(threshold)
        self._fn = logit_fn
        self.name = name

    def logit(self, x, params=None):
        return self._fn(x)

    def _clone(self):
        return FunctionClassifier(self._fn, self.threshold, self.name)

    def to_dict(self):
        raise TypeError("function classifiers are not serializable")


def classifier_from_dict(d: dict) -> Classifier:
    kind = d["kind"]
    mask = d.get("mask")
    if kind == "linear":
        return LinearClassifier(d["weights"][0], d["bias"][0], d["threshold"], mask)
    if kind == "mlp":
        Ws = [np.array(w, dtype=np.float64).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
        return MLPClassifier(Ws, d["bias"], d["activation"], d["threshold"], mask)
    raise ValueError(f"unknown classifier kind {kind!r}")


def load_classifier(path) -> Classifier:
    with open(path) as fh:
        return classifier_from_dict(json.load(fh))


def sine_classifier(gamma: float, feature: int = 1) -> FunctionClassifier:
    """Score ``sigmoid(sin(pi * x_f / (2 gamma)))`` with threshold 0.5.

    The positive region is a union of bands of width ``2 gamma`` along
    feature ``f``, so any ball of radius above ``gamma`` straddles a negative
    band.
    """
    k = np.pi / (2.0 * gamma)

    def fn(x):
        xf = ad.getitem(x, (Ellipsis, feature))
        return _sin(ad.mul(xf, k))

    return FunctionClassifier(fn, 0.5, name=f"sine(gamma={gamma})")


def _sin(a):
    if not ad.is_node(a):
        return np.sin(a)
    v = a.value
    return ad._make(np.sin(v), (a,), lambda g: (g * np.cos(v),), "sin")


# ---------------------------------------------------------------------------
# masks and losses


@dataclass(frozen=True)
class ActionabilityMask:
    """0/1 vector ``m_A`` of actionable features; ``complement`` is ``1 - m_A``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "m", m)

    @property
    def complement(self) -> np.ndarray:
        return 1.0 - self.m

    def __len__(self):
        return self.m.size


def bce_with_logits(z, y):
    """Mean binary cross-entropy for logits ``z`` and labels ``y``."""
    y = np.asarray(y, dtype=np.float64)
    pos = ad.mul(ad.log_sigmoid(z), y)
    neg = ad.mul(ad.log_sigmoid(ad.neg(z)), 1.0 - y)
    return ad.neg(ad.mean(ad.add(pos, neg)))


def _l2_normalize_rows(g):
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / np.where(n > 0, n, 1.0)


def _project_ball(d, eps):
    r = np.linalg.norm(d, axis=-1, keepdims=True)
    return d * np.where(r > eps, eps / np.where(r > 0, r, 1.0), 1.0)


# ---------------------------------------------------------------------------
# regularizers


def allr_penalty(classifier: Classifier, x, mask, mu1: float, mu2: float, eps_reg: float,
                 params=None, steps: int = 10, rng=None, stencil_step: float = 1e-4,
                 reduce: str = "mean", return_delta: bool = False, delta=None):
    """Actionable locally-linear penalty, averaged over the rows of ``x``.

    ``mu1 * max_{|d| <= eps} |s(x+d) - <d, g> - s(x)| + mu2 * |(1 - m_A) * g|_2``
    where ``s`` is the score and ``g`` its central-difference input gradient.
    The inner max runs ``steps`` normalized ascent steps of size ``eps/4``
    from the best of a random point in the ball and 32 random boundary
    points; the maximizer is then held fixed, so the result is
    differentiable in the weights (``params`` may be graph leaves).
    Terms whose weight is 0 are skipped entirely.  Passing ``delta`` fixes
    the inner maximizer instead of searching for it.
    """
    if eps_reg <= 0:
        raise ValueError("eps_reg must be positive")
    mask = mask.m if isinstance(mask, ActionabilityMask) else np.asarray(mask, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = rng if rng is not None else np.random.default_rng(0)
    if mu1 == 0 and mu2 == 0:
        return (0.0, None) if return_delta else 0.0

    def score_fn(pts):
        return classifier.score(pts, params)

    g = ad.input_gradient_stencil(score_fn, x, step=stencil_step)
    total = 0.0
    if mu1 != 0:
        if delta is None:
            gv = np.asarray(ad.value_of(g))
            delta = _allr_inner_max(classifier, x, gv, eps_reg, steps, rng)
        delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), x.shape)
        s_shift = score_fn(x + delta)
        s_base = score_fn(x)
        lin = ad.sub(ad.sub(s_shift, ad.dot(g, delta)), s_base)
        total = ad.mul(ad.abs(lin), mu1)
    if mu2 != 0:
        term2 = ad.mul(ad.norm2(ad.mul(g, 1.0 - mask)), mu2)
        total = ad.add(total, term2)
    out = ad.mean(total) if reduce == "mean" else total
    return (out, delta) if return_delta else out


def _allr_inner_max(classifier, x, g, eps, steps, rng, starts=32):
    B, n = x.shape
    d = rng.standard_normal((B, n))
    d = _l2_normalize_rows(d) * eps * rng.uniform(0.0, 1.0, size=(B, 1))

    def objective(dv, need_grad):
        dl = ad.leaf(dv) if need_grad else dv
        val = ad.abs(ad.sub(ad.sub(classifier.score(ad.add(x, dl)), ad.dot(dl, g)), classifier.score(x)))
        if not need_grad:
            return np.asarray(val), None
        grad = ad.gradient(ad.sum(val), [dl])[0]
        return np.asarray(val.value), grad

    # screen a few boundary points by value and start from the best one; a
    # single local ascent otherwise often stalls at a minor local maximum
    start_val, _ = objective(d, False)
    for _ in range(starts):
        cand = _l2_normalize_rows(rng.standard_normal((B, n))) * eps
        cv, _ = objective(cand, False)
        take = cv > start_val
        d[take] = cand[take]
        start_val = np.where(take, cv, start_val)

    best = d.copy()
    best_val, grad = objective(d, True)
    for _ in range(steps):
        d = _project_ball(d + 0.25 * eps * _l2_normalize_rows(grad), eps)
        val, grad = objective(d, True)
        better = val > best_val
        best[better] = d[better]
        best_val = np.where(better, val, best_val)
    return best


def ross_penalty(classifier: Classifier, x, mask, mu: float = 0.8, steps: int = 10,
                 step_size: float = 0.1, params=None, reduce: str = "mean", delta=None):
    """``mu * l(h(x + m_A * d*), 1)`` with ``d*`` from ``steps`` descent steps.

    ``l`` is the cross-entropy against label 1.  The descent starts at 0,
    uses normalized gradient steps of ``step_size`` and keeps the best
    iterate, so the penalty never exceeds its value at ``d = 0``.  Passing
    ``delta`` fixes the minimizer instead of searching for it.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    mask = mask.m if isinstance(mask, ActionabilityMask) else np.asarray(mask, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if mu == 0:
        return 0.0
    best = np.zeros_like(x)
    d = np.zeros_like(x)
    best_val = None
    if delta is not None:
        best = np.broadcast_to(np.asarray(delta, dtype=np.float64), x.shape)
    elif np.any(mask):
        for it in range(steps + 1):
            dl = ad.leaf(d)
            loss = ad.neg(ad.log_sigmoid(classifier.logit(ad.add(x, ad.mul(dl, mask)))))
            val = np.asarray(loss.value)
            if best_val is None:
                best_val = val
            else:
                better = val < best_val
                best[better] = d[better]
                best_val = np.where(better, val, best_val)
            if it == steps:
                break
            grad = ad.gradient(ad.sum(loss), [dl])[0] * mask
            d = d - step_size * _l2_normalize_rows(grad)
    z = classifier.logit(x + best * mask, params)
    pen = ad.mul(ad.neg(ad.log_sigmoid(z)), mu)
    return ad.mean(pen) if reduce == "mean" else pen


# ---------------------------------------------------------------------------
# threshold selection


def mcc(y_true, y_pred) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = float(np.sum(y_true & y_pred))
    tn = float(np.sum(~y_true & ~y_pred))
    fp = float(np.sum(~y_true & y_pred))
    fn = float(np.sum(y_true & ~y_pred))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(den)


def threshold_candidates(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    pts = np.concatenate([[0.0], u[(u > 0) & (u < 1)], [1.0]])
    return 0.5 * (pts[:-1] + pts[1:])


def select_threshold_from_scores(scores, y) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if y.all() or not y.any():
        raise ValueError("threshold selection needs both classes")
    best_b, best_m = None, -np.inf
    for b in threshold_candidates(scores):
        m = mcc(y, scores >= b)
        if m >= best_m:  # later (larger) candidates win ties
            best_b, best_m = float(b), m
    return best_b


def select_threshold(classifier: Classifier, x, y) -> float:
    """MCC-maximizing threshold over midpoints of the sorted unique scores."""
    return select_threshold_from_scores(classifier.score(np.asarray(x, dtype=np.float64)), y)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    objective: str = "ERM"
    model: str = "mlp"
    hidden: tuple = (32, 32)
    activation: str = "tanh"
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 100
    seed: int = 0
    mu1: float = 3.0
    mu2: float = 1.0
    eps_reg: float = 0.1
    mu: float = 0.8
    reg_steps: int = 10
    stencil_step: float = 1e-4
    select_threshold: bool = True

    def __post_init__(self):
        self.objective = self.objective.upper()
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.model not in ("linear", "mlp"):
            raise ValueError("model must be 'linear' or 'mlp'")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if min(self.mu1, self.mu2, self.mu) < 0:
            raise ValueError("regularization weights must be nonnegative")
        self.hidden = tuple(int(h) for h in self.hidden)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _unpack_data(dataset):
    if hasattr(dataset, "features"):
        return np.asarray(dataset.features, dtype=np.float64), np.asarray(dataset.labels)
    X, y = dataset
    return np.asarray(X, dtype=np.float64), np.asarray(y)


def training_loss(classifier, X, y, config: TrainConfig, mask, params=None, rng=None,
                  return_penalty: bool = False):
    """Objective minimized by :func:`train` on one batch."""
    loss = bce_with_logits(classifier.logit(X, params), y)
    pen = 0.0
    if config.objective == "ALLR":
        pen = allr_penalty(classifier, X, mask, config.mu1, config.mu2, config.eps_reg,
                           params=params, steps=config.reg_steps, rng=rng,
                           stencil_step=config.stencil_step)
    elif config.objective == "ROSS":
        pen = ross_penalty(classifier, X, mask, config.mu, config.reg_steps, params=params)
    if not (np.isscalar(pen) and pen == 0.0):
        loss = ad.add(loss, pen)
    if return_penalty:
        return loss, float(np.asarray(ad.value_of(pen)))
    return loss


def train(dataset, config: TrainConfig, mask=None) -> Classifier:
    """Fit a classifier; the returned object carries a ``history`` loss trace."""
    X, y = _unpack_data(dataset)
    y = y.astype(np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise TrainingError("labels must be binary")
    if y.min() == y.max():
        raise TrainingError("training set contains a single class")
    n = X.shape[1]
    mask = np.ones(n) if mask is None else (mask.m if isinstance(mask, ActionabilityMask) else np.asarray(mask, dtype=np.float64))
    init_rng = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    reg_rng = np.random.default_rng([config.seed, 2])
    feature_mask = mask if config.objective == "AF" else None
    if config.model == "linear":
        clf = LinearClassifier(init_rng.normal(0.0, 0.01, size=n), 0.0, feature_mask=feature_mask)
    else:
        clf = MLPClassifier.init(n, config.hidden, config.activation, init_rng, feature_mask=feature_mask)
    params = clf.params  # live references, updated in place
    opt = Adam(params, config.lr)
    history, penalties = [], []
    N = X.shape[0]
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(N)
        total = 0.0
        pen_total = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            leaves = [ad.leaf(p) for p in params]
            loss, pen = training_loss(clf, X[idx], y[idx], config, mask, params=leaves, rng=reg_rng,
                                      return_penalty=True)
            grads = ad.gradient(loss, leaves)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError("non-finite gradient during training")
            opt.step(params, grads)
            if clf.kind == "linear":
                clf.c = float(params[1][0])
            total += float(loss.value) * len(idx)
            pen_total += pen * len(idx)
        history.append(total / N)
        penalties.append(pen_total / N)
    if config.select_threshold:
        clf.threshold = select_threshold(clf, X, y)
    clf.history = history
    clf.penalty_history = penalties
    return clf


def accuracy(classifier, X, y) -> float:
    return float(np.mean(classifier.predict(X) == np.asarray(y).astype(bool)))
