"""Additive-noise structural causal models.

Each feature follows ``x_i = f_i(x_parents) + u_i``.  Mechanisms are either
LINEAR (weights over the parents plus a bias) or NONLINEAR (a small
expression tree).  All counterfactual maps accept plain arrays or autodiff
nodes, with a leading batch axis allowed, so solvers can differentiate
through them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from . import autodiff as ad

LINEAR = "linear"
NONLINEAR = "nonlinear"

_EXPR_OPS = {"add": 2, "sub": 2, "mul": 2, "square": 1, "tanh": 1, "x": 1, "const": 1}


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class Mechanism:
    """Deterministic part ``f_i`` of one structural equation.

    ``weights`` line up with the node's parent list.  ``expr`` is a nested
    list such as ``["add", ["square", ["x", 0]], ["const", 1.0]]`` whose
    ``["x", j]`` leaves refer to feature indices.
    """

    form: str = LINEAR
    weights: tuple = ()
    bias: float = 0.0
    expr: object = None

    def to_dict(self):
        if self.form == LINEAR:
            return {"form": LINEAR, "weights": list(self.weights), "bias": self.bias}
        return {"form": NONLINEAR, "expr": _freeze_to_list(self.expr)}

    @classmethod
    def from_dict(cls, d):
        form = d.get("form", LINEAR).lower()
        if form == LINEAR:
            return cls(LINEAR, tuple(float(w) for w in d.get("weights", ())), float(d.get("bias", 0.0)))
        if form == NONLINEAR:
            return cls(NONLINEAR, expr=_freeze(d["expr"]))
        raise ScmError(f"unknown mechanism form {form!r}")


def _freeze(expr):
    if isinstance(expr, (list, tuple)):
        return tuple(_freeze(e) for e in expr)
    return expr


def _freeze_to_list(expr):
    if isinstance(expr, tuple):
        return [_freeze_to_list(e) for e in expr]
    return expr


def _expr_vars(expr, out):
    op = expr[0]
    if op not in _EXPR_OPS or len(expr) != _EXPR_OPS[op] + 1:
        raise ScmError(f"malformed expression node {expr!r}")
    if op == "x":
        out.add(int(expr[1]))
    elif op != "const":
        for sub in expr[1:]:
            _expr_vars(sub, out)
    return out


def _eval_expr(expr, cols):
    op = expr[0]
    if op == "x":
        return cols[int(expr[1])]
    if op == "const":
        return float(expr[1])
    if op == "add":
        return ad.add(_eval_expr(expr[1], cols), _eval_expr(expr[2], cols))
    if op == "sub":
        return ad.sub(_eval_expr(expr[1], cols), _eval_expr(expr[2], cols))
    if op == "mul":
        return ad.mul(_eval_expr(expr[1], cols), _eval_expr(expr[2], cols))
    if op == "square":
        return ad.square(_eval_expr(expr[1], cols))
    return ad.tanh(_eval_expr(expr[1], cols))


def _as_array(x):
    return x if ad.is_node(x) else np.asarray(x, dtype=np.float64)


def _is_zero(v):
    return not ad.is_node(v) and not np.any(v)


class Scm:
    """Structural causal model with additive exogenous noise."""

    def __init__(self, parents: Sequence[Sequence[int]], mechanisms: Sequence[Mechanism],
                 feature_names: Sequence[str] | None = None):
        n = len(parents)
        if len(mechanisms) != n:
            raise ScmError("need one mechanism per feature")
        self.n = n
        self.parents = tuple(tuple(int(p) for p in ps) for ps in parents)
        self.mechanisms = tuple(mechanisms)
        self.feature_names = tuple(feature_names) if feature_names else tuple(f"x{i + 1}" for i in range(n))
        if len(self.feature_names) != n:
            raise ScmError("feature_names length differs from node count")
        for i, (ps, mech) in enumerate(zip(self.parents, self.mechanisms)):
            if any(p < 0 or p >= n or p == i for p in ps):
                raise ScmError(f"node {i} has an invalid parent list {ps}")
            if mech.form == LINEAR:
                if len(mech.weights) != len(ps):
                    raise ScmError(f"node {i}: {len(mech.weights)} weights for {len(ps)} parents")
            elif mech.form == NONLINEAR:
                used = _expr_vars(mech.expr, set())
                if not used <= set(ps):
                    # a mechanism reading a non-parent (or itself) is not invertible by abduction
                    raise ScmError(f"node {i} mechanism reads non-parents {sorted(used - set(ps))}")
            else:
                raise ScmError(f"node {i}: unknown form {mech.form!r}")
        self.topo_order = self._toposort()
        self.is_linear = all(m.form == LINEAR for m in self.mechanisms)
        if self.is_linear:
            W = np.zeros((n, n))
            for i, (ps, mech) in enumerate(zip(self.parents, self.mechanisms)):
                for p, w in zip(ps, mech.weights):
                    W[i, p] = w
            self.weight_matrix = W
            self.bias_vector = np.array([m.bias for m in self.mechanisms])
            self._total_effect = np.linalg.inv(np.eye(n) - W)
        self._severed_cache = {}

    def _toposort(self):
        indeg = [len(ps) for ps in self.parents]
        children = [[] for _ in range(self.n)]
        for i, ps in enumerate(self.parents):
            for p in ps:
                children[p].append(i)
        ready = [i for i in range(self.n) if indeg[i] == 0]
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for c in children[i]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != self.n:
            raise ScmError("parent graph has a cycle")
        return tuple(order)

    def __repr__(self):
        kind = "linear" if self.is_linear else "nonlinear"
        return f"Scm(n={self.n}, {kind}, features={list(self.feature_names)})"

    # -- structural equations ------------------------------------------------

    def mechanism(self, i, cols):
        """Evaluate ``f_i`` given a list of per-feature columns."""
        mech = self.mechanisms[i]
        if mech.form == LINEAR:
            out = mech.bias
            for p, w in zip(self.parents[i], mech.weights):
                out = ad.add(out, ad.mul(w, cols[p]))
            return out
        return _eval_expr(mech.expr, cols)

    def _severed_total_effect(self, intervened):
        key = tuple(sorted(intervened))
        if key not in self._severed_cache:
            W = self.weight_matrix.copy()
            W[list(key), :] = 0.0
            self._severed_cache[key] = np.linalg.inv(np.eye(self.n) - W)
        return self._severed_cache[key]

    @property
    def total_effect(self):
        """``(I - W)^-1`` for linear SCMs: column j is the effect of a unit shock on x_j."""
        if not self.is_linear:
            raise ScmError("total effect matrix only exists for linear SCMs")
        return self._total_effect

    def abduct(self, x):
        """Exogenous noise consistent with ``x`` (``S^-1``)."""
        x = _as_array(x)
        if self.is_linear:
            A = np.eye(self.n) - self.weight_matrix
            return ad.sub(ad.matmul(x, A.T), self.bias_vector)
        cols = [ad.getitem(x, (Ellipsis, i)) for i in range(self.n)]
        us = [ad.sub(cols[i], self.mechanism(i, cols)) for i in range(self.n)]
        return ad.stack(us, axis=-1)

    def generate(self, u, delta=None, intervened=(), anchor=None, theta=None):
        """Push exogenous noise through the (possibly intervened) equations.

        Features in ``intervened`` are set to ``anchor_i + theta_i`` and cut
        from their parents; all others receive ``f_i(parents) + u_i + delta_i``.
        ``theta`` is a full-length vector (entries outside ``intervened`` are
        ignored).
        """
        u = _as_array(u)
        intervened = tuple(sorted(set(int(i) for i in intervened)))
        if self.is_linear:
            return self._generate_linear(u, delta, intervened, anchor, theta)
        cols = [None] * self.n
        inter = set(intervened)
        for i in self.topo_order:
            if i in inter:
                v = ad.getitem(anchor, (Ellipsis, i))
                if theta is not None:
                    v = ad.add(v, ad.getitem(theta, (Ellipsis, i)))
            else:
                v = ad.add(self.mechanism(i, cols), ad.getitem(u, (Ellipsis, i)))
                if delta is not None:
                    v = ad.add(v, ad.getitem(delta, (Ellipsis, i)))
            cols[i] = v
        return ad.stack(cols, axis=-1)

    def _generate_linear(self, u, delta, intervened, anchor, theta):
        drive = ad.add(u, self.bias_vector)
        if delta is not None:
            drive = ad.add(drive, delta)
        if not intervened:
            return ad.matmul(drive, self._total_effect.T)
        mask = np.zeros(self.n)
        mask[list(intervened)] = 1.0
        fixed = _as_array(anchor) if theta is None else ad.add(anchor, theta)
        drive = ad.add(ad.mul(drive, 1.0 - mask), ad.mul(fixed, mask))
        return ad.matmul(drive, self._severed_total_effect(intervened).T)

    # -- counterfactuals -----------------------------------------------------

    def counterfactual_additive(self, x, delta):
        """``S(S^-1(x) + delta)``: shift every mechanism, keep causal links."""
        x = _as_array(x)
        if _is_zero(delta):
            return x.copy() if not ad.is_node(x) else x
        return self.generate(self.abduct(x), delta=_as_array(delta))

    def counterfactual_hard(self, x, intervened, theta):
        """``do(X_I = x_I + theta)`` anchored at ``x``; ``theta`` is full length."""
        x = _as_array(x)
        if not intervened:
            if not _is_zero(theta):
                raise ScmError("nonzero action with an empty intervention set")
            return x.copy() if not ad.is_node(x) else x
        if _is_zero(theta):
            return x.copy() if not ad.is_node(x) else x
        return self.generate(self.abduct(x), intervened=intervened, anchor=x, theta=_as_array(theta))

    def apply_action_to_perturbed(self, x, delta, intervened, theta):
        """Perturb ``x`` additively by ``delta``, then act on the perturbed individual."""
        xp = self.counterfactual_additive(x, delta)
        return self.counterfactual_hard(xp, intervened, theta)

    def interventional_jacobian(self, x, intervened, theta=None, step=1e-6):
        """Jacobian of ``apply_action_to_perturbed`` with respect to ``delta`` at 0.

        Exact for linear SCMs (unit-shock propagation); central differences
        with ``step`` otherwise, so the result is local to ``x`` and ``theta``.
        """
        x = np.asarray(x, dtype=np.float64)
        theta = np.zeros(self.n) if theta is None else np.asarray(theta, dtype=np.float64)
        eye = np.eye(self.n)
        xs = np.broadcast_to(x, (self.n, self.n))
        if self.is_linear:
            # rows of the batch are the unit shocks; theta cancels in the difference
            shocked = self.apply_action_to_perturbed(xs, eye, intervened, theta)
            base = self.apply_action_to_perturbed(x, np.zeros(self.n), intervened, theta)
            return (shocked - base).T
        plus = self.apply_action_to_perturbed(xs, step * eye, intervened, theta)
        minus = self.apply_action_to_perturbed(xs, -step * eye, intervened, theta)
        return ((plus - minus) / (2 * step)).T

    def action_matrix(self, intervened):
        """Linear SCMs: d CF(x, a) / d theta as an n x n matrix (zero columns outside I)."""
        if not self.is_linear:
            raise ScmError("action matrix only exists for linear SCMs")
        mask = np.zeros(self.n)
        mask[list(intervened)] = 1.0
        if not intervened:
            return np.zeros((self.n, self.n))
        return self._severed_total_effect(tuple(intervened)) * mask[None, :]

    # -- sampling ------------------------------------------------------------

    def sample_noise(self, n_samples, rng):
        return rng.standard_normal((n_samples, self.n))

    def sample(self, n_samples, rng):
        return np.asarray(self.generate(self.sample_noise(n_samples, rng)))

    # -- reparametrisation & io ----------------------------------------------

    def standardized(self, mean, std):
        """Same model expressed in standardized coordinates ``z = (x - mean) / std``."""
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        mechs = []
        for i, (ps, mech) in enumerate(zip(self.parents, self.mechanisms)):
            if mech.form == LINEAR:
                w = tuple(float(wj * std[p] / std[i]) for p, wj in zip(ps, mech.weights))
                b = (sum(wj * mean[p] for p, wj in zip(ps, mech.weights)) + mech.bias - mean[i]) / std[i]
                mechs.append(Mechanism(LINEAR, w, float(b)))
            else:
                inner = _rescale_vars(mech.expr, mean, std)
                expr = ("add", ("mul", ("const", float(1.0 / std[i])), inner), ("const", float(-mean[i] / std[i])))
                mechs.append(Mechanism(NONLINEAR, expr=expr))
        return Scm(self.parents, mechs, self.feature_names)

    def to_dict(self):
        return {
            "n": self.n,
            "parents": [list(p) for p in self.parents],
            "mechanisms": [m.to_dict() for m in self.mechanisms],
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d):
        n = int(d["n"])
        parents = d.get("parents") or [[] for _ in range(n)]
        if len(parents) != n:
            raise ScmError("parents list length differs from n")
        mechs = [Mechanism.from_dict(m) for m in d["mechanisms"]]
        return cls(parents, mechs, d.get("feature_names"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _rescale_vars(expr, mean, std):
    op = expr[0]
    if op == "x":
        j = int(expr[1])
        return ("add", ("const", float(mean[j])), ("mul", ("const", float(std[j])), ("x", j)))
    if op == "const":
        return expr
    return (op,) + tuple(_rescale_vars(e, mean, std) for e in expr[1:])


def imf_scm(n, feature_names=None):
    """Independently manipulable features: no edges, ``x = u``."""
    return Scm([[] for _ in range(n)], [Mechanism(LINEAR) for _ in range(n)], feature_names)


# ---------------------------------------------------------------------------
# module-level operations on (scm, x, action)


def abduct(scm, x):
    return scm.abduct(x)


def counterfactual_hard(scm, x, action):
    return scm.counterfactual_hard(x, action.intervened, action.full_theta(scm.n))


def counterfactual_additive(scm, x, delta):
    return scm.counterfactual_additive(x, delta)


def apply_action_to_perturbed(scm, x, delta, action):
    return scm.apply_action_to_perturbed(x, delta, action.intervened, action.full_theta(scm.n))


def interventional_jacobian(scm, x, intervened, theta=None):
    return scm.interventional_jacobian(x, intervened, theta)


# ---------------------------------------------------------------------------
# builtin models

BUILTIN_NAMES = ("income-savings", "quadratic", "loan-like", "imf-k")


def builtin_scm(name: str) -> Scm:
    """Builtin SCMs: ``income-savings``, ``quadratic``, ``loan-like`` and ``imf-<k>``."""
    if name == "income-savings":
        return Scm([[], [0]], [Mechanism(LINEAR), Mechanism(LINEAR, (1.0,), 0.0)], ["income", "savings"])
    if name == "quadratic":
        return Scm(
            [[], [0]],
            [Mechanism(LINEAR), Mechanism(NONLINEAR, expr=("square", ("x", 0)))],
            ["x1", "x2"],
        )
    if name == "loan-like":
        return _load_packaged("loan_like_scm.json")
    if name.startswith("imf-"):
        try:
            k = int(name[4:])
        except ValueError:
            raise ScmError(f"bad IMF size in {name!r}") from None
        if k < 1:
            raise ScmError("IMF SCM needs at least one feature")
        return imf_scm(k)
    raise ScmError(f"unknown builtin SCM {name!r}; choose from {BUILTIN_NAMES}")


@lru_cache(maxsize=None)
def _load_packaged(fname):
    text = resources.files("robrecourse.configs").joinpath(fname).read_text()
    return Scm.from_dict(json.loads(text))


def resolve_scm(spec) -> Scm | None:
    """Accept a builtin name, a JSON path, a dict, an Scm, or None (IMF)."""
    if spec is None or isinstance(spec, Scm):
        return spec
    if isinstance(spec, dict):
        return Scm.from_dict(spec)
    if isinstance(spec, str) and (spec in ("income-savings", "quadratic", "loan-like") or spec.startswith("imf-")):
        return builtin_scm(spec)
    return Scm.load(spec)
