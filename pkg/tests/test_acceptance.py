"""End-to-end acceptance checks.

Each test measures one criterion against an independent oracle (closed-form
distances, finite differences, brute-force comparisons) and reports a single
PASS/FAIL line through the ``criterion`` fixture; the lines are repeated in
the pytest terminal summary.
"""

import json
import time

import numpy as np
import pytest

from robrecourse import autodiff as ad
from robrecourse.actions import FeasibilitySpec, RecourseAction, UncertaintySpec
from robrecourse.attack import analytic_min_invalidation, cw_min_invalidation_batch
from robrecourse.cli import main
from robrecourse.experiments import (
    ExperimentConfig,
    build_problem,
    fit,
    negatives,
    run_regularizers,
    run_robustness,
)
from robrecourse.model import (
    LinearClassifier,
    MLPClassifier,
    TrainConfig,
    allr_penalty,
    bce_with_logits,
    ross_penalty,
    sine_classifier,
    training_loss,
)
from robrecourse.recourse import (
    action_objective,
    cost_bound_beta,
    masked_cost_bound_beta,
    robust_linear_recourse,
    robust_recourse_pgd,
    robust_recourse_pgd_batch,
    sampled_cost_variation,
)
from robrecourse.scm import (
    apply_action_to_perturbed,
    builtin_scm,
    counterfactual_additive,
    counterfactual_hard,
    interventional_jacobian,
)

from conftest import random_linear_instances, random_linear_scm

BUILTINS = ["income-savings", "quadratic", "loan-like", "imf-3"]


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# 1-2: SCM soundness


def test_c01_abduction_roundtrip(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, exact = 0.0, True
    for name in BUILTINS:
        scm = builtin_scm(name)
        x = np.asarray(scm.sample(1000, rng))
        worst = max(worst, float(np.max(np.abs(scm.generate(scm.abduct(x)) - x))))
        null = RecourseAction(tuple(range(scm.n)), np.zeros(scm.n))
        for row in x:
            exact &= counterfactual_hard(scm, row, null).tobytes() == row.tobytes()
            exact &= counterfactual_additive(scm, row, np.zeros(scm.n)).tobytes() == row.tobytes()
    dt = time.perf_counter() - t0
    criterion(1, "abduction roundtrip", worst <= 1e-8 and exact and dt < 5,
              f"max error {worst:.2e} over 4x1000, null interventions exact={exact}, {dt:.2f}s")


def test_c02_linear_composition_law(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        scm = random_linear_scm(rng, n)
        I = tuple(sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)))
        a = RecourseAction(I, rng.normal(size=len(I)))
        x, d = rng.normal(size=n), rng.normal(size=n)
        lhs = apply_action_to_perturbed(scm, x, d, a)
        rhs = counterfactual_hard(scm, x, a) + interventional_jacobian(scm, x, I) @ d
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    dt = time.perf_counter() - t0
    criterion(2, "linear composition law", worst <= 1e-8 and dt < 5,
              f"max error {worst:.2e} over 1000 instances, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 3: gradients

PRIMITIVES_1 = {
    "tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid, "exp": ad.exp, "abs": ad.abs,
    "square": ad.square, "log_sigmoid": ad.log_sigmoid, "neg": ad.neg, "norm1": ad.norm1,
    "norm2": ad.norm2, "sum": ad.sum, "mean": ad.mean,
    "log": lambda a: ad.log(ad.add(ad.abs(a), 0.5)),
    "transpose": lambda a: ad.mul(ad.transpose(ad.reshape(a, (2, 2))), np.array([[1.0, 2.0], [3.0, 4.0]])),
    "reshape": lambda a: ad.mul(ad.reshape(a, (2, 2)), np.array([[1.0, -2.0], [0.5, 3.0]])),
    "getitem": lambda a: ad.getitem(a, slice(1, 3)),
    "stack": lambda a: ad.stack([a, ad.square(a)]),
}
PRIMITIVES_2 = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul, "dot": ad.dot,
    "div": lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)),
    "matmul": lambda a, b: ad.matmul(ad.reshape(a, (2, 2)), ad.reshape(b, (2, 2))),
}


def _reduce(out):
    # smooth, non-saturating scalarization so the FD oracle stays well conditioned
    return ad.sum(ad.add(out, ad.mul(ad.square(out), 0.5)))


def _weight_fd_errors(fn, params, ks=None):
    leaves = [ad.leaf(p) for p in params]
    grads = ad.gradient(fn(leaves), leaves)
    errs = []
    for k in ks if ks is not None else range(len(params)):
        def f(v, k=k):
            ps = list(params)
            ps[k] = v
            return float(ad.value_of(fn(ps)))
        errs.append(rel_err(grads[k], fd_grad(f, params[k])))
    return errs


def test_c03_gradient_correctness(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = {}
    for name, fn in PRIMITIVES_1.items():
        errs = []
        for _ in range(100):
            x = rng.normal(size=4)
            x = np.where(np.abs(x) < 0.05, 0.5, x)  # stay off kinks

            def f(v):
                return _reduce(fn(v))

            _, (g,) = ad.value_and_grad(f, x)
            errs.append(rel_err(g, fd_grad(lambda v: float(ad.value_of(f(v))), x)))
        worst[name] = max(errs)
    for name, fn in PRIMITIVES_2.items():
        errs = []
        for _ in range(100):
            a, b = rng.normal(size=4), rng.normal(size=4)

            def f(u, v):
                return _reduce(fn(u, v))

            _, (ga, gb) = ad.value_and_grad(f, a, b)
            errs.append(rel_err(ga, fd_grad(lambda u: float(ad.value_of(f(u, b))), a)))
            errs.append(rel_err(gb, fd_grad(lambda v: float(ad.value_of(f(a, v))), b)))
        worst[name] = max(errs)

    losses = {"ERM": [], "ALLR": [], "ROSS": [], "action objective": []}
    erm_cfg = TrainConfig(objective="ERM")
    for i in range(100):
        r = np.random.default_rng([3, i])
        clf = MLPClassifier.init(3, (5,), "tanh", r)
        X = r.normal(size=(6, 3))
        y = (r.random(6) < 0.5).astype(float)
        mask = np.array([1.0, 0.0, 1.0])
        delta = r.normal(size=(6, 3)) * 0.05
        params = clf.params
        losses["ERM"] += _weight_fd_errors(lambda ps: training_loss(clf, X, y, erm_cfg, mask, params=ps), params)
        losses["ALLR"] += _weight_fd_errors(
            lambda ps: ad.add(bce_with_logits(clf.logit(X, ps), y),
                              allr_penalty(clf, X, mask, 3.0, 1.0, 0.1, params=ps, delta=delta)), params)
        losses["ROSS"] += _weight_fd_errors(
            lambda ps: ad.add(bce_with_logits(clf.logit(X, ps), y),
                              ross_penalty(clf, X, mask, 0.8, params=ps, delta=delta)), params)
        # action objective: gradient in theta, both through a linear and a nonlinear SCM
        scm = builtin_scm("loan-like" if i % 2 else "income-savings")
        mlp = MLPClassifier.init(scm.n, (6,), "tanh", r)
        x = np.asarray(scm.sample(1, r))[0]
        I = tuple(range(scm.n))
        theta = r.normal(size=scm.n) * 0.5
        theta = np.where(np.abs(theta) < 0.05, 0.3, theta)  # keep away from the L1 kink
        d = r.normal(size=scm.n) * 0.1
        _, g = action_objective(mlp, scm, x, theta, d, I, lam=2.0)
        fd = fd_grad(lambda t: action_objective(mlp, scm, x, t, d, I, lam=2.0)[0], theta)
        losses["action objective"].append(rel_err(g, fd))
    worst.update({k: max(v) for k, v in losses.items()})
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    top = max(worst, key=worst.get)
    criterion(3, "gradient correctness", not bad and dt < 60,
              f"{len(worst)} primitives/losses x100, worst {top} {worst[top]:.1e}, failing={sorted(bad)}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 4-7: linear oracles


def test_c04_fragility_of_min_cost_recourse(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.load("income-savings-linear")
    d = cfg.to_dict()
    d["dataset"]["n_samples"] = 5000
    cfg = ExperimentConfig.from_dict(d, cfg.base_dir)
    prob = build_problem(cfg, 0)
    clf = fit(cfg, prob, 0)
    ids, X = negatives(clf, prob, 500)
    dist = []
    for x in X:
        a = robust_linear_recourse(clf, prob.scm, x, prob.feasibility, UncertaintySpec(0.0))
        dist.append(analytic_min_invalidation(clf, prob.scm, x, a) if a else np.inf)
    dist = np.array(dist)
    frac = float(np.mean(dist <= 1e-6))
    dt = time.perf_counter() - t0
    criterion(4, "fragility of min-cost recourse", len(ids) == 500 and frac >= 0.99 and dt < 30,
              f"{100 * frac:.1f}% of {len(ids)} individuals invalidated within 1e-6 "
              f"(median {np.median(dist):.1e}), {dt:.1f}s")


def test_c05_linear_robust_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    n_tight = n_loose = 0
    worst_low, worst_tight = np.inf, 0.0
    for _ in range(250):
        n = int(rng.integers(2, 6))
        scm = random_linear_scm(rng, n)
        clf = LinearClassifier(rng.normal(size=n), 0.0)
        act = rng.random(n) < 0.7
        if not act.any():
            continue
        # random box limits make some greedy solutions non-tight
        feas = FeasibilitySpec.from_mask(act)
        if rng.random() < 0.3:
            recs = feas.to_records()
            for rec in recs:
                rec["max"] = float(rng.uniform(0.1, 2.0))
                rec["min"] = -float(rng.uniform(0.1, 2.0))
            feas = FeasibilitySpec.from_records(recs)
        x = rng.normal(size=n)
        for eps in (1e-3, 1e-2, 1e-1, 0.5):
            a = robust_linear_recourse(clf, scm, x, feas, UncertaintySpec(eps))
            if not a:
                continue
            dist = analytic_min_invalidation(clf, scm, x, a)
            worst_low = min(worst_low, dist - eps)
            if a.info.get("tight"):
                n_tight += 1
                worst_tight = max(worst_tight, abs(dist - eps) if dist < eps else dist - eps)
            else:
                n_loose += 1
    dt = time.perf_counter() - t0
    ok = worst_low >= -1e-8 and worst_tight <= 1e-6 and n_tight > 0 and dt < 30
    criterion(5, "linear robust exactness", ok,
              f"{n_tight} tight actions within [eps-1e-8, eps+1e-6] (worst offset {worst_tight:.1e}), "
              f"{n_loose} non-tight, min(dist-eps) {worst_low:.1e}, {dt:.1f}s")


def test_c06_solver_equivalence(criterion):
    t0 = time.perf_counter()
    close = 0
    gaps = []
    for clf, scm, x, feas, eps, ref in random_linear_instances(6, 100):
        a = robust_recourse_pgd(clf, scm, x, feas, UncertaintySpec(eps))
        gap = abs(a.cost - ref.cost) / ref.cost if a else np.inf
        gaps.append(gap)
        close += gap <= 0.01
    dt = time.perf_counter() - t0
    criterion(6, "solver equivalence", close >= 95 and dt < 120,
              f"{close}/100 within 1% of the closed form (worst gap {max(gaps):.2%}), {dt:.1f}s")


def test_c07_cw_oracle_match(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    errs = []
    while len(errs) < 100:
        n = int(rng.integers(2, 6))
        scm = random_linear_scm(rng, n)
        clf = LinearClassifier(rng.normal(size=n), 0.0)
        feas = FeasibilitySpec.all_free(n)
        X, acts, refs = [], [], []
        while len(X) < 10:
            x = rng.normal(size=n)
            a = robust_linear_recourse(clf, scm, x, feas, UncertaintySpec(float(rng.choice([0.01, 0.1, 0.5]))))
            if not a or a.cost == 0:
                continue
            X.append(x)
            acts.append(a)
            refs.append(analytic_min_invalidation(clf, scm, x, a))
        res = cw_min_invalidation_batch(clf, scm, np.array(X), acts)
        errs += [abs(r.magnitude - ref) / ref if r.success else np.inf for r, ref in zip(res, refs)]
    errs = np.array(errs)
    dt = time.perf_counter() - t0
    within = int(np.sum(errs <= 0.01))
    criterion(7, "C&W oracle match", within == 100 and dt < 120,
              f"{within}/100 within 1% of the analytic distance (worst {errs.max():.1e}), {dt:.1f}s")


# ---------------------------------------------------------------------------
# 8: neural network robustness


def test_c08_nn_robustness_small_eps(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.load("loan-like-mlp")
    d = cfg.to_dict()
    d.update(epsilons=[1e-3, 1e-2], seeds=[0], max_individuals=50)
    cfg = ExperimentConfig.from_dict(d, cfg.base_dir)
    rows, summary = run_robustness(cfg)
    found = [r for r in rows if r["found"]]
    robust = sum(r["robust"] for r in found)
    pct = 100.0 * robust / len(found) if found else 0.0
    per_eps = ", ".join(f"eps={s['epsilon']:g}: found {s['found']}/{s['individuals']}, "
                        f"robust {s['pct_robust']:.1f}%" for s in summary)
    dt = time.perf_counter() - t0
    criterion(8, "NN robustness at small eps", bool(found) and pct >= 95 and dt < 300,
              f"{per_eps}; overall {pct:.1f}% robust, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 9-12: properties


def test_c09_cost_bound(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    checked = violations = 0
    worst = -np.inf
    while checked < 1000:
        n = int(rng.integers(2, 7))
        clf = LinearClassifier(rng.normal(size=n), float(rng.normal()))
        mask = (rng.random(n) < 0.6).astype(float)
        x = rng.normal(size=n)
        if not mask.any() or clf.predict(x):
            continue
        feas = FeasibilitySpec.from_mask(mask)
        unc = UncertaintySpec(float(rng.uniform(0.01, 1.0)))
        std = robust_linear_recourse(clf, None, x, feas, UncertaintySpec(0.0))
        rob = robust_linear_recourse(clf, None, x, feas, unc)
        if not std or std.cost == 0:
            continue
        extra = (rob.cost - std.cost) / std.cost
        beta = cost_bound_beta(clf, None, x, std, unc=unc)
        beta_masked = masked_cost_bound_beta(clf, std, mask, unc)
        worst = max(worst, extra - beta)
        # the ratio divides by the standard cost, so its rounding scales with beta
        tol = 1e-9 * max(1.0, beta)
        violations += extra > beta + tol or extra > beta_masked + tol
        checked += 1
    dt = time.perf_counter() - t0
    criterion(9, "robustification cost bound", violations == 0 and dt < 10,
              f"{violations} violations in {checked} IMF instances (max extra-beta {worst:.1e}), {dt:.1f}s")


def test_c10_nonexistence_oracle(criterion):
    t0 = time.perf_counter()
    clf = sine_classifier(0.2)
    g1, g2 = np.meshgrid(np.linspace(-1, 1, 10), np.linspace(-0.93, 0.87, 10))
    X = np.column_stack([g1.ravel(), g2.ravel()])
    feas = FeasibilitySpec.all_free(2)
    standard = robust_recourse_pgd_batch(clf, None, X, feas, UncertaintySpec(0.0))
    robust = robust_recourse_pgd_batch(clf, None, X, feas, UncertaintySpec(0.3))
    n_std = sum(a is not None and bool(a) for a in standard)
    n_rob = sum(bool(a) for a in robust)
    dt = time.perf_counter() - t0
    criterion(10, "nonexistence oracle", n_std == 100 and n_rob == 0 and dt < 60,
              f"gamma=0.2, eps=0.3: standard recourse found {n_std}/100, robust found {n_rob}/100, {dt:.1f}s")


def test_c11_allr_effect(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.load("half-unactionable")
    d = cfg.to_dict()
    d["objectives"] = ["ALLR"]
    cfg = ExperimentConfig.from_dict(d, cfg.base_dir)
    _, rows = run_regularizers(cfg)
    agg = {r["objective"]: r for r in rows if r["seed"] == "all"}
    erm, allr = agg["ERM"], agg["ALLR"]
    drop = 100.0 * (erm["accuracy"] - allr["accuracy"])
    dt = time.perf_counter() - t0
    ok = allr["pct_found_robust"] >= erm["pct_found_robust"] and drop <= 5.0 and dt < 600
    criterion(11, "ALLR effect", ok,
              f"robust recourse found at eps={cfg.robust_epsilon}: ERM {erm['pct_found_robust']:.1f}% vs "
              f"ALLR {allr['pct_found_robust']:.1f}% over {len(cfg.seeds)} seeds; accuracy "
              f"{100 * erm['accuracy']:.1f} -> {100 * allr['accuracy']:.1f} (drop {drop:.1f} pts), {dt:.1f}s")


def test_c12_sampled_cost_variation(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    checked = violations = 0
    worst = -np.inf
    while checked < 100:
        n = int(rng.integers(2, 6))
        clf = LinearClassifier(rng.normal(size=n), float(rng.normal()))
        mask = (rng.random(n) < 0.7).astype(float)
        if not mask.any():
            continue
        feas = FeasibilitySpec.from_mask(mask)
        x = rng.normal(size=n)
        unc = UncertaintySpec(float(rng.uniform(0.01, 0.5)))
        rob = robust_linear_recourse(clf, None, x, feas, unc)
        if not rob:
            continue
        var = sampled_cost_variation(clf, x, feas, unc, 200, np.random.default_rng([12, checked]))
        worst = max(worst, var - rob.cost)
        violations += var > rob.cost + 1e-6
        checked += 1
    dt = time.perf_counter() - t0
    criterion(12, "sampled cost variation bound", violations == 0 and dt < 120,
              f"{violations} violations in {checked} IMF instances x 200 samples "
              f"(max variation-cost {worst:.2e}), {dt:.1f}s")


# ---------------------------------------------------------------------------
# 13: determinism


def test_c13_cli_determinism(criterion, tmp_path):
    cfg = ExperimentConfig.load("income-savings-linear").to_dict()
    cfg["dataset"]["n_samples"] = 300
    cfg.update(max_individuals=6, epsilons=[0.01, 0.1],
               model={"kind": "mlp", "hidden": [4], "epochs": 2, "batch_size": 50},
               attack={"inner_iters": 200})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    commands = {
        "train": [],
        "fragility": [],
        "robustness": [],
        "regularizers": ["--objective", "ALLR"],
        "recourse": ["--index", "0", "--epsilon", "0.1"],
        "attack": ["--x=-1,-1", "--intervened", "0", "--theta", "2.0"],
    }
    mismatched, compared, codes = [], 0, {}
    for cmd, extra in commands.items():
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run / cmd
            codes[(cmd, run)] = main([cmd, "--config", str(path), "--out", str(out), *extra])
            outs.append(out)
        files = sorted(p.name for p in outs[0].iterdir())
        if files != sorted(p.name for p in outs[1].iterdir()) or not files:
            mismatched.append(f"{cmd}: file sets differ")
            continue
        for name in files:
            compared += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append(f"{cmd}/{name}")
    bad_codes = sorted({c for (c, _), v in codes.items() if v != 0})
    criterion(13, "CLI determinism", not mismatched and not bad_codes,
              f"{len(commands)} subcommands, {compared} files byte-identical across reruns; "
              f"mismatches={mismatched}, nonzero exits={bad_codes}")
