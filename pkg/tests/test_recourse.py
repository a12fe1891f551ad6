import numpy as np
import pytest

from robrecourse import autodiff as ad
from robrecourse.actions import (
    NOT_FOUND,
    CostFn,
    FeasibilitySpec,
    FeatureConstraint,
    RecourseAction,
    UncertaintySpec,
)
from robrecourse.model import LinearClassifier, MLPClassifier, sine_classifier
from robrecourse.recourse import (
    RecourseError,
    SolverParams,
    action_objective,
    cost_bound_beta,
    counterfactual,
    inner_maximize,
    is_valid,
    masked_cost_bound_beta,
    robust_linear_recourse,
    robust_recourse_pgd,
    robust_recourse_pgd_batch,
    sampled_cost_variation,
    solve_recourse_batch,
    standard_recourse,
)
from robrecourse.scm import builtin_scm

from conftest import random_linear_instances


def half_space_clf(w, b_tilde=0.0):
    # threshold 0.5 puts the boundary at <w, x> + c = 0, i.e. b_tilde = -c
    return LinearClassifier(w, -b_tilde, 0.5)


# ---------------------------------------------------------------------------
# closed form


def test_closed_form_imf_robust():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec((FeatureConstraint("x1"), FeatureConstraint("x2", False)))
    a = robust_linear_recourse(clf, None, [-0.5, 0.0], feas, UncertaintySpec(0.1))
    assert a.intervened == (0,)
    np.testing.assert_allclose(a.theta, [0.6], atol=1e-9)
    assert a.info["tight"]


def test_closed_form_imf_standard():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec((FeatureConstraint("x1"), FeatureConstraint("x2", False)))
    a = robust_linear_recourse(clf, None, [-0.5, 0.0], feas, UncertaintySpec(0.0))
    np.testing.assert_allclose(a.theta, [0.5], atol=1e-12)


def test_closed_form_income_savings():
    clf = half_space_clf([0.0, 1.0])
    feas = FeasibilitySpec((FeatureConstraint("income"), FeatureConstraint("savings", False)))
    a = robust_linear_recourse(clf, builtin_scm("income-savings"), [0.0, -1.0], feas)
    np.testing.assert_allclose(a.theta, [1.0], atol=1e-12)


def test_closed_form_not_found_when_box_exhausted():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec((FeatureConstraint("x1", True, "free", None, 0.0), FeatureConstraint("x2", False)))
    assert robust_linear_recourse(clf, None, [-0.5, 0.0], feas, UncertaintySpec(0.1)) is NOT_FOUND


def test_closed_form_rejects_nonlinear():
    clf = MLPClassifier.init(2, (3,))
    with pytest.raises((RecourseError, TypeError, ValueError)):
        robust_linear_recourse(clf, None, [0.0, 0.0], FeasibilitySpec.all_free(2))
    with pytest.raises((RecourseError, ValueError)):
        robust_linear_recourse(half_space_clf([1.0, 1.0]), builtin_scm("quadratic"), [0.0, 0.0],
                               FeasibilitySpec.all_free(2))


def test_tie_break_lower_index():
    clf = half_space_clf([1.0, 1.0])
    a = robust_linear_recourse(clf, None, [-1.0, 0.0], FeasibilitySpec.all_free(2))
    np.testing.assert_allclose(a.full_theta(2), [1.0, 0.0])


def test_linear_certificate_and_minimality():
    for clf, scm, x, feas, eps, a in random_linear_instances(7, 60, epsilons=(0.01, 0.1, 0.5)):
        w, b_tilde = clf.half_space()
        J = scm.total_effect
        lhs = float(w @ counterfactual(scm, x, a)) - b_tilde
        dual = np.linalg.norm(J.T @ w)
        assert lhs >= dual * eps - 1e-8
        assert is_valid(clf, scm, x, a)
        assert feas.is_feasible(x, a.full_theta(x.size))
        if a.info["tight"]:
            for k, t in enumerate(a.theta):
                if abs(t) < 1e-3:
                    continue
                th = a.theta.copy()
                th[k] -= np.sign(t) * 1e-3
                probe = RecourseAction(a.intervened, th)
                assert float(w @ counterfactual(scm, x, probe)) - b_tilde < dual * eps


def test_cost_monotone_in_epsilon(rng):
    scm = builtin_scm("income-savings")
    for _ in range(20):
        clf = LinearClassifier(rng.normal(size=2), rng.normal())
        x = rng.normal(size=2)
        costs = []
        for eps in (0.0, 0.01, 0.1, 0.5, 1.0):
            a = robust_linear_recourse(clf, scm, x, FeasibilitySpec.all_free(2), UncertaintySpec(eps))
            costs.append(a.cost)
        assert all(c1 <= c2 + 1e-12 for c1, c2 in zip(costs, costs[1:]))


def test_already_positive_gets_null_action():
    clf = half_space_clf([1.0, 0.0])
    a = robust_linear_recourse(clf, None, [2.0, 0.0], FeasibilitySpec.all_free(2), UncertaintySpec(0.1))
    assert a.cost == 0.0


# ---------------------------------------------------------------------------
# cost bounds


def test_beta_hand_example():
    clf = half_space_clf([1.0, 0.0])
    a = RecourseAction((0, 1), [1.0, 0.0])
    assert cost_bound_beta(clf, None, np.zeros(2), a, unc=UncertaintySpec(0.1)) == pytest.approx(0.1)
    assert masked_cost_bound_beta(clf, a, [1.0, 1.0], UncertaintySpec(0.1)) == pytest.approx(0.1)


def test_beta_rejects_invalid_action():
    clf = half_space_clf([1.0, 0.0])
    with pytest.raises(RecourseError):
        cost_bound_beta(clf, None, np.zeros(2), RecourseAction((0,), [-1.0]), unc=UncertaintySpec(0.1))


def test_masked_form_dominates(rng):
    for _ in range(200):
        n = 4
        clf = LinearClassifier(rng.normal(size=n), 0.0)
        mask = (rng.random(n) < 0.6).astype(float)
        if not mask.any():
            continue
        x = rng.normal(size=n)
        if clf.predict(x):
            continue
        a = robust_linear_recourse(clf, None, x, FeasibilitySpec.from_mask(mask))
        if not a or a.cost == 0:
            continue
        unc = UncertaintySpec(0.1)
        assert masked_cost_bound_beta(clf, a, mask, unc) >= cost_bound_beta(clf, None, x, a, unc=unc) - 1e-12


def test_sampled_cost_variation_bounded(rng):
    clf = LinearClassifier([1.0, -0.5, 0.3], 0.2)
    feas = FeasibilitySpec.all_free(3)
    x = np.array([-1.0, 0.5, 0.0])
    unc = UncertaintySpec(0.2)
    robust = robust_linear_recourse(clf, None, x, feas, unc)
    assert sampled_cost_variation(clf, x, feas, unc, 200, rng) <= robust.cost + 1e-6


# ---------------------------------------------------------------------------
# inner maximization


def test_inner_max_zero_eps():
    clf = half_space_clf([1.0, 0.0])
    d, xs = inner_maximize(clf, None, [0.1, 0.0], RecourseAction((0,), [0.5]), UncertaintySpec(0.0))
    np.testing.assert_array_equal(d, [0.0, 0.0])
    np.testing.assert_array_equal(xs, [0.1, 0.0])


def test_inner_max_linear_is_antigradient():
    w = np.array([3.0, -4.0])
    clf = half_space_clf(w)
    d, _ = inner_maximize(clf, None, [0.2, 0.3], RecourseAction((0, 1), [0.0, 0.0]), UncertaintySpec(0.1))
    np.testing.assert_allclose(d, -0.1 * w / np.linalg.norm(w), atol=1e-6)


def test_inner_max_beats_random_samples(rng):
    scm = builtin_scm("loan-like")
    for k in range(5):
        clf = MLPClassifier.init(7, (8, 8), "tanh", np.random.default_rng(k))
        x = np.asarray(scm.sample(1, rng))[0]
        a = RecourseAction((2, 5, 6), rng.normal(size=3) * 0.5)
        unc = UncertaintySpec(0.3)
        d, _ = inner_maximize(clf, scm, x, a, unc)

        def loss(delta):
            return float(-ad.log_sigmoid(clf.logit(counterfactual(scm, x, a, delta))))

        best = loss(d)
        for _ in range(50):
            r = rng.normal(size=7)
            r *= 0.3 * rng.random() ** (1 / 7) / np.linalg.norm(r)
            assert best >= loss(r) - 1e-9


# ---------------------------------------------------------------------------
# min-max solver


def test_pgd_standard_matches_hand_lp():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec((FeatureConstraint("x1"), FeatureConstraint("x2", False)))
    a = robust_recourse_pgd(clf, None, [-0.5, 0.0], feas, UncertaintySpec(0.0))
    assert abs(a.theta[0] - 0.5) <= 1e-2


def test_pgd_matches_closed_form_on_sample():
    insts = random_linear_instances(99, 8)
    for clf, scm, x, feas, eps, a in insts:
        b = robust_recourse_pgd(clf, scm, x, feas, UncertaintySpec(eps))
        assert b
        assert b.cost >= a.cost - 1e-6  # closed form is optimal
        assert abs(b.cost - a.cost) / a.cost <= 0.05


def test_pgd_outputs_valid_and_feasible(rng):
    scm = builtin_scm("loan-like")
    clf = MLPClassifier.init(7, (16, 16), "tanh", np.random.default_rng(3))
    feas = FeasibilitySpec((
        FeatureConstraint("g", False), FeatureConstraint("a", False),
        FeatureConstraint("e", True, "increase", None, 3.0), FeatureConstraint("l", True),
        FeatureConstraint("d", True, "decrease"), FeatureConstraint("i", True, "increase"),
        FeatureConstraint("s", True, "increase"),
    ))
    X = np.asarray(scm.sample(30, rng))
    X = X[~clf.predict(X)][:8]
    acts = robust_recourse_pgd_batch(clf, scm, X, feas, UncertaintySpec(0.05))
    assert any(acts)
    for x, a in zip(X, acts):
        if a:
            full = a.full_theta(7)
            np.testing.assert_array_equal(feas.project(x, full), full)
            assert is_valid(clf, scm, x, a)


def test_batch_matches_single(rng):
    clf = LinearClassifier([1.0, 0.5], -0.2)
    feas = FeasibilitySpec.all_free(2)
    X = rng.normal(size=(4, 2)) - 1.0
    batch = robust_recourse_pgd_batch(clf, None, X, feas, UncertaintySpec(0.1))
    for x, b in zip(X, batch):
        s = robust_recourse_pgd(clf, None, x, feas, UncertaintySpec(0.1))
        np.testing.assert_allclose(s.theta, b.theta, atol=1e-12)


def test_sine_classifier_has_no_robust_recourse():
    clf = sine_classifier(0.2)
    X = np.array([[0.0, -0.5], [0.3, 0.1]])
    feas = FeasibilitySpec.all_free(2)
    assert all(robust_recourse_pgd_batch(clf, None, X, feas, UncertaintySpec(0.0)))
    assert not any(robust_recourse_pgd_batch(clf, None, X, feas, UncertaintySpec(0.3),
                                             params=SolverParams(n_max=10)))


def test_decreasing_schedule_and_subgradient_step():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec.all_free(2)
    # the loss gradient is at most lam in magnitude, so lam must start above the unit cost slope
    p = SolverParams(lam0=10.0, gamma=0.9, schedule="decrease", l1_step="subgradient")
    a = robust_recourse_pgd(clf, None, [-0.5, 0.0], feas, params=p)
    assert a and is_valid(clf, None, [-0.5, 0.0], a)


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(gamma=0.9)
    with pytest.raises(ValueError):
        SolverParams(schedule="decrease", gamma=1.5)
    with pytest.raises(ValueError):
        SolverParams(l1_step="newton")
    with pytest.raises(ValueError):
        SolverParams(n_max=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_aborts():
    from robrecourse.model import FunctionClassifier

    clf = FunctionClassifier(lambda x: ad.mul(ad.getitem(x, (Ellipsis, 0)), np.nan), name="nan")
    with pytest.raises(FloatingPointError):
        robust_recourse_pgd(clf, None, [0.0, 0.0], FeasibilitySpec.all_free(2))


def test_action_objective_gradient(rng):
    scm = builtin_scm("loan-like")
    clf = MLPClassifier.init(7, (8, 8), "tanh", rng)
    x, d = rng.normal(size=7), rng.normal(size=7) * 0.1
    theta = np.zeros(7)
    theta[[2, 5, 6]] = rng.normal(size=3)
    _, g = action_objective(clf, scm, x, theta, d, (2, 5, 6), lam=2.0)
    h = 1e-6
    fd = np.array([(action_objective(clf, scm, x, theta + h * e, d, (2, 5, 6), 2.0)[0]
                    - action_objective(clf, scm, x, theta - h * e, d, (2, 5, 6), 2.0)[0]) / (2 * h)
                   for e in np.eye(7)])
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)


def test_dispatch_and_standard_recourse():
    clf = half_space_clf([1.0, 0.0])
    feas = FeasibilitySpec.all_free(2)
    a = standard_recourse(clf, None, [-0.5, 0.0], feas)
    assert a.info["tight"] and a.cost == pytest.approx(0.5)
    (b,) = solve_recourse_batch(clf, None, np.array([[-0.5, 0.0]]), feas, UncertaintySpec(0.1))
    assert b.cost == pytest.approx(0.6)


def test_weighted_cost_closed_form():
    clf = half_space_clf([1.0, 1.0])
    a = robust_linear_recourse(clf, None, [-1.0, 0.0], FeasibilitySpec.all_free(2), cost=CostFn(weights=(2.0, 1.0)))
    np.testing.assert_allclose(a.full_theta(2), [0.0, 1.0])
