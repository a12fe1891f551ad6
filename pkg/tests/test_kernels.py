import numpy as np
import pytest

from robrecourse import _kernels_py, kernels
from robrecourse.model import MLPClassifier

compiled = pytest.importorskip("robrecourse._kernels")


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backends_agree(activation, rng):
    clf = MLPClassifier.init(5, (8, 6), activation, rng)
    X = rng.normal(size=(40, 5))
    Ws = [np.ascontiguousarray(w) for w in clf.weights]
    bs = [np.ascontiguousarray(b) for b in clf.biases]
    out_c, acts_c = compiled.mlp_forward(X, Ws, bs, activation)
    out_p, acts_p = _kernels_py.mlp_forward(X, Ws, bs, activation)
    np.testing.assert_allclose(out_c, out_p, rtol=0, atol=1e-12)
    gout = rng.normal(size=out_p.shape)
    gc = compiled.mlp_backward(gout, X, Ws, acts_c, activation, True, True)
    gp = _kernels_py.mlp_backward(gout, X, Ws, acts_p, activation, True, True)
    for a, b in zip(_flatten(gc), _flatten(gp)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def _flatten(obj):
    if isinstance(obj, (list, tuple)):
        for o in obj:
            yield from _flatten(o)
    elif obj is not None:
        yield np.asarray(obj)


def test_backend_switch(rng):
    clf = MLPClassifier.init(3, (4,), "tanh", rng)
    X = rng.normal(size=(7, 3))
    before = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        s_py = np.asarray(clf.score(X))
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
        s_c = np.asarray(clf.score(X))
    finally:
        kernels.use_backend(before)
    np.testing.assert_allclose(s_py, s_c, rtol=0, atol=1e-14)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
