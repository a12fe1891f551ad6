# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused dense-network forward and backward passes.

Matrix products go straight to BLAS through scipy's Cython bindings, so a
whole network pass costs one Python call instead of one per layer op.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm(bint ta, bint tb, int m, int n, int k,
                double *A, double *B, double *C, double beta) noexcept nogil:
    # Row-major C[m, n] = op(A)[m, k] @ op(B)[k, n] + beta * C, via the
    # column-major identity C^T = op(B)^T op(A)^T.
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef int lda = m if ta else k
    cdef int ldb = k if tb else n
    cdef int ldc = n
    cdef double one = 1.0
    dgemm(&cb, &ca, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef int _act_code(str activation) except -1:
    if activation == "tanh":
        return 0
    if activation == "relu":
        return 1
    raise ValueError(f"unknown activation {activation!r}")


def mlp_forward(cnp.ndarray X, list weights, list biases, str activation):
    cdef int code = _act_code(activation)
    cdef Py_ssize_t L = len(weights)
    cdef int B = X.shape[0]
    cdef list acts = []
    cdef cnp.ndarray h = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray W, bias, z
    cdef double *zp
    cdef double *bp
    cdef Py_ssize_t i, j, total
    cdef int din, dout
    cdef double v
    cdef Py_ssize_t l
    for l in range(L):
        W = np.ascontiguousarray(weights[l], dtype=np.float64)
        bias = np.ascontiguousarray(biases[l], dtype=np.float64)
        din = W.shape[0]
        dout = W.shape[1]
        z = np.empty((B, dout), dtype=np.float64)
        zp = <double *> cnp.PyArray_DATA(z)
        bp = <double *> cnp.PyArray_DATA(bias)
        total = <Py_ssize_t> B * dout
        if B > 0:
            _gemm(False, False, B, dout, din, <double *> cnp.PyArray_DATA(h),
                  <double *> cnp.PyArray_DATA(W), zp, 0.0)
        with nogil:
            if l < L - 1 and code == 1:
                for i in range(B):
                    for j in range(dout):
                        v = zp[i * dout + j] + bp[j]
                        zp[i * dout + j] = v if v > 0.0 else 0.0
            else:
                for i in range(B):
                    for j in range(dout):
                        zp[i * dout + j] += bp[j]
        if l < L - 1:
            if code == 0:
                # numpy's vectorised tanh beats a scalar libm loop
                np.tanh(z, out=z)
            acts.append(z)
        h = z
    return h[:, 0].copy(), acts


def mlp_backward(cnp.ndarray gout, cnp.ndarray X, list weights, list acts,
                 str activation, bint need_x, bint need_params):
    cdef int code = _act_code(activation)
    cdef Py_ssize_t L = len(weights)
    cdef int B = X.shape[0]
    cdef list gWs = [None] * L
    cdef list gbs = [None] * L
    cdef cnp.ndarray g = np.ascontiguousarray(gout, dtype=np.float64).reshape(B, 1)
    cdef cnp.ndarray inp, W, gW, gz, gh, a, gb
    cdef double *gzp
    cdef double *ap
    cdef double *ghp
    cdef double *gbp
    cdef Py_ssize_t i, j, total
    cdef int din, dout
    cdef double s
    cdef Py_ssize_t l
    gz = g
    for l in range(L - 1, -1, -1):
        W = np.ascontiguousarray(weights[l], dtype=np.float64)
        din = W.shape[0]
        dout = W.shape[1]
        inp = acts[l - 1] if l > 0 else np.ascontiguousarray(X, dtype=np.float64)
        if need_params:
            gW = np.zeros((din, dout), dtype=np.float64)
            if B > 0:
                _gemm(True, False, din, dout, B, <double *> cnp.PyArray_DATA(inp),
                      <double *> cnp.PyArray_DATA(gz), <double *> cnp.PyArray_DATA(gW), 0.0)
            gb = np.zeros(dout, dtype=np.float64)
            gbp = <double *> cnp.PyArray_DATA(gb)
            gzp = <double *> cnp.PyArray_DATA(gz)
            with nogil:
                for i in range(B):
                    for j in range(dout):
                        gbp[j] += gzp[i * dout + j]
            gWs[l] = gW
            gbs[l] = gb
        if l == 0 and not need_x:
            break
        gh = np.zeros((B, din), dtype=np.float64)
        if B > 0:
            _gemm(False, True, B, din, dout, <double *> cnp.PyArray_DATA(gz),
                  <double *> cnp.PyArray_DATA(W), <double *> cnp.PyArray_DATA(gh), 0.0)
        if l == 0:
            return gh, gWs, gbs
        a = acts[l - 1]
        ap = <double *> cnp.PyArray_DATA(a)
        ghp = <double *> cnp.PyArray_DATA(gh)
        total = <Py_ssize_t> B * din
        with nogil:
            if code == 0:
                for i in range(total):
                    s = ap[i]
                    ghp[i] = ghp[i] * (1.0 - s * s)
            else:
                for i in range(total):
                    if ap[i] <= 0.0:
                        ghp[i] = 0.0
        gz = gh
    return None, gWs, gbs
