"""Numba-jitted implementations of the hot numeric kernels.

Semantics match :mod:`sigla._backend.numpy_impl` exactly. Matrix products
go through np.dot (BLAS) even under numba; the jitted code fuses the
surrounding elementwise work (activations, centering, updates) into
single passes, which is where the speedup over plain numpy comes from.
Results may differ from the numpy backend at float rounding level.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def affine(x, w, b):
    out = np.dot(x, w.T)
    n, m = out.shape
    for i in range(n):
        for j in range(m):
            out[i, j] += b[j]
    return out


@njit(cache=True)
def relu(z):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            out[i, j] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def softmax_rows(z):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = z[i, 0]
        for j in range(1, m):
            if z[i, j] > mx:
                mx = z[i, j]
        s = 0.0
        for j in range(m):
            e = np.exp(z[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True)
def relu_backward(grad, z):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = grad[i, j] if z[i, j] > 0.0 else 0.0
    return out


@njit(cache=True)
def affine_backward(grad, x, w):
    dx = np.dot(grad, w)
    dw = np.dot(grad.T, x)
    m = grad.shape[1]
    db = np.zeros(m)
    for i in range(grad.shape[0]):
        for j in range(m):
            db[j] += grad[i, j]
    return dx, dw, db


@njit(cache=True)
def sgd_step(w, grad, lr):
    flat_w = w.ravel()
    flat_g = grad.ravel()
    for i in range(flat_w.shape[0]):
        flat_w[i] -= lr * flat_g[i]


@njit(cache=True)
def poly_gram(x, c, d):
    out = np.dot(x, x.T)
    n = out.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = (out[i, j] + c) ** d
    return out


@njit(cache=True)
def center_gram(k):
    n, m = k.shape
    row = np.zeros(n)
    col = np.zeros(m)
    total = 0.0
    for i in range(n):
        for j in range(m):
            row[i] += k[i, j]
            col[j] += k[i, j]
            total += k[i, j]
    for i in range(n):
        row[i] /= m
    for j in range(m):
        col[j] /= n
    total /= n * m
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = k[i, j] - row[i] - col[j] + total
    return out


@njit(cache=True)
def gram_dot(a, b):
    n, m = a.shape
    acc = 0.0
    for i in range(n):
        for j in range(m):
            acc += a[i, j] * b[i, j]
    return acc
