"""Pure-numpy reference implementations of the hot numeric kernels.

Every function here has a numba twin in :mod:`sigla._backend.numba_impl`
with identical semantics; which one the package uses is decided at import
time by ``sigla._backend``.
"""

import numpy as np

NAME = "numpy"


def affine(x, w, b):
    """Dense layer pre-activation: x @ w.T + b.

    x: (batch, in_dim), w: (out_dim, in_dim), b: (out_dim,).
    """
    return x @ w.T + b


def relu(z):
    return np.maximum(z, 0.0)


def softmax_rows(z):
    """Row-wise softmax, stabilised by subtracting the row max."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def relu_backward(grad, z):
    """Gradient through relu: zero where the pre-activation was <= 0."""
    return np.where(z > 0.0, grad, 0.0)


def affine_backward(grad, x, w):
    """Gradients of an affine layer.

    grad: (batch, out_dim) upstream gradient w.r.t. the pre-activation.
    Returns (dx, dw, db) with shapes matching (x, w, bias).
    """
    dx = grad @ w
    dw = grad.T @ x
    db = grad.sum(axis=0)
    return dx, dw, db


def sgd_step(w, grad, lr):
    """In-place SGD update: w -= lr * grad."""
    w -= lr * grad


def poly_gram(x, c, d):
    """Polynomial-kernel Gram matrix: (x @ x.T + c) ** d over rows of x."""
    return (x @ x.T + c) ** d


def center_gram(k):
    """Double-center a square Gram matrix: H @ k @ H with H = I - J/n."""
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    return k - row - col + k.mean()


def gram_dot(a, b):
    """Frobenius inner product of two equally-shaped matrices."""
    return float(np.sum(a * b))
