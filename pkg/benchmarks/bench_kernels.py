#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against the pure-numpy fallback.

Times each hot kernel on representative shapes (minibatch dense layers,
polynomial Gram matrices) plus a fused forward/backward/update step that
approximates one training minibatch. Run:

    python benchmarks/bench_kernels.py [--batch 32] [--repeats 2000]
"""

import argparse
import time

import numpy as np

from sigla._backend import get_backend


def timeit(fn, repeats):
    fn()  # warm up (JIT compile / cache load)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def fused_minibatch_step(impl, x, w1, b1, w2, b2, y, lr):
    """Forward, cross-entropy gradient, backward, SGD, via one backend."""
    z1 = impl.affine(x, w1, b1)
    a1 = impl.relu(z1)
    z2 = impl.affine(a1, w2, b2)
    probs = impl.softmax_rows(z2)
    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    dh, dw2, db2 = impl.affine_backward(delta, a1, w2)
    dz1 = impl.relu_backward(dh, z1)
    _, dw1, db1 = impl.affine_backward(dz1, x, w1)
    impl.sgd_step(w1, dw1, lr)
    impl.sgd_step(b1, db1, lr)
    impl.sgd_step(w2, dw2, lr)
    impl.sgd_step(b2, db2, lr)


def build_cases(batch, in_dim, hidden, out_dim, gram_rows, gram_cols, rng):
    x = rng.standard_normal((batch, in_dim))
    w1 = rng.standard_normal((hidden, in_dim)) * 0.1
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((out_dim, hidden)) * 0.1
    b2 = np.zeros(out_dim)
    grad = rng.standard_normal((batch, hidden))
    gx = rng.standard_normal((gram_rows, gram_cols))
    y = rng.integers(0, out_dim, batch)

    def cases(impl):
        gram = impl.poly_gram(gx, 1.0, 2)
        return {
            f"affine {batch}x{in_dim}->{hidden}": lambda: impl.affine(x, w1, b1),
            f"affine_backward {batch}x{hidden}": lambda: impl.affine_backward(grad, x, w1),
            f"softmax_rows {batch}x{out_dim}": lambda: impl.softmax_rows(
                rng.standard_normal((batch, out_dim))
            ),
            f"poly_gram {gram_rows}x{gram_cols} d=2": lambda: impl.poly_gram(gx, 1.0, 2),
            f"center+dot {gram_rows}x{gram_rows}": lambda: impl.gram_dot(
                impl.center_gram(gram), impl.center_gram(gram)
            ),
            f"minibatch step {batch}x{in_dim}x{hidden}x{out_dim}": lambda: fused_minibatch_step(
                impl, x, w1.copy(), b1.copy(), w2.copy(), b2.copy(), y, 0.05
            ),
        }

    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--in-dim", type=int, default=34)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--out-dim", type=int, default=34)
    parser.add_argument("--gram-rows", type=int, default=64)
    parser.add_argument("--gram-cols", type=int, default=48)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(
        args.batch, args.in_dim, args.hidden, args.out_dim,
        args.gram_rows, args.gram_cols, rng,
    )
    numpy_impl = get_backend("numpy")
    numba_impl = get_backend("numba")

    print(f"{'kernel':<36s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name in cases(numpy_impl):
        t_np = timeit(cases(numpy_impl)[name], args.repeats)
        t_nb = timeit(cases(numba_impl)[name], args.repeats)
        print(f"{name:<36s} {t_np * 1e6:>10.2f}us {t_nb * 1e6:>10.2f}us {t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
