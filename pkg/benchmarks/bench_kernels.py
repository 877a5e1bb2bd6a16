"""Time the numba kernels against the pure numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Both backends are imported
directly, so the ``PINVIT_KIT_NO_NUMBA`` flag does not matter here.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from pinvit_kit._kernels import numba_impl, numpy_impl
from pinvit_kit.problems import GridSpec, stiffness_matrix


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng, h):
    K = sp.csr_matrix(stiffness_matrix(GridSpec("lshape", h)))
    K.sort_indices()
    n = K.shape[0]
    x = rng.standard_normal(n)
    b = rng.standard_normal(n)
    diag = K.diagonal()
    G = rng.standard_normal((80, 80))
    S = G @ G.T + 80 * np.eye(80)

    def gs(impl):
        y = x.copy()
        impl.gauss_seidel(K.indptr, K.indices, K.data, diag, y, b, True)

    return [
        (f"csr_matvec n={n}", lambda m: m.csr_matvec(K.indptr, K.indices, K.data, x)),
        (f"gauss_seidel n={n}", gs),
        ("cholesky 80x80", lambda m: m.cholesky(S)),
        ("lower_solve 80x80", lambda m: m.lower_solve(np.linalg.cholesky(S), S)),
        ("jacobi_eigh 40x40", lambda m: m.jacobi_eigh(S[:40, :40], 1e-14, 100)),
    ]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h", type=float, default=2.0**-6)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}")
    for name, fn in cases(rng, args.h):
        t_nb = best_of(lambda: fn(numba_impl), args.repeat)
        t_np = best_of(lambda: fn(numpy_impl), args.repeat)
        print(f"{name:<28}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>9.1f}")


if __name__ == "__main__":
    main()
