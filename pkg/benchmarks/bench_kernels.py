"""Time the numba and numpy kernel paths on the same inputs.

    python3 benchmarks/bench_kernels.py [--n 100] [--repeat 5]

Both paths are called directly, so IDMS_DISABLE_NUMBA has no effect here.
The first numba call of each kernel is a warm-up (JIT or cache load) and is
not timed.  Outputs of the two paths are compared before timing.
"""
import argparse
import time

import numpy as np

from idms.kernels import NUMBA_KERNELS, NUMPY_KERNELS


def _inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(1, 200, size=(n, n))
    ref = np.triu(ref, 1) + np.triu(ref, 1).T
    np.fill_diagonal(ref, 0.0)
    est = ref * rng.uniform(0.8, 1.2, size=(n, n))
    np.fill_diagonal(est, 0.0)
    nb = rng.integers(0, n - 1, size=(50, n, 16))
    nb = nb + (nb >= np.arange(n)[None, :, None])
    d = 10
    out0, in0 = rng.random((n, d)), rng.random((n, d))
    weight = (rng.random((n, n)) < 0.3).astype(float)
    pos0 = rng.normal(size=(n, 5)) * 50
    return {
        "tiv_triple_counts": lambda: (ref, est, 0.0),
        "tiv_edge_mask": lambda: (ref, 40.0),
        "tiv_triples": lambda: (ref, 40.0),
        "vivaldi_relax": lambda: (ref, nb, pos0.copy(), np.ones(n), 0.25, 0.25),
        "hals_sweep": lambda: (ref * weight, weight, out0.copy(), in0.copy()),
    }


def _best(fn, make_args, repeat):
    times = []
    for _ in range(repeat):
        args = make_args()
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    if a is None:
        return b is None
    return np.allclose(np.asarray(a, float), np.asarray(b, float), atol=1e-8, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    inputs = _inputs(args.n)
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<20}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}  agree")
    for name, make_args in inputs.items():
        fast, slow = NUMBA_KERNELS[name], NUMPY_KERNELS[name]
        a1, a2 = make_args(), make_args()
        r1, r2 = fast(*a1), slow(*a2)
        if name == "hals_sweep":
            # updates its factor matrices in place
            r1, r2 = tuple(a1[2:]), tuple(a2[2:])
        same = _agree(r1, r2)
        t_nb = _best(fast, make_args, args.repeat)
        t_np = _best(slow, make_args, args.repeat)
        print(f"{name:<20}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
