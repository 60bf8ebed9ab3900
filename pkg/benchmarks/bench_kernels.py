"""Time every kernel on both backends and check they agree.

    python benchmarks/bench_kernels.py [--repeat N] [--scale F]

``--scale`` shrinks or grows the problem sizes (default 1.0 matches the
default experiment: 2000-row fit sets, 4 classes, 64-wide features).
"""
import argparse
import timeit

import numpy as np

from drlood import kernels


def cases(scale, rng):
    n = max(int(2000 * scale), 8)
    k = 4
    mu, d = rng.normal(size=(n, k)), rng.normal(size=(n, k))
    A = rng.normal(size=(k, k))
    sigma = A @ A.T
    normals = rng.normal(size=(max(int(10**6 * scale), 8), k))
    queries, bank = rng.normal(size=(max(int(500 * scale), 4), 64)), rng.normal(size=(n, 64))
    return {
        "implicit_constraint": lambda m: m.implicit_constraint(mu, d, sigma, 0.001),
        "implicit_constraint_grad": lambda m: m.implicit_constraint_grad(mu, mu, d, 0.001),
        "mc_weighted_sum": lambda m: m.mc_weighted_sum(mu[0], np.linalg.cholesky(sigma), d[0], 0.001, normals),
        "kth_distance": lambda m: m.kth_distance(queries, bank, 10),
    }


def run(repeat=5, scale=1.0, seed=0):
    backends = kernels.available_backends()
    rows = []
    for name, fn in cases(scale, np.random.default_rng(seed)).items():
        timings, outputs = {}, {}
        for backend, module in backends.items():
            outputs[backend] = fn(module)
            timings[backend] = min(timeit.repeat(lambda: fn(module), number=1, repeat=repeat))
        ref = outputs["python"]
        agree = all(np.allclose(o, ref, rtol=1e-10, atol=1e-12) for o in outputs.values())
        rows.append((name, timings, agree))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args(argv)
    rows = run(args.repeat, args.scale)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':26s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}  agree")
    for name, t, agree in rows:
        py = t["python"] * 1e3
        if "compiled" in t:
            c = t["compiled"] * 1e3
            print(f"{name:26s} {py:10.3f} {c:12.3f} {py / c:8.1f}x  {agree}")
        else:
            print(f"{name:26s} {py:10.3f} {'n/a':>12s} {'':8s}  {agree}")
    return 0 if all(a for _, _, a in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
