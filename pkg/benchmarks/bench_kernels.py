"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--n 100] [--p 30] [--sweeps 200]

Both backends are imported in one process (the env flag only picks the
default binding), run on identical inputs, and checked for agreement.
"""

import argparse
import time

import numpy as np

from compnet import _accel, kernels
from compnet.composition import log_transform
from compnet.simulation import SimSpec, generate_dataset
from compnet.solver import AdmmState


def admm_inputs(n, p, seed=0):
    spec = SimSpec(p=p, n_per_cluster=-(-n // 3), n_train=3 * -(-n // 3) - 1, n_valid=1)
    sim = generate_dataset(spec, seed)
    z = np.ascontiguousarray(log_transform(sim.dataset.x[:n]))
    y = sim.dataset.y[:n].copy()
    r = sim.observed_graph[:n, :n]
    diag = (n - 1) + 1.0
    gmat = kernels.rank2_factors(z, diag, 1.0)
    return z, y, r, gmat, diag


def run_admm(sweep, z, y, r, gmat, diag, sweeps):
    n, p = z.shape
    st = AdmmState.zeros(r, p)
    acc = kernels.pair_accumulate(n, st.ei, st.ej, st.a_i, st.a_j, st.s_i, st.s_j)
    t0 = time.perf_counter()
    for _ in range(sweeps):
        sweep(z, y, gmat, diag, st.ei, st.ej, st.wt, st.idle, st.w, st.a_i, st.a_j,
              st.s_i, st.s_j, st.b, st.t, st.u, acc, 0.3, 0.03, 1.0, 1.0, 1.0, True)
    return time.perf_counter() - t0, st.w.copy(), st.ei.size


def run_weber(solve, anchors, wts, iters):
    k, p = anchors.shape
    w = np.zeros(p)
    t0 = time.perf_counter()
    solve(anchors, wts, 0, w, np.zeros((k, p)), np.zeros((k, p)), np.zeros(p),
          1.0, 1.0, iters, 1e-300, True)
    return time.perf_counter() - t0, w


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--p", type=int, default=30)
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--weber-iters", type=int, default=2000)
    args = ap.parse_args()

    z, y, r, gmat, diag = admm_inputs(args.n, args.p)
    # compile outside the timed region
    run_admm(kernels.admm_sweep_numba, z, y, r, gmat, diag, 1)
    t_nb, w_nb, edges = run_admm(kernels.admm_sweep_numba, z, y, r, gmat, diag, args.sweeps)
    t_np, w_np, _ = run_admm(kernels.admm_sweep_numpy, z, y, r, gmat, diag, args.sweeps)

    rng = np.random.default_rng(0)
    anchors = rng.normal(size=(5, args.p))
    anchors -= anchors.mean(1, keepdims=True)
    wts = np.ones(5)
    run_weber(kernels.weber_solve_numba, anchors, wts, 1)
    tw_nb, v_nb = run_weber(kernels.weber_solve_numba, anchors, wts, args.weber_iters)
    tw_np, v_np = run_weber(kernels.weber_solve_numpy, anchors, wts, args.weber_iters)

    print(f"backend default: {_accel.backend_name()}")
    print(f"ADMM sweep  n={args.n} p={args.p} edges={edges}")
    print(f"  numba {1e3 * t_nb / args.sweeps:8.3f} ms/sweep")
    print(f"  numpy {1e3 * t_np / args.sweeps:8.3f} ms/sweep   ratio {t_np / t_nb:5.1f}x")
    print(f"  max |w_numba - w_numpy| = {np.abs(w_nb - w_np).max():.2e}")
    print(f"Weber solve anchors=5 iters={args.weber_iters}")
    print(f"  numba {1e3 * tw_nb:8.3f} ms")
    print(f"  numpy {1e3 * tw_np:8.3f} ms   ratio {tw_np / tw_nb:5.1f}x")
    print(f"  max |w_numba - w_numpy| = {np.abs(v_nb - v_np).max():.2e}")


if __name__ == "__main__":
    main()
