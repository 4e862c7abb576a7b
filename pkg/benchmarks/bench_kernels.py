"""Time the compiled per-edge kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--cap-km 10] [--batch 20] [--repeat 200]

Inputs are a refined copy of the bundled four-node network at a
quasi-steady state, replicated ``batch`` times (one row per time sample).
"""
import argparse
import timeit
from importlib import resources

import numpy as np

from gasmix import kernels
from gasmix.dynamics import BoundaryValues, steady_state
from gasmix.network import load_network, refine


def build_inputs(cap_km, batch, seed=0):
    net = refine(load_network(resources.files("gasmix") / "data" / "four_node_network.yaml"), cap_km * 1e3)
    nw, A = net.num_withdrawal, len(net.actuators)
    rng = np.random.default_rng(seed)
    w = np.zeros(nw)
    w[:3] = [80.0, 50.0, 90.0]
    s1, s2 = np.array([41.0]), np.array([0.2])
    st = steady_state(net, BoundaryValues(s1, s2, w), np.full(A, 1.2) if A else None)
    jitter = 1.0 + 0.01 * rng.standard_normal((batch, nw))
    ratios = np.full((batch, A), 1.2)
    mu_in, mu_out = net.ratio_vectors(ratios)
    return dict(
        net=net,
        rho1=st.rho1 * jitter,
        rho2=st.rho2 * jitter,
        s1=np.tile(s1, (batch, 1)),
        s2=np.tile(s2, (batch, 1)),
        phi=np.tile(st.flux, (batch, 1)),
        w=np.tile(w, (batch, 1)),
        mu_in=mu_in,
        mu_out=mu_out,
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cap-km", type=float, default=10.0)
    ap.add_argument("--batch", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    d = build_inputs(args.cap_km, args.batch)
    arr = d["net"].arrays
    sq1, sq2 = 338.38**2, (4 * 338.38) ** 2
    eta = d["rho2"] / (d["rho1"] + d["rho2"])
    calls = {
        "edge_flux": lambda impl: kernels.edge_flux(
            arr, d["rho1"], d["rho2"], d["s1"], d["s2"], d["mu_in"], d["mu_out"], sq1, sq2, impl=impl),
        "node_balance": lambda impl: kernels.node_balance(
            arr, d["rho1"], d["rho2"], 1 - eta, eta, d["phi"], d["w"], impl=impl),
        "momentum_residual": lambda impl: kernels.momentum_residual(
            arr, d["rho1"], d["rho2"], d["s1"], d["s2"], d["phi"], d["mu_in"], d["mu_out"], sq1, sq2, impl=impl),
    }
    impls = kernels.backends()
    print(f"{len(arr.lk)} edges x {args.batch} samples, {args.repeat} calls each")
    print(f"{'kernel':<20}" + "".join(f"{name + ' (us)':>16}" for name in impls) + f"{'speed-up':>10}")
    for name, fn in calls.items():
        ref = None
        times = {}
        for bname, impl in impls.items():
            out = fn(impl)
            if ref is None:
                ref = out
            else:
                np.testing.assert_allclose(np.asarray(out), np.asarray(ref), rtol=1e-12, atol=1e-12)
            times[bname] = min(timeit.repeat(lambda: fn(impl), number=args.repeat, repeat=3)) / args.repeat
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{1e6 * t:>16.2f}" for t in times.values()) + f"{speed:>10.1f}")


if __name__ == "__main__":
    main()
