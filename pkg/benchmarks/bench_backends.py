"""Compare the compiled core with the pure-Python fallback.

Usage: python benchmarks/bench_backends.py [--frames N] [--traces N]

Times a frame-loop simulation and a batch of random decodes on each
available backend, checks that both produce identical output, and prints
the per-unit cost and the speedup.
"""

import argparse
import time

import numpy as np

from irsa_eh import _backend
from irsa_eh.decode import decode_batch
from irsa_eh.model import DegreeDistribution, SystemConfig
from irsa_eh.sim import run_simulation


def random_batch(count, num_slots=20, seed=0):
    rng = np.random.default_rng(seed)
    trace_ptr, dev_ptr, edge_slot, edge_tx = [0], [0], [], []
    for _ in range(count):
        for _ in range(int(rng.integers(1, 16))):
            d = int(rng.integers(1, 6))
            edge_slot.extend(rng.choice(num_slots, d, replace=False).tolist())
            edge_tx.extend((rng.random(d) >= 0.2).astype(np.uint8).tolist())
            dev_ptr.append(len(edge_slot))
        trace_ptr.append(len(dev_ptr) - 1)
    return num_slots, np.array(trace_ptr), np.array(dev_ptr), np.array(edge_slot), np.array(edge_tx, np.uint8)


def timed(fn, repeat=3):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--traces", type=int, default=3000)
    args = ap.parse_args()

    backends = _backend.available()
    config = SystemConfig(1000, 100, 0.001, 2, 0.02, 5)
    dist = DegreeDistribution.fixed(3, 5)
    batch = random_batch(args.traces)

    rows, sims, decs = [], {}, {}
    for name in backends:
        t_sim, sims[name] = timed(lambda: run_simulation(config, dist, "identify", args.frames, 0, seed=1,
                                                         backend=name), repeat=1 if name == "python" else 3)
        t_dec, decs[name] = timed(lambda: decode_batch(*batch, "identify", backend=name))
        rows.append((name, 1e6 * t_sim / args.frames, 1e6 * t_dec / args.traces))

    print(f"{'backend':<10} {'us/frame':>12} {'us/decode':>12}")
    for name, per_frame, per_decode in rows:
        print(f"{name:<10} {per_frame:12.1f} {per_decode:12.2f}")
    if len(rows) == 2:
        (_, fc, dc), (_, fp, dp) = rows
        print(f"speedup    {fp / fc:12.1f}x {dp / dc:11.1f}x")
        same = sims["compiled"].to_dict() == sims["python"].to_dict()
        same &= bool(np.array_equal(decs["compiled"], decs["python"]))
        print("outputs identical" if same else "OUTPUTS DIFFER")
    else:
        print("only one backend available; build the extension to compare")


if __name__ == "__main__":
    main()
