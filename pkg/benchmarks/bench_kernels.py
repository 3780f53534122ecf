"""Time the numpy and numba implementations of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Numba timings exclude the first (compiling) call.  A training-step
benchmark runs the full dual-stream forward/backward under each backend.
"""

import argparse
import json
import timeit

import numpy as np

from quartet import _accel, kernels
from quartet import numcore as nc
from quartet.models import DualStreamConfig, DualStreamTransformer, next_token_loss


def cases(rng):
    x = rng.standard_normal((16, 150, 150)).astype(np.float32)
    allowed = np.tril(np.ones((150, 150), bool), -1)
    p = kernels.impl("softmax", "numpy")(x, allowed)
    g = rng.standard_normal(x.shape).astype(np.float32)
    h = rng.standard_normal((2400, 256)).astype(np.float32)
    gain = np.ones(256, np.float32)
    bias = np.zeros(256, np.float32)
    _, xhat, rstd = kernels.impl("layernorm", "numpy")(h, gain, bias, np.float32(1e-5))
    logits = rng.standard_normal((2400, 833)).astype(np.float32)
    targets = rng.integers(0, 833, 2400)
    grades = rng.integers(1, 6, 5000).astype(np.float64)
    doubled = 2 * np.arange(1, 26, dtype=np.int64)
    return {
        "softmax": (x, allowed),
        "softmax_bwd": (p, g),
        "layernorm": (h, gain, bias, np.float32(1e-5)),
        "layernorm_bwd": (h, xhat, rstd, gain),
        "sparse_ce": (logits, targets),
        "midrank": (grades,),
        "signed_rank_counts": (doubled,),
    }


def bench(fn, args, repeat):
    fn(*args)  # warm-up / compile
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def train_step_time(backend, repeat):
    prev = kernels.set_backend(backend)
    try:
        rng = np.random.default_rng(0)
        model = DualStreamTransformer(DualStreamConfig(duration_vocab=40, dropout=0.0), seed=0)
        p = rng.integers(0, 126, (8, 150))
        d = rng.integers(0, 40, (8, 150))

        def step():
            lo = next_token_loss(model, p, d)
            nc.backward(lo)
            nc.zero_grads(model.params().values())

        return bench(step, (), max(3, repeat // 5))
    finally:
        kernels.set_backend(prev)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    rng = np.random.default_rng(0)
    results = {}
    for name, a in cases(rng).items():
        results[name] = {b: bench(kernels.impl(name, b), a, args.repeat) for b in backends}
    results["train_step"] = {b: train_step_time(b, args.repeat) for b in backends}

    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, r in results.items():
        line = f"{name:<20}" + "".join(f"{r[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{r['numpy'] / r['numba']:>11.2f}x"
        print(line)
    if not _accel.HAVE_NUMBA:
        print("numba not installed; numpy path only")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
