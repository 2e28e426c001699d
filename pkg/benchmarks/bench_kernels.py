"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times each kernel in isolation at a few batch/size shapes, then a full
phase-1 training step (forward + backward through reader and decoder),
which is where the kernels sit inside BLAS-bound matmuls.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from neatread import kernels
from neatread.model import ModelConfig, NeatModel, loss_and_grads


def kernel_cases(rng):
    for B, H in ((1, 64), (16, 64), (16, 256), (64, 1000)):
        z = rng.normal(size=(B, 4 * H))
        c = rng.normal(size=(B, H))
        yield f"gates_forward B={B} H={H}", lambda z=z, c=c: kernels.lstm_gates_forward(z, c)
        h, c2, acts, tc = kernels.lstm_gates_forward(z, c)
        dh = rng.normal(size=(B, H))
        dc = rng.normal(size=(B, H))
        yield (f"gates_backward B={B} H={H}",
               lambda dh=dh, dc=dc, a=acts, c=c, t=tc: kernels.lstm_gates_backward(dh, dc, a, c, t))
    for B, V in ((1, 2002), (16, 2002), (64, 10002)):
        logits = rng.normal(size=(B, V))
        tgt = rng.integers(0, V, size=B)
        yield f"softmax_xent B={B} V={V}", lambda x=logits, t=tgt: kernels.softmax_xent(x, t)


def train_step_case(rng):
    model = NeatModel(ModelConfig(vocab_size=2002, seq_len=20), seed=0)
    ids = rng.integers(2, 2002, size=(16, 20))
    mask = rng.random(ids.shape) < 0.62
    return "phase-1 step B=16 N=20 H=64 V=2002", lambda: loss_and_grads(model, ids, mask)


def best_time(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)
    results = {}
    start = kernels.BACKEND
    for backend in backends:
        kernels.use_backend(backend)
        rng = np.random.default_rng(0)
        cases = list(kernel_cases(rng)) + [train_step_case(rng)]
        for name, fn in cases:
            results.setdefault(name, {})[backend] = best_time(fn, args.repeat)
    kernels.use_backend(start)
    width = max(map(len, results))
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>12}" for b in backends) + "  speedup")
    for name, row in results.items():
        cells = "  ".join(f"{row[b] * 1e6:>10.1f}us" for b in backends)
        speed = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{name:<{width}}  {cells}  {speed:6.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
