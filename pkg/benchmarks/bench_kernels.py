"""Compare the numba and numpy kernel backends.

Times every hot kernel at the shapes used in training (batch 1000, widths
40 and 150) plus one full student training step per backend, and checks
the two backends agree on the outputs.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from regkd import kernels


def _cases(width, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, width))
    g = rng.normal(size=(n, width))
    gamma, beta = rng.uniform(0.5, 2, width), rng.normal(size=width)
    p, rt, t = rng.normal(size=n), rng.normal(size=n), rng.normal(0, 3, n)
    theta, grad = rng.normal(size=width * width), rng.normal(size=width * width)
    m, v = np.zeros_like(theta), np.zeros_like(theta)

    def bn_train(k):
        return k.bn_forward_train(x, gamma, beta, 1e-5)

    def bn_back(k):
        _, xhat, _, _, inv = k.bn_forward_train(x, gamma, beta, 1e-5)
        return k.bn_backward(g, xhat, gamma, inv)

    return {
        f"relu_forward[{n}x{width}]": lambda k: k.relu_forward(x),
        f"relu_backward[{n}x{width}]": lambda k: k.relu_backward(g, x),
        f"bn_forward_train[{n}x{width}]": bn_train,
        f"bn_forward+backward[{n}x{width}]": bn_back,
        f"dropout_mask[{n}x{width}]": lambda k: k.dropout_mask((n, width), 12345, 0.5),
        f"adam_update[{width * width}]": lambda k: k.adam_update(theta, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 1.0),
        f"tor_loss[{n}]": lambda k: k.tor_loss(p, rt, t, 2.0, False),
        f"tukey_loss[{n}]": lambda k: k.tukey_loss(p, t, 1.3, 4.685),
    }


def bench_kernels(repeat):
    backends = {"numpy": kernels.backend_module("numpy"), "numba": kernels.backend_module("numba")}
    rows = []
    for width in (40, 150):
        for name, fn in _cases(width).items():
            timing = {}
            for bname, mod in backends.items():
                fn(mod)  # compile / warm up
                timing[bname] = min(timeit.repeat(lambda: fn(mod), number=repeat, repeat=3)) / repeat
            rows.append({"kernel": name, **{f"{b}_us": 1e6 * s for b, s in timing.items()},
                         "speedup": timing["numpy"] / timing["numba"]})
    return rows


_STEP_SNIPPET = """
import json, time
import numpy as np
from regkd import kernels
from regkd.data import make_sinusoid
from regkd.training import student_config, train_student
ds = make_sinusoid(20_000, 3.0, seed=0)
cfg = student_config("student-l1", epochs=1, batch_size=1000)
train_student(ds, None, cfg)
t0 = time.perf_counter()
r = train_student(ds, None, student_config("student-l1", epochs=5, batch_size=1000))
dt = (time.perf_counter() - t0) / (5 * 20)
print(json.dumps({"backend": kernels.BACKEND, "step_ms": 1e3 * dt, "theta_sum": float(r.network.theta.sum())}))
"""


def bench_training_step():
    """One student step per backend, each in a fresh interpreter (the backend is fixed at import)."""
    out = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, REGKD_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", _STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
        out[backend] = json.loads(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rows = bench_kernels(args.repeat)
    print(f"{'kernel':34s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:34s} {r['numpy_us']:10.1f} {r['numba_us']:10.1f} {r['speedup']:8.2f}")
    steps = bench_training_step()
    print()
    for b, info in steps.items():
        print(f"student step (batch 1000, width 40), {b:5s}: {info['step_ms']:.3f} ms")
    # reductions are summed in a different order, so agreement is to rounding
    diff = abs(steps["numpy"]["theta_sum"] - steps["numba"]["theta_sum"])
    print(f"|sum(theta_numpy) - sum(theta_numba)| after 100 steps: {diff:.3e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "training_step": steps, "theta_sum_diff": diff}, fh, indent=2)


if __name__ == "__main__":
    main()
