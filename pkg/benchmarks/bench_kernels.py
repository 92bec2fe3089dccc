"""Compare the numba and numpy kernel paths.

Per-kernel timings call both kernel sets in-process. The end-to-end number
(one forward+backward evaluation of the full objective on the reference
surrogate) runs in a subprocess per backend so the env flag takes effect.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sgha._kernels import NUMBA_KERNELS, NUMPY_KERNELS

E2E = r"""
import json, timeit
import numpy as np
from sgha import _kernels
from sgha.anchors import ReferencePool, build_anchor_set
from sgha.objectives import LossWeights, evaluate, prepare_text_target
from sgha.surrogate import SurrogateConfig, init_model, tokenize
from sgha.synthetic import synthetic_images
m = init_model(SurrogateConfig())
tok = tokenize("a red sports car parked on a street")
aset = build_anchor_set(ReferencePool.from_images(synthetic_images(6, 0)), m, tok, 5, 5.0, (7, 9, 11))
text = prepare_text_target(m, tok, (7, 9, 11))
x = synthetic_images(1, 1)[0]
w = LossWeights()
evaluate(m, x, text, aset, w)
n = {repeat}
t = min(timeit.repeat(lambda: evaluate(m, x, text, aset, w), number=n, repeat=3)) / n
print(json.dumps({{"backend": _kernels.backend_name(), "seconds": t}}))
"""


def kernel_cases(rng):
    x = rng.normal(size=(65, 32))
    g, b = rng.normal(size=32), rng.normal(size=32)
    z = rng.normal(size=(65, 128))
    s = rng.normal(size=(4 * 65, 65))
    img = rng.uniform(size=(64, 64))
    taps = np.exp(-((np.arange(11) - 5) ** 2) / 4.5)
    taps /= taps.sum()
    return {
        "layernorm_fwd": lambda k: k.layernorm_fwd(x, g, b),
        "layernorm_bwd": lambda k: k.layernorm_bwd(x, x, np.ones(65), g),
        "quick_gelu_fwd": lambda k: k.quick_gelu_fwd(z),
        "quick_gelu_bwd": lambda k: k.quick_gelu_bwd(z, z),
        "softmax_fwd": lambda k: k.softmax_fwd(s),
        "softmax_bwd": lambda k: k.softmax_bwd(s, s),
        "filter_valid": lambda k: k.filter_valid(img, taps),
    }


def best_of(fn, number):
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def end_to_end(flag, repeat):
    env = dict(os.environ, SGHA_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", E2E.format(repeat=repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200, help="calls per timing sample")
    args = ap.parse_args()
    if NUMBA_KERNELS is None:
        sys.exit("numba is not installed; nothing to compare")

    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<16}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, call in cases.items():
        call(NUMBA_KERNELS)  # compile
        t_np = best_of(lambda: call(NUMPY_KERNELS), args.repeat)
        t_nb = best_of(lambda: call(NUMBA_KERNELS), args.repeat)
        print(f"{name:<16}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.2f}x")

    reps = max(1, args.repeat // 10)
    np_run = end_to_end("1", reps)
    nb_run = end_to_end("0", reps)
    print()
    print("full objective, forward + backward on the reference surrogate:")
    for r in (np_run, nb_run):
        print(f"  {r['backend']:<6} {r['seconds'] * 1e3:8.2f} ms")
    print(f"  speedup {np_run['seconds'] / nb_run['seconds']:.2f}x")


if __name__ == "__main__":
    main()
