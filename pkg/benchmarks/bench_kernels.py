#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Times each hot kernel on training-shaped inputs plus one full episode
forward/backward, and prints a speedup table. Usage:

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from modref._kernels import compiled, numpy_backend


def timeit(fn, repeat):
    fn()  # warmup
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def kernel_cases(d=64, rows=10, heads=1):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, d)).astype(np.float32)
    g = rng.normal(size=(rows, d)).astype(np.float32)
    gain = np.ones(d, dtype=np.float32)
    bias = np.zeros(d, dtype=np.float32)
    q = rng.normal(size=(rows, d)).astype(np.float32)
    big = rng.normal(size=20_000).astype(np.float32)
    grad = rng.normal(size=20_000).astype(np.float32)

    def cases(backend):
        y = backend.softmax_fwd(x, 10.0)
        _, xhat, inv_std = backend.layer_norm_fwd(x, gain, bias, 1e-5)
        _, w = backend.attention_fwd(q, x, x, heads, False)
        m = np.zeros_like(big)
        v = np.zeros_like(big)
        return {
            "softmax_fwd": lambda: backend.softmax_fwd(x, 10.0),
            "softmax_bwd": lambda: backend.softmax_bwd(y, g, 10.0),
            "layer_norm_fwd": lambda: backend.layer_norm_fwd(x, gain, bias, 1e-5),
            "layer_norm_bwd": lambda: backend.layer_norm_bwd(g, xhat, inv_std, gain),
            "gelu_fwd": lambda: backend.gelu_fwd(x),
            "gelu_bwd": lambda: backend.gelu_bwd(x, g),
            "attention_fwd": lambda: backend.attention_fwd(q, x, x, heads, False),
            "attention_bwd": lambda: backend.attention_bwd(g, q, x, x, w, heads, False),
            "adam_step": lambda: backend.adam_step(big, grad, m, v, 3, 1e-3, 0.9, 0.999, 1e-8),
        }

    return cases


EPISODE_SNIPPET = """
import time

import numpy as np

from modref import dataio, encoders, episodic
from modref import numerics as nm

manifest, tensors = dataio.generate_fixture(5, 16, 64, 12, 0.0, 0.3)
refs = dataio.load_references(manifest, tensors)
gen = episodic.init_generator(np.random.default_rng(1), 64)
lang = encoders.synthesize_language_encoder(2, 64)
episode = episodic.sample_episode(refs, episodic.EpisodeSpec(k=8, class_batch=8), np.random.default_rng(0))

def step():
    loss = episodic.episode_loss(gen, lang, episode, rng=np.random.default_rng(3))
    nm.zero_grads(gen.parameters())
    loss.backward()

step()
start = time.perf_counter()
for _ in range({repeat}):
    step()
print((time.perf_counter() - start) / {repeat})
"""


def episode_step_time(backend_name, repeat):
    """Per-step time under a forced backend, measured in a fresh process.

    Backend selection happens at import, so a subprocess is the only clean
    way to compare both in one benchmark run.
    """
    import os
    import subprocess
    import sys

    env = dict(os.environ, MODREF_KERNELS=backend_name)
    result = subprocess.run(
        [sys.executable, "-c", EPISODE_SNIPPET.format(repeat=repeat)],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    return float(result.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--json", help="also dump results as JSON")
    args = parser.parse_args()

    if compiled is None:
        print("compiled kernels not built; run pip install -e . --no-build-isolation first")
        return 1

    results = {}
    make = kernel_cases()
    numpy_cases = make(numpy_backend)
    compiled_cases = make(compiled)
    print(f"{'kernel':<18} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name in numpy_cases:
        t_np = timeit(numpy_cases[name], args.repeat)
        t_c = timeit(compiled_cases[name], args.repeat)
        results[name] = {"numpy_us": t_np * 1e6, "compiled_us": t_c * 1e6}
        print(f"{name:<18} {t_np * 1e6:>8.1f}us {t_c * 1e6:>8.1f}us {t_np / t_c:>7.2f}x")

    step_times = {}
    for backend_name in ("numpy", "compiled"):
        step_times[backend_name] = episode_step_time(backend_name, max(3, args.repeat // 20))
    results["episode_step"] = {
        "numpy_ms": step_times["numpy"] * 1e3,
        "compiled_ms": step_times["compiled"] * 1e3,
    }
    print(
        f"{'episode_step':<18} {step_times['numpy'] * 1e3:>8.1f}ms "
        f"{step_times['compiled'] * 1e3:>8.1f}ms "
        f"{step_times['numpy'] / step_times['compiled']:>7.2f}x"
    )

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
