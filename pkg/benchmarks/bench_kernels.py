"""Time the compiled and numpy ray-march kernels on one training-sized batch.

    python benchmarks/bench_kernels.py --rays 4096 --samples 128 --resolution 64

Each kernel runs ``--repeat`` times per backend; the best time is reported
along with the largest difference between the backends' outputs.
"""

import argparse
import time

import numpy as np

from archnerf.field import AdamState, FieldGradient, adam_step, init_field
from archnerf.kernels import available_backends
from archnerf.render import render_rays, render_rays_backward, stratified_batch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def make_problem(rays, samples, resolution, seed=0):
    rng = np.random.default_rng(seed)
    field = init_field((resolution,) * 3, seed, ((-3.3, -4.4, -0.2), (3.3, 4.4, 4.0)))
    field.params[..., 0] = rng.normal(-1.0, 2.0, field.params.shape[:3])
    origins = rng.uniform((-2, -3, 1), (2, 3, 2), (rays, 3))
    dirs = rng.normal(size=(rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    far = 10.8
    t = stratified_batch(rays, 0.05, far, samples, rng)
    g_color = rng.normal(size=(rays, 3))
    g_weights = rng.normal(size=(rays, samples))
    return field, origins, dirs, t, far, g_color, g_weights


def run(backend, problem, repeat):
    field, origins, dirs, t, far, g_color, g_weights = problem
    fwd_time, fwd = best_of(lambda: render_rays(field, origins, dirs, t, far, backend, keep_cache=True), repeat)
    bwd_time, grad = best_of(lambda: render_rays_backward(field, fwd, g_color, None, g_weights,
                                                          backend=backend).data, repeat)

    def adam():
        state = AdamState.for_params([field.params])
        params = field.params.copy()
        adam_step([params], [grad], state, 1e-2, backend=backend)
        return params
    adam_time, params = best_of(adam, repeat)
    return {"forward": fwd_time, "backward": bwd_time, "adam": adam_time}, (fwd.color, fwd.weights, grad, params)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--samples", type=int, default=128)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    problem = make_problem(args.rays, args.samples, args.resolution)
    results = {b: run(b, problem, args.repeat) for b in available_backends()}
    print(f"{args.rays} rays x {args.samples} samples, {args.resolution}^3 field, best of {args.repeat}")
    print(f"{'kernel':<10}" + "".join(f"{b + ' (s)':>14}" for b in results) + f"{'speedup':>10}")
    for k in ("forward", "backward", "adam"):
        row = [results[b][0][k] for b in results]
        speed = f"{row[-1] / row[0]:>9.1f}x" if len(row) == 2 else f"{'n/a':>10}"
        print(f"{k:<10}" + "".join(f"{x:>14.4f}" for x in row) + speed)
    if len(results) == 2:
        a, b = (results[name][1] for name in results)
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        print(f"max |cython - python| over outputs: {diff:.2e}")
    else:
        print("compiled kernels not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
