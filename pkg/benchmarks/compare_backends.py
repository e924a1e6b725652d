"""Time the compiled and numpy kernel backends on the same synthetic scan.

    python benchmarks/compare_backends.py --n 120000 --m 2048 --k 5
"""
import argparse

from ppseg import kernels
from ppseg.baseline import bench_backends, bench_compare, pick_grid
from ppseg.synthetic import cloud_of_size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=120_000)
    ap.add_argument("--m", type=int, default=2048)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--radius", type=float, default=1.0)
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--width", type=int, default=512)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    cloud = cloud_of_size(args.n)
    rows = bench_backends(cloud, args.height, args.width, args.m, args.k, args.radius, args.reps)
    by_kernel = {}
    for kname, backend, ms in rows:
        by_kernel.setdefault(kname, {})[backend] = ms
    print(f"{'kernel':<14s}" + "".join(f"{b:>12s}" for b in kernels.backends()) + "     ratio")
    for kname, times in by_kernel.items():
        cells = "".join(f"{times[b]:>10.3f}ms" for b in kernels.backends())
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kname:<14s}{cells}  {ratio:7.1f}x")

    oh, ow = pick_grid(args.height, args.width, args.m)
    cfg = dict(height=args.height, width=args.width, out_height=oh, out_width=ow, k=args.k, radius=args.radius)
    # the point-domain baseline is timed once, with the active backend
    names = sorted(kernels.backends(), key=lambda b: b != kernels.BACKEND)
    for i, backend in enumerate(names):
        for r in bench_compare(cloud, [cfg], reps=args.reps, backend=backend, include_baseline=i == 0):
            print(f"{r.method:<16s} {r.backend:<7s} {r.median_ms:10.3f} ms")


if __name__ == "__main__":
    main()
