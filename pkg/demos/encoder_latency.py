"""Time the three temporal encoders and the sparse positional product.

Writes the CSVs under ``demo_bench/`` and prints the median ratios.
"""

import os

from dualrec.bench import bench_positional, bench_temporal, write_csv


def main() -> None:
    temporal = bench_temporal(n_grid=(128, 512, 1000), batch_grid=(8,))
    positional = bench_positional(n_grid=(256, 1024))
    os.makedirs("demo_bench", exist_ok=True)
    write_csv(temporal, "demo_bench/temporal.csv")
    write_csv(positional, "demo_bench/positional.csv")
    for n in (128, 512, 1000):
        med = {r.case: r.median_ms for r in temporal if r.n == n}
        print(f"n={n:4d}  exp_power {med['exp_power']:7.2f} ms  bucket/exp {med['bucket'] / med['exp_power']:.2f}  "
              f"inverse/exp {med['inverse'] / med['exp_power']:.2f}  "
              f"unconverted/exp {med['exp_power_unconverted'] / med['exp_power']:.2f}")
    for dense, sparse in zip(positional[::2], positional[1::2]):
        print(f"n={dense.n:4d}  positional dense {dense.median_ms:.2f} ms  sparse {sparse.median_ms:.2f} ms  "
              f"counted cut {sparse.flops_reduction_percent:.1f}%")


if __name__ == "__main__":
    main()
