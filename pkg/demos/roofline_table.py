"""Per-tile ceilings and kernel estimates for the three precision paths.

    python demos/roofline_table.py
"""

from aiemap import default_aieml_device
from aiemap.device import IntDType
from aiemap.perf import memory_bound, peak_compute
from aiemap.report import kernel_reference, scaling_reference

PATHS = {"i8xi8": ("i8", "i8", "i32", "i8"), "i16xi8": ("i16", "i8", "i32", "i16"),
         "i16xi16": ("i16", "i16", "i64", "i16")}


def main():
    dev = default_aieml_device()
    print(f"{'path':8} {'MAC/cyc':>8} {'GMAC/s':>8} {'GOP/s':>8} {'no-reuse MAC/cyc':>17}")
    for key, names in PATHS.items():
        dt = tuple(IntDType.parse(n) for n in names)
        gmacs, gops = peak_compute(dt, dev)
        print(f"{key:8} {dev.macs(dt[0], dt[1]):>8} {gmacs:>8g} {gops:>8g} {memory_bound(dt, 1, dev):>17g}")
    print()
    for r in kernel_reference(dev):
        print(f"{r['workload']:18} model {r['model_gops']:6.1f} GOPS (+bias/relu {r['model_bias_relu_gops']:6.1f})"
              f"   board {r['measured_gops']:6.1f} ({r['measured_bias_relu_gops']:6.1f})")
    print()
    for r in scaling_reference(dev):
        print(f"{r['dtypes']:8} on {r['tiles']} tiles: model efficiency {100 * r['model_efficiency']:.1f}%"
              f", board {100 * r['measured_efficiency']:.1f}%")


if __name__ == "__main__":
    main()
