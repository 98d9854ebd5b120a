#!/usr/bin/env python3
"""Measure classify and cross-aura runtime against image size.

Both stages advertise runtime linear in the pixel count; this prints wall
times over a size sweep and the R^2 of a straight-line fit.  Run on a quiet
machine.
"""

import argparse
import time

import numpy as np

from specmap.classify import CategoricalMap, LegendEntry, classify
from specmap.raster import BandMetadata, MultiSpectralImage
from specmap.rules import load_specl
from specmap.segmentation import cross_aura

WAVELENGTHS = (0.48, 0.56, 0.66, 0.83, 1.6)


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def r_squared(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * np.asarray(x) + intercept
    ss_res = float(((np.asarray(y) - fitted) ** 2).sum())
    ss_tot = float(((np.asarray(y) - np.mean(y)) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sides", type=int, nargs="+",
                        default=[1024, 2048, 4096])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    ruleset = load_specl()
    bands = tuple(BandMetadata(i + 1, w) for i, w in enumerate(WAVELENGTHS))
    rng = np.random.default_rng(0)
    classify_times, aura_times, pixels = [], [], []
    for side in args.sides:
        pixels.append(side * side)
        samples = rng.random((5, side, side), dtype=np.float32)
        image = MultiSpectralImage(bands, samples,
                                   np.ones((side, side), dtype=bool))
        classify(image, ruleset)  # warm-up
        classify_times.append(best_time(lambda: classify(image, ruleset),
                                        args.repeats))
        del image, samples
        labels = rng.integers(1, 6, size=(side, side)).astype(np.int32)
        legend = tuple(LegendEntry(i, f"c{i}", (i, i, i)) for i in range(1, 6))
        cmap = CategoricalMap(labels, legend)
        aura_times.append(best_time(lambda: cross_aura(cmap, 8), args.repeats))
        del cmap, labels
        print(f"{side}x{side} ({pixels[-1] / 1e6:.0f} MP): "
              f"classify {classify_times[-1]:.3f} s, "
              f"cross_aura {aura_times[-1]:.3f} s")
    if len(pixels) >= 3:
        print(f"\nlinear fit: classify R^2 = {r_squared(pixels, classify_times):.4f}, "
              f"cross_aura R^2 = {r_squared(pixels, aura_times):.4f}")


if __name__ == "__main__":
    main()
