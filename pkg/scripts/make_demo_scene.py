#!/usr/bin/env python3
"""Generate a synthetic calibrated scene and run the full pipeline on it.

Writes scene.hdr/.bin into the output directory, then drives classify and
segment through the command-line entry points so the demo exercises exactly
what a user would run.
"""

import argparse
import subprocess
import sys
from pathlib import Path

import numpy as np

from specmap.raster import BandMetadata, MultiSpectralImage, write_image

WAVELENGTHS = {"b1": 0.48, "b2": 0.56, "b3": 0.66, "b4": 0.83, "b5": 1.6, "b7": 2.2}

# (b1, b2, b3, b4, b5, b7) reflectance profiles spanning water, vegetation,
# soil, snow and cloud responses, plus one outlier profile.
PROFILES = np.array([
    [0.020, 0.030, 0.020, 0.010, 0.010, 0.010],
    [0.020, 0.020, 0.015, 0.005, 0.005, 0.005],
    [0.030, 0.080, 0.050, 0.550, 0.250, 0.120],
    [0.030, 0.080, 0.050, 0.350, 0.200, 0.100],
    [0.100, 0.120, 0.150, 0.300, 0.350, 0.250],
    [0.800, 0.750, 0.700, 0.600, 0.050, 0.030],
    [0.600, 0.600, 0.600, 0.600, 0.400, 0.300],
    [0.290, 0.250, 0.250, 0.120, 0.300, 0.300],
])


def make_scene(height, width, seed, block=32):
    rng = np.random.default_rng(seed)
    gh = (height + block - 1) // block
    gw = (width + block - 1) // block
    grid = rng.integers(0, len(PROFILES), size=(gh, gw))
    regions = np.kron(grid, np.ones((block, block), dtype=np.int64))
    samples = PROFILES[regions[:height, :width]].transpose(2, 0, 1).copy()
    samples += rng.uniform(-0.004, 0.004, size=samples.shape)
    np.clip(samples, 0.001, 0.999, out=samples)
    gain = 1.0 / 65535.0
    samples = np.rint(samples / gain) * gain
    bands = tuple(
        BandMetadata(i + 1, w, gain=gain, nodata_value=0.0)
        for i, w in enumerate(WAVELENGTHS.values())
    )
    validity = np.ones((height, width), dtype=bool)
    return MultiSpectralImage(bands, samples, validity, "u16")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_run"))
    parser.add_argument("--height", type=int, default=512)
    parser.add_argument("--width", type=int, default=512)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stream", type=int, default=64)
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    scene = args.out / "scene.hdr"
    write_image(make_scene(args.height, args.width, args.seed), scene)
    print(f"wrote {scene} ({args.height}x{args.width}, 6 bands, u16)")

    from importlib.resources import files

    rules = files("specmap").joinpath("data/specl.rules")
    cmap = args.out / "colors.hdr"
    for cmd in (
        [sys.executable, "-m", "specmap.cli", "classify", "--rules", str(rules),
         "--in", str(scene), "--out", str(cmap), "--stream", str(args.stream)],
        [sys.executable, "-m", "specmap.cli", "segment", "--in", str(cmap),
         "--image", str(scene), "--out-prefix", str(args.out / "seg"),
         "--stream", str(args.stream), "--json"],
    ):
        print("+ " + " ".join(cmd[2:]))
        subprocess.run(cmd, check=True)


if __name__ == "__main__":
    main()
