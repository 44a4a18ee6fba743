#!/usr/bin/env python3
"""Collect seeded virtual-time pick demonstrations as episode files."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from clawlink.scenarios import ClawRigParams, run_demo


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="demos")
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--noise-sigma", type=float, default=0.0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = ClawRigParams(noise_sigma=args.noise_sigma)
    for i in range(args.count):
        path = out / f"demo_{i:03d}.mgcl"
        ep = run_demo(i, path, params)
        stalls = sum(f.grip.stalled for f in ep.frames)
        peak = max(abs(f.wrench_l.force[0]) for f in ep.frames)
        print(f"{path}: {len(ep.frames)} frames, {stalls} stalled, "
              f"peak tip force {peak:.3f} N")
    return 0


if __name__ == "__main__":
    sys.exit(main())
