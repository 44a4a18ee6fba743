#!/usr/bin/env python3
"""Full demonstration-to-deployment round trip in virtual time:
collect demos, verify record/replay byte-determinism, train a k-NN policy,
execute it, and print the discrepancy report."""

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from clawlink.scenarios import ClawRigParams, run_demo, run_policy, run_replay
from clawlink.sync import discrepancy_log, train_bc


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--demos", type=int, default=10)
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--work-dir", default=None)
    args = ap.parse_args()

    work = Path(args.work_dir or tempfile.mkdtemp(prefix="claw_bc_"))
    work.mkdir(parents=True, exist_ok=True)
    params = ClawRigParams()

    episodes = []
    for i in range(args.demos):
        episodes.append(run_demo(i, work / f"demo_{i}.mgcl", params))
    print(f"collected {args.demos} demos in {work}")

    demo0 = episodes[0]
    run_replay(demo0, work / "replayed.mgcl", params)
    identical = ((work / "demo_0.mgcl").read_bytes()
                 == (work / "replayed.mgcl").read_bytes())
    print(f"record -> replay -> record byte-identical: {identical}")

    policy = train_bc(episodes, k=args.k)
    executed = run_policy(
        policy, len(demo0.frames) - 1, work / "executed.mgcl", params,
        start_x=float(demo0.frames[0].pose.position[0]),
        end_s=float(demo0.header.meta["record_end_s"]))
    report = discrepancy_log(demo0, executed)
    print("discrepancy(demo, executed):")
    print(json.dumps(report.summary(), indent=2))
    return 0 if identical else 1


if __name__ == "__main__":
    sys.exit(main())
