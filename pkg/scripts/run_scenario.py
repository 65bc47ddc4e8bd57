#!/usr/bin/env python3
"""Run a simulation scenario and report its assertions.

    python scripts/run_scenario.py --named baseline --seed 3
    python scripts/run_scenario.py --file scripts/scenarios/baseline.scenario
    python scripts/run_scenario.py --named churn --trace trace.ndjson

Exit status is nonzero when any of the scenario's named assertions
fails, so CI can run scenario files directly.
"""

import argparse
import sys

from edgeorc import codec, scenarios
from edgeorc.simnet import run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--named", choices=sorted(scenarios.NAMED), help="built-in scenario")
    source.add_argument("--file", help="scenario file in canonical form (one line)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trace", help="write the full event trace to this path")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()

    if args.named:
        scenario = scenarios.NAMED[args.named](args.seed)
    else:
        with open(args.file) as fh:
            scenario = codec.decode_line(fh.read().strip())

    sim = run_scenario(scenario)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(sim.trace_text() + "\n")

    failures = sim.check_assertions()
    if not args.quiet:
        print(f"ticks: {scenario.max_ticks}  trace entries: {len(sim.trace)}")
        from edgeorc.scheduler import Scheduler

        for scheduler in sim.nodes_of_type(Scheduler):
            for task_id, record in sorted(scheduler.tasks.items()):
                print(f"  {task_id}: {record.state.value}")
        for name in scenario.assertions:
            status = "FAIL" if name in failures else "ok"
            print(f"assertion {name}: {status}")
            for problem in failures.get(name, []):
                print(f"    {problem}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
