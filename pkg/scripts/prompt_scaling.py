#!/usr/bin/env python3
"""Measure prompt size versus toolset size for the two prompting regimes.

The token-identification regime keeps the pre-identification prompt constant
regardless of how many tools are registered; inlining every tool's
documentation grows without bound. Prints one table row per toolset size.
"""

import argparse

from tokencall.prompts import render_docs_in_prompt, render_prompt
from tokencall.registry import build_registry
from tokencall.synth import synth_toolset
from tokencall.trajectory import Trajectory, Turn


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--sizes", default="100,1000,10000", help="comma-separated toolset sizes"
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    trajectory = Trajectory(turns=[Turn(user_text="Can you check three things for me?")])
    print(f"{'tools':>8}  {'token-prompt bytes':>19}  {'docs-in-prompt bytes':>21}  {'ratio':>8}")
    for n in sizes:
        registry = build_registry(synth_toolset(n, seed=args.seed), "atomic")
        lean = len(render_prompt(trajectory).encode())
        heavy = len(render_docs_in_prompt(registry, trajectory).encode())
        print(f"{n:>8}  {lean:>19}  {heavy:>21}  {heavy / lean:>8.1f}")


if __name__ == "__main__":
    main()
