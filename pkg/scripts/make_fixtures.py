#!/usr/bin/env python3
"""Write a self-contained fixture workspace for driving the CLI by hand.

Produces tools.json, registry.json, dataset JSONLs, a candidate-trajectory
batch (some planted defects), a scripted-policy file for `simulate`, and a
harness config wired to the generated paths.
"""

import argparse
import json
from pathlib import Path

from tokencall.config import Config, render_config
from tokencall.registry import build_registry, serialize_registry
from tokencall.dataconstruct import save_dataset
from tokencall.synth import (
    oracle_script,
    perfect_trajectory_text,
    synth_records,
    synth_toolset,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures", help="output directory")
    parser.add_argument("--tools", type=int, default=60)
    parser.add_argument("--records", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tools = synth_toolset(args.tools, seed=args.seed)
    (out / "tools.json").write_text(
        json.dumps([t.to_json() for t in tools], indent=2, ensure_ascii=False)
    )
    registry = build_registry(tools, "atomic")
    (out / "registry.json").write_bytes(serialize_registry(registry))

    records = synth_records(registry, args.records, seed=args.seed + 1)
    save_dataset(records, out / "train.jsonl")

    candidates = []
    for i, record in enumerate(records):
        good = perfect_trajectory_text(record)
        candidates.append({"record_id": record.id, "text": good})
        if i % 3 == 0:  # plant a malformed sibling to exercise the filter
            candidates.append({"record_id": record.id, "text": good.replace("</response>", "")})
    (out / "candidates.jsonl").write_text(
        "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in candidates)
    )

    script_rows = [
        {"record_id": r.id, "responses": oracle_script(r, registry)} for r in records
    ]
    (out / "script.jsonl").write_text(
        "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in script_rows)
    )

    config = Config(
        registry_path=str(out / "registry.json"),
        dataset_paths={"train": str(out / "train.jsonl")},
    )
    (out / "harness.cfg").write_text(render_config(config))

    print(f"fixture workspace written to {out}/")
    print(f"  {args.tools} tools, {args.records} records, {len(candidates)} candidate trajectories")
    print("try:")
    print(f"  tokencall registry inspect --registry {out}/registry.json")
    print(f"  tokencall data candidates --config {out}/harness.cfg --dataset {out}/train.jsonl")
    print(f"  tokencall simulate --registry {out}/registry.json --dataset {out}/train.jsonl --script {out}/script.jsonl")


if __name__ == "__main__":
    main()
