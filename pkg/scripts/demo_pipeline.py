#!/usr/bin/env python3
"""End-to-end walkthrough of the offline pipeline on synthetic data.

Builds a registry, samples candidate toolsets, filters planted candidate
trajectories against ground truth, formats accepted ones, prices training
examples under a uniform mock policy, drives the two-step loop with a
scripted policy, and evaluates the resulting trajectories.
"""

import math
import random

from tokencall.dataconstruct import filter_candidates, format_trajectory, sample_candidates
from tokencall.driver import canned_executor, new_session, run_turn, scripted_policy
from tokencall.losses import aggregate_losses, build_phase1_examples
from tokencall.metrics import evaluate_dataset
from tokencall.registry import build_registry
from tokencall.rewards import group_advantages, score
from tokencall.synth import oracle_script, perfect_trajectory_text, synth_records, synth_toolset
from tokencall.trajectory import serialize

VOCAB = 512


def main() -> None:
    rng = random.Random(0)
    registry = build_registry(synth_toolset(40, seed=1), "atomic")
    records = synth_records(registry, 12, seed=2)
    print(f"registry: {len(registry)} tools ({registry.strategy}); dataset: {len(records)} records")

    candidate_sets = [sample_candidates(r, registry, k=10, retrieved_count=5, seed=3) for r in records]
    print(f"candidates per record: {len(candidate_sets[0].candidates)} "
          f"(example provenance: {list(candidate_sets[0].provenance)})")

    accepted = 0
    formatted_texts = {}
    for record in records:
        good = perfect_trajectory_text(record)
        bad = good.replace("</response>", "")
        verdicts = filter_candidates([good, bad], record, registry)
        accepted += sum(v.accepted for v in verdicts)
        kept = next(v.trajectory for v in verdicts if v.accepted)
        formatted_texts[record.id] = serialize(format_trajectory(kept, registry))
    print(f"rejection filter: accepted {accepted} of {2 * len(records)} candidates")

    examples = build_phase1_examples(registry, records)
    logprobs = [[-math.log(VOCAB)] * max(1, len(e.target_text.split())) for e in examples]
    report = aggregate_losses(examples, logprobs)
    print(f"phase-1 losses under a uniform mock policy: total {report.phase1_total:.1f} "
          f"({report.token_counts})")

    rewards = []
    for record in records[:8]:
        noisy = formatted_texts[record.id] if rng.random() < 0.5 else "<think>hmm</think><response>pass</response>"
        rewards.append(score(noisy, record.gt_steps(), registry).total)
    group = group_advantages(rewards)
    print(f"sampled group rewards: {[round(r, 2) for r in rewards]}")
    print(f"advantages: {[round(a, 2) for a in group.advantages]} (degenerate={group.degenerate})")

    predictions = {}
    for record in records:
        session = new_session(registry)
        run_turn(session, record.instruction, scripted_policy(oracle_script(record, registry)),
                 canned_executor(record))
        predictions[record.id] = serialize(session.trajectory)
    print()
    print(evaluate_dataset(predictions, records, registry).format_table())


if __name__ == "__main__":
    main()
