"""Training-example construction and loss aggregation.

This module prices sequences; it owns no optimizer and never touches model
weights. The policy tokenizes targets on its side and reports per-target-token
log-probabilities back over the wire, one list per example.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .dataconstruct import DatasetRecord, DatasetError, SftRecord
from .prompts import SYSTEM_PROMPT
from .registry import ToolRegistry
from .rewards import LengthMismatch
from .trajectory import (
    ParseError,
    Segment,
    SegmentKind,
    check_format,
    extract_steps,
    parse,
    render_segment,
)


class UnregisteredToolInDataset(DatasetError):
    pass


class MalformedTrajectoryInDataset(DatasetError):
    pass


class PositiveLogProb(Exception):
    pass


class Phase(str, Enum):
    MEMORIZATION = "memorization"
    RECALL = "recall"
    USAGE = "usage"
    SFT = "sft"


# Fixed instruction lines; versioned via PROMPT_VERSION alongside the system prompt.
MEMORIZATION_INSTRUCTION = "Identify the tool token for this documentation:"
RECALL_INSTRUCTION = "Reconstruct the documentation for this tool token:"


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    phase: Phase
    context_text: str
    target_text: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.target_text:
            raise ValueError("target text must be non-empty")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "phase": self.phase.value,
            "context": self.context_text,
            "target": self.target_text,
            "weight": self.weight,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainingExample":
        return cls(
            example_id=obj["example_id"],
            phase=Phase(obj["phase"]),
            context_text=obj["context"],
            target_text=obj["target"],
            weight=obj.get("weight", 1.0),
        )


@dataclass(frozen=True)
class LossReport:
    memorization: float
    recall: float
    usage: float
    phase1_total: float
    sft: float
    alpha: float
    beta: float
    token_counts: dict = field(default_factory=dict)

    def per_token_mean(self) -> dict:
        """Derived view only; the reported losses stay sums."""
        sums = {
            Phase.MEMORIZATION.value: self.memorization,
            Phase.RECALL.value: self.recall,
            Phase.USAGE.value: self.usage,
            Phase.SFT.value: self.sft,
        }
        return {
            phase: sums[phase] / count
            for phase, count in self.token_counts.items()
            if count > 0
        }

    def to_json(self) -> dict:
        return {
            "memorization": self.memorization,
            "recall": self.recall,
            "usage": self.usage,
            "phase1_total": self.phase1_total,
            "sft": self.sft,
            "alpha": self.alpha,
            "beta": self.beta,
            "token_counts": dict(self.token_counts),
        }


def _usage_target(record: DatasetRecord, registry: ToolRegistry) -> str:
    for step in record.gt_steps():
        for call in step:
            if registry.resolve(call.token_surface) is None:
                raise UnregisteredToolInDataset(
                    f"record {record.id!r}: token {call.token_surface!r} not in registry"
                )
    calls = [call for step in record.turns[0].steps for call in step]
    if not calls:
        raise DatasetError(f"record {record.id!r} has no ground-truth calls for a usage example")
    return render_segment(Segment(SegmentKind.CALL_BLOCK, calls))


def build_phase1_examples(
    registry: ToolRegistry, dataset: Sequence[DatasetRecord]
) -> list[TrainingExample]:
    """Two alignment examples per tool plus one usage example per record.

    Memorization: documentation -> token surface. Recall: token surface ->
    documentation. Usage: instruction -> canonical call block of the record's
    first-turn action (which may hold several calls).
    """
    examples: list[TrainingExample] = []
    for i, doc in enumerate(registry.tools):
        surface = registry.surface_of(i)
        canon = doc.canonical_text()
        examples.append(
            TrainingExample(
                example_id=f"mem:{i}",
                phase=Phase.MEMORIZATION,
                context_text=f"{canon}\n{MEMORIZATION_INSTRUCTION}",
                target_text=surface,
            )
        )
        examples.append(
            TrainingExample(
                example_id=f"recall:{i}",
                phase=Phase.RECALL,
                context_text=f"{surface}\n{RECALL_INSTRUCTION}",
                target_text=canon,
            )
        )
    for record in dataset:
        examples.append(
            TrainingExample(
                example_id=f"usage:{record.id}",
                phase=Phase.USAGE,
                context_text=record.instruction,
                target_text=_usage_target(record, registry),
            )
        )
    return examples


def build_sft_examples(
    sft_dataset: Sequence[SftRecord], registry: ToolRegistry
) -> list[TrainingExample]:
    """One example per (instruction, trajectory) record.

    The trajectory text must re-parse, pass the format check, and reference
    only registered token surfaces in its call blocks -- an unsubstituted raw
    tool name is a formatting defect, not a silent pass-through.
    """
    examples = []
    for record in sft_dataset:
        try:
            trajectory = parse(record.trajectory_text)
        except ParseError as exc:
            raise MalformedTrajectoryInDataset(f"record {record.id!r}: {exc.reason}") from exc
        if not check_format(record.trajectory_text):
            raise MalformedTrajectoryInDataset(f"record {record.id!r}: trajectory fails format check")
        for step in extract_steps(trajectory):
            for call in step.calls:
                if registry.resolve(call.token_surface) is not None:
                    continue
                if registry.index_of_name(call.token_surface) is not None:
                    raise MalformedTrajectoryInDataset(
                        f"record {record.id!r}: unsubstituted tool name {call.token_surface!r}"
                    )
                raise MalformedTrajectoryInDataset(
                    f"record {record.id!r}: unknown token {call.token_surface!r}"
                )
        examples.append(
            TrainingExample(
                example_id=f"sft:{record.id}",
                phase=Phase.SFT,
                context_text=f"{SYSTEM_PROMPT}\n<user>{record.instruction}</user>",
                target_text=record.trajectory_text,
            )
        )
    return examples


def aggregate_losses(
    examples: Sequence[TrainingExample],
    logprobs: Sequence[Sequence[float]],
    alpha: float = 1.0,
    beta: float = 1.0,
) -> LossReport:
    """Sum negative log-probabilities per phase and combine.

    ``logprobs`` runs parallel to ``examples``; each inner list holds one
    value per target token under the policy's own tokenization. Losses are
    sums, not means; ``LossReport.per_token_mean`` exposes the derived view.
    """
    if len(examples) != len(logprobs):
        raise LengthMismatch(f"{len(examples)} examples but {len(logprobs)} logprob lists")
    sums = {phase: [] for phase in Phase}
    counts = {phase: 0 for phase in Phase}
    for example, lps in zip(examples, logprobs):
        for lp in lps:
            if lp > 0:
                raise PositiveLogProb(f"example {example.example_id}: logprob {lp} > 0")
        sums[example.phase].append(example.weight * -math.fsum(lps))
        counts[example.phase] += len(lps)
    memorization = math.fsum(sums[Phase.MEMORIZATION])
    recall = math.fsum(sums[Phase.RECALL])
    usage = math.fsum(sums[Phase.USAGE])
    sft = math.fsum(sums[Phase.SFT])
    return LossReport(
        memorization=memorization,
        recall=recall,
        usage=usage,
        phase1_total=memorization + alpha * recall + beta * usage,
        sft=sft,
        alpha=alpha,
        beta=beta,
        token_counts={phase.value: counts[phase] for phase in Phase},
    )


def save_examples(examples: Sequence[TrainingExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example.to_json(), ensure_ascii=False) + "\n")


def load_examples(path: str | Path) -> list[TrainingExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(TrainingExample.from_json(json.loads(line)))
    return examples
