"""Evaluation metrics: identification (EM, F1) and calling (EM, tool
accuracy, parameter accuracy), per record and aggregated.

Unlike the reward path, the metric path gives no partial credit on
parameters: a call either matches its ground-truth parameter map exactly or
it does not.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .dataconstruct import DatasetRecord
from .registry import ToolRegistry
from .rewards import match_call_indices, normalize_calls, token_set
from .trajectory import ParseError, Step, ToolCall, extract_steps, params_equal, parse

TURN_SCOPES = ("final", "per_step")


class UnknownRecordId(Exception):
    pass


def eval_identification(pred_tokens: set[str], gt_tokens: set[str]) -> tuple[int, float]:
    """(exact match, F1) over token sets.

    Conventions: both empty -> (1, 1.0); exactly one empty -> (0, 0.0).
    """
    pred, gt = set(pred_tokens), set(gt_tokens)
    em = int(pred == gt)
    if not pred and not gt:
        return 1, 1.0
    if not pred or not gt:
        return 0, 0.0
    overlap = len(pred & gt)
    if overlap == 0:
        return em, 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gt)
    return em, 2 * precision * recall / (precision + recall)


def eval_calling(
    pred_calls: Sequence[ToolCall], gt_calls: Sequence[ToolCall]
) -> tuple[int, int, int]:
    """(EM, tool accuracy, parameter accuracy), each 0 or 1.

    Tool accuracy requires token-set equality. Parameter accuracy requires
    every ground-truth call to have a token-matched prediction with an
    exactly equal parameter map, and charges any extra same-token predicted
    call against the record. EM additionally requires equal call counts.
    """
    tool_acc = int(token_set(pred_calls) == token_set(gt_calls))
    indices = match_call_indices(pred_calls, gt_calls)
    param_ok = all(
        i is not None and params_equal(pred_calls[i].parameters, gt.parameters)
        for gt, i in zip(gt_calls, indices)
    )
    if param_ok:
        matched = {i for i in indices if i is not None}
        gt_tokens = token_set(gt_calls)
        for i, pred in enumerate(pred_calls):
            if i not in matched and pred.token_surface in gt_tokens:
                param_ok = False
                break
    param_acc = int(param_ok)
    em = int(bool(tool_acc and param_acc and len(pred_calls) == len(gt_calls)))
    return em, tool_acc, param_acc


@dataclass(frozen=True)
class RecordMetrics:
    record_id: str
    ident_em: float
    ident_f1: float
    call_em: float
    tool_acc: float
    param_acc: float
    missing: bool = False

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "ident_em": self.ident_em,
            "ident_f1": self.ident_f1,
            "call_em": self.call_em,
            "tool_acc": self.tool_acc,
            "param_acc": self.param_acc,
            "missing": self.missing,
        }


@dataclass(frozen=True)
class EvalReport:
    """Aggregate percentages in [0, 100] plus per-record detail."""

    ident_em: float
    ident_f1: float
    call_em: float
    tool_acc: float
    param_acc: float
    n: int
    turn_scope: str
    per_record: tuple[RecordMetrics, ...] = ()

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "ident_em": self.ident_em,
            "ident_f1": self.ident_f1,
            "call_em": self.call_em,
            "tool_acc": self.tool_acc,
            "param_acc": self.param_acc,
            "n": self.n,
            "turn_scope": self.turn_scope,
        }

    def format_table(self) -> str:
        rows = [
            ("ident_em", self.ident_em),
            ("ident_f1", self.ident_f1),
            ("call_em", self.call_em),
            ("tool_acc", self.tool_acc),
            ("param_acc", self.param_acc),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
        for name, value in rows:
            lines.append(f"{name:<{width}}  {value:6.2f}")
        lines.append(f"{'n':<{width}}  {self.n:6d}")
        return "\n".join(lines)

    def per_record_jsonl(self) -> str:
        return "\n".join(json.dumps(r.to_json(), ensure_ascii=False) for r in self.per_record)


def _identified_surfaces(step: Step) -> set[str]:
    # The identification metric reads the token block when the step has one;
    # a bare call block still identifies tools through its calls.
    if step.has_token_block:
        return set(step.surfaces)
    return token_set(step.calls)


_EMPTY_STEP = Step(surfaces=[], calls=[], has_token_block=False)


def _step_metrics(
    pred: Step, gt_calls: Sequence[ToolCall], registry: ToolRegistry | None
) -> tuple[float, float, float, float, float]:
    pred_calls = normalize_calls(pred.calls, registry)
    pred_tokens = {
        s if registry is None or registry.resolve(s) is not None else (registry.surface_for_name(s) or s)
        for s in _identified_surfaces(pred)
    }
    gt = normalize_calls(gt_calls, registry)
    em, f1 = eval_identification(pred_tokens, token_set(gt))
    call_em, tool_acc, param_acc = eval_calling(pred_calls, gt)
    return float(em), float(f1), float(call_em), float(tool_acc), float(param_acc)


def _record_metrics(
    record: DatasetRecord,
    text: str | None,
    registry: ToolRegistry | None,
    turn_scope: str,
) -> RecordMetrics:
    zeros = RecordMetrics(record.id, 0.0, 0.0, 0.0, 0.0, 0.0, missing=text is None)
    if text is None:
        return zeros
    try:
        trajectory = parse(text)
    except ParseError:
        return zeros
    steps = extract_steps(trajectory)
    gt_steps = record.gt_steps()
    if turn_scope == "final":
        pred = steps[-1] if steps else _EMPTY_STEP
        gt = gt_steps[-1] if gt_steps else []
        values = _step_metrics(pred, gt, registry)
    else:
        rows = max(len(steps), len(gt_steps))
        if rows == 0:
            values = _step_metrics(_EMPTY_STEP, [], registry)
        else:
            acc = [0.0] * 5
            for i in range(rows):
                pred = steps[i] if i < len(steps) else _EMPTY_STEP
                gt = gt_steps[i] if i < len(gt_steps) else []
                for j, v in enumerate(_step_metrics(pred, gt, registry)):
                    acc[j] += v
            values = tuple(v / rows for v in acc)
    return RecordMetrics(record.id, *values)


def evaluate_dataset(
    predictions: Mapping[str, str],
    dataset: Sequence[DatasetRecord],
    registry: ToolRegistry | None = None,
    turn_scope: str = "final",
) -> EvalReport:
    """Score per-record predicted trajectories against the dataset.

    Missing predictions score zero rather than being excluded, keeping ``n``
    comparable across systems. ``per_step`` scope averages within a record
    before averaging across records.
    """
    if turn_scope not in TURN_SCOPES:
        raise ValueError(f"turn_scope must be one of {TURN_SCOPES}")
    ids = {record.id for record in dataset}
    unknown = set(predictions) - ids
    if unknown:
        raise UnknownRecordId(f"predictions for unknown record ids: {sorted(unknown)[:5]}")
    per_record = tuple(
        _record_metrics(record, predictions.get(record.id), registry, turn_scope)
        for record in dataset
    )
    n = len(per_record)

    def pct(getter) -> float:
        if n == 0:
            return 0.0
        return 100.0 * math.fsum(getter(r) for r in per_record) / n

    return EvalReport(
        ident_em=pct(lambda r: r.ident_em),
        ident_f1=pct(lambda r: r.ident_f1),
        call_em=pct(lambda r: r.call_em),
        tool_acc=pct(lambda r: r.tool_acc),
        param_acc=pct(lambda r: r.param_acc),
        n=n,
        turn_scope=turn_scope,
        per_record=per_record,
    )
