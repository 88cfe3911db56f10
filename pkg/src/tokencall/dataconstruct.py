"""Data construction: dataset records, candidate tool sampling, rejection
filtering of externally generated trajectories, and tool-name -> token
formatting.

Trajectory synthesis itself happens outside this package (any generator can
feed candidate texts in through files or the service); this module keeps
only the deterministic plumbing around it.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .registry import ToolRegistry
from .rewards import match_calls, normalize_calls, token_set
from .trajectory import (
    Segment,
    SegmentKind,
    ToolCall,
    Trajectory,
    Turn,
    check_format,
    extract_steps,
    params_equal,
    parse,
)

SPLITS = ("train", "test_seen", "test_unseen", "ood")


class DatasetError(Exception):
    pass


class TooManyGroundTruthTools(DatasetError):
    pass


class UnknownToolNameInCall(DatasetError):
    pass


@dataclass
class RecordTurn:
    user_text: str
    steps: list[list[ToolCall]] = field(default_factory=list)
    # optional canned tool outputs, parallel to steps and to calls within a step
    observations: list[list[str]] | None = None


@dataclass
class DatasetRecord:
    id: str
    instruction: str
    turns: list[RecordTurn]
    split: str = "train"

    def gt_steps(self) -> list[list[ToolCall]]:
        """Ground-truth call groups flattened across turns, in order."""
        steps: list[list[ToolCall]] = []
        for turn in self.turns:
            steps.extend(list(step) for step in turn.steps)
        return steps

    def gt_tool_indices(self, registry: ToolRegistry) -> list[int]:
        """Distinct registry indices of ground-truth tools, first-use order."""
        seen: list[int] = []
        for step in self.gt_steps():
            for call in step:
                resolved = registry.resolve(call.token_surface)
                if resolved is None:
                    raise DatasetError(
                        f"record {self.id!r}: ground-truth token {call.token_surface!r} not in registry"
                    )
                idx = resolved[1].tool_index
                if idx not in seen:
                    seen.append(idx)
        return seen


def _call_from_json(obj: dict, registry: ToolRegistry | None, record_id: str) -> ToolCall:
    if not isinstance(obj, dict):
        raise DatasetError(f"record {record_id!r}: call must be an object")
    params = obj.get("parameters", {})
    if not isinstance(params, dict):
        raise DatasetError(f"record {record_id!r}: parameters must be an object")
    surface = obj.get("token")
    if surface is None:
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise DatasetError(f"record {record_id!r}: call needs a 'token' or 'name' string")
        surface = name
    if not isinstance(surface, str) or not surface:
        raise DatasetError(f"record {record_id!r}: call token must be a non-empty string")
    call = ToolCall(token_surface=surface, parameters=params)
    if registry is not None:
        call = normalize_calls([call], registry)[0]
    return call


def record_from_json(obj: dict, registry: ToolRegistry | None = None) -> DatasetRecord:
    """Build a record from the JSONL schema, normalizing names to surfaces.

    Schema: {id, split, turns: [{user, steps: [[{token|name, parameters}]],
    observations?: [[str]]}]}. For non-ood records every ground-truth token
    must resolve when a registry is supplied.
    """
    if not isinstance(obj, dict):
        raise DatasetError("record must be a JSON object")
    record_id = obj.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise DatasetError("record id must be a non-empty string")
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise DatasetError(f"record {record_id!r}: unknown split {split!r}")
    turns_json = obj.get("turns")
    if not isinstance(turns_json, list) or not turns_json:
        raise DatasetError(f"record {record_id!r}: turns must be a non-empty list")
    turns: list[RecordTurn] = []
    for turn_obj in turns_json:
        if not isinstance(turn_obj, dict):
            raise DatasetError(f"record {record_id!r}: turn must be an object")
        steps_json = turn_obj.get("steps", [])
        steps = [
            [_call_from_json(c, registry, record_id) for c in step] for step in steps_json
        ]
        observations = turn_obj.get("observations")
        turns.append(
            RecordTurn(user_text=turn_obj.get("user", ""), steps=steps, observations=observations)
        )
    record = DatasetRecord(
        id=record_id, instruction=turns[0].user_text, turns=turns, split=split
    )
    if registry is not None and split != "ood":
        for step in record.gt_steps():
            for call in step:
                if registry.resolve(call.token_surface) is None:
                    raise DatasetError(
                        f"record {record_id!r}: token {call.token_surface!r} not in registry"
                    )
    return record


def record_to_json(record: DatasetRecord) -> dict:
    turns = []
    for turn in record.turns:
        obj: dict = {
            "user": turn.user_text,
            "steps": [
                [{"token": c.token_surface, "parameters": c.parameters} for c in step]
                for step in turn.steps
            ],
        }
        if turn.observations is not None:
            obj["observations"] = turn.observations
        turns.append(obj)
    return {"id": record.id, "split": record.split, "turns": turns}


def load_dataset(path: str | Path, registry: ToolRegistry | None = None) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            records.append(record_from_json(obj, registry))
    ids = [r.id for r in records]
    if len(ids) != len(set(ids)):
        raise DatasetError(f"{path}: duplicate record ids")
    return records


def save_dataset(records: list[DatasetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Candidate tool sampling

PROVENANCE = ("ground_truth", "retrieved", "random")


@dataclass(frozen=True)
class CandidateSet:
    record_id: str
    candidates: tuple[int, ...]
    provenance: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "candidates": list(self.candidates),
            "provenance": list(self.provenance),
        }


_WORD_RE = re.compile(r"\w+")

BM25_K1 = 1.2
BM25_B = 0.75


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def lexical_rank(query: str, registry: ToolRegistry) -> list[tuple[int, float]]:
    """BM25 ranking (k1=1.2, b=0.75) of the query against serialized docs.

    Query tokens are scored as-is (repeats contribute repeatedly); document
    frequency uses the Robertson idf with +1 smoothing. Ties break toward
    the lower tool index; the full ordering is returned.
    """
    docs = [_tokenize(doc.canonical_text()) for doc in registry.tools]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    tfs = [Counter(d) for d in docs]
    df: Counter = Counter()
    for tf in tfs:
        df.update(tf.keys())
    idf = {t: math.log((n - c + 0.5) / (c + 0.5) + 1.0) for t, c in df.items()}
    query_tokens = _tokenize(query)
    scored = []
    for i, tf in enumerate(tfs):
        dl = len(docs[i])
        norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl)
        s = 0.0
        for term in query_tokens:
            f = tf.get(term, 0)
            if f == 0:
                continue
            s += idf[term] * f * (BM25_K1 + 1.0) / (f + norm)
        scored.append((i, s))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _record_rng(seed: int, record_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{record_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_candidates(
    record: DatasetRecord,
    registry: ToolRegistry,
    k: int = 10,
    retrieved_count: int = 5,
    seed: int = 0,
) -> CandidateSet:
    """Assemble the candidate toolset for one record: ground truth first,
    then the top lexical-ranker hits, then a seeded uniform random fill.

    ``retrieved_count`` is clamped to the room left after ground truth, so a
    record whose ground-truth tools already fill ``k`` gets exactly those.
    """
    gt = record.gt_tool_indices(registry)
    if len(gt) > k:
        raise TooManyGroundTruthTools(
            f"record {record.id!r} has {len(gt)} ground-truth tools but k={k}"
        )
    chosen = list(gt)
    provenance = ["ground_truth"] * len(gt)
    room = k - len(chosen)
    n_retrieved = min(retrieved_count, room)
    if n_retrieved > 0:
        taken = set(chosen)
        for idx, _score in lexical_rank(record.instruction, registry):
            if len(provenance) - len(gt) >= n_retrieved:
                break
            if idx not in taken:
                chosen.append(idx)
                provenance.append("retrieved")
                taken.add(idx)
    fill = k - len(chosen)
    if fill > 0:
        taken = set(chosen)
        pool = [i for i in range(len(registry)) if i not in taken]
        if len(pool) < fill:
            raise DatasetError(
                f"record {record.id!r}: registry too small to fill {k} candidates"
            )
        rng = _record_rng(seed, record.id)
        chosen.extend(rng.sample(pool, fill))
        provenance.extend(["random"] * fill)
    return CandidateSet(
        record_id=record.id, candidates=tuple(chosen), provenance=tuple(provenance)
    )


# ---------------------------------------------------------------------------
# Rejection filtering

@dataclass(frozen=True)
class CandidateVerdict:
    index: int
    accepted: bool
    reason: str | None
    trajectory: Trajectory | None


def _step_exact_match(pred: list[ToolCall], gt: list[ToolCall]) -> str | None:
    """None when the step matches exactly; otherwise a rejection reason."""
    if len(pred) != len(gt):
        return f"expected {len(gt)} calls, got {len(pred)}"
    if token_set(pred) != token_set(gt):
        return "tool token mismatch"
    for gt_call, pred_call in match_calls(pred, gt):
        if pred_call is None:
            return f"no call for token {gt_call.token_surface!r}"
        if not params_equal(pred_call.parameters, gt_call.parameters):
            return f"parameter mismatch on {gt_call.token_surface!r}"
    return None


def filter_candidates(
    candidate_texts: list[str],
    record: DatasetRecord,
    registry: ToolRegistry,
) -> list[CandidateVerdict]:
    """Judge each candidate trajectory text against the record's ground truth.

    A candidate is accepted iff its format checks out and, for every
    ground-truth step with calls, the extracted calls match exactly (token
    sets equal and parameter maps structurally equal). Call tokens given as
    raw tool names are normalized before comparison, so formatting a
    candidate never flips its verdict.
    """
    gt_steps = record.gt_steps()
    verdicts = []
    for i, text in enumerate(candidate_texts):
        if not check_format(text):
            verdicts.append(CandidateVerdict(i, False, "bad format", None))
            continue
        trajectory = parse(text)
        steps = [normalize_calls(step.calls, registry) for step in extract_steps(trajectory)]
        reason = None
        for step_idx, gt_step in enumerate(gt_steps):
            if not gt_step:
                continue
            if step_idx >= len(steps):
                reason = f"missing step {step_idx}"
                break
            gt_norm = normalize_calls(gt_step, registry)
            reason = _step_exact_match(steps[step_idx], gt_norm)
            if reason is not None:
                reason = f"step {step_idx}: {reason}"
                break
        if reason is None:
            verdicts.append(CandidateVerdict(i, True, None, trajectory))
        else:
            verdicts.append(CandidateVerdict(i, False, reason, None))
    return verdicts


def reject_filter(
    candidate_texts: list[str],
    record: DatasetRecord,
    registry: ToolRegistry,
) -> list[Trajectory]:
    """Accepted trajectories only; see :func:`filter_candidates` for reasons."""
    return [v.trajectory for v in filter_candidates(candidate_texts, record, registry) if v.accepted]


# ---------------------------------------------------------------------------
# Tool-name -> token formatting

def _name_pattern(names: list[str]) -> re.Pattern | None:
    if not names:
        return None
    # Longest name first so a name never shadows another's prefix; the <, >
    # guards keep already-substituted <<...>> surfaces untouched.
    ordered = sorted(names, key=len, reverse=True)
    alternation = "|".join(re.escape(n) for n in ordered)
    return re.compile(rf"(?<![A-Za-z0-9_<])(?:{alternation})(?![A-Za-z0-9_>])")


def format_trajectory(raw: Trajectory, registry: ToolRegistry) -> Trajectory:
    """Substitute registered tool names with token surfaces.

    Think text gets word-boundary substitution (case-sensitive, longest name
    first); call token fields holding a raw registered name are rewritten to
    the surface. Observations, user text, and responses are untouched.
    Idempotent: already-substituted tokens are left alone.
    """
    names = [doc.name for doc in registry.tools]
    pattern = _name_pattern(names)

    def swap(match: re.Match) -> str:
        surface = registry.surface_for_name(match.group())
        return surface if surface is not None else match.group()

    new_turns = []
    for turn in raw.turns:
        new_segments = []
        for segment in turn.segments:
            if segment.kind is SegmentKind.THINK and pattern is not None:
                new_segments.append(Segment(SegmentKind.THINK, pattern.sub(swap, segment.payload)))
            elif segment.kind is SegmentKind.CALL_BLOCK:
                calls = []
                for call in segment.payload:
                    if registry.resolve(call.token_surface) is not None:
                        calls.append(call)
                        continue
                    surface = registry.surface_for_name(call.token_surface)
                    if surface is None:
                        raise UnknownToolNameInCall(
                            f"call token {call.token_surface!r} is neither a surface nor a tool name"
                        )
                    calls.append(ToolCall(token_surface=surface, parameters=call.parameters))
                new_segments.append(Segment(SegmentKind.CALL_BLOCK, calls))
            else:
                new_segments.append(segment)
        new_turns.append(Turn(user_text=turn.user_text, segments=new_segments))
    return Trajectory(turns=new_turns)


# ---------------------------------------------------------------------------
# Formatted SFT records

@dataclass
class SftRecord:
    id: str
    instruction: str
    trajectory_text: str


def load_sft_dataset(path: str | Path) -> list[SftRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or not all(
                isinstance(obj.get(k), str) for k in ("id", "instruction", "trajectory")
            ):
                raise DatasetError(f"{path}:{line_no}: expected id/instruction/trajectory strings")
            records.append(
                SftRecord(id=obj["id"], instruction=obj["instruction"], trajectory_text=obj["trajectory"])
            )
    return records


def save_sft_dataset(records: list[SftRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {"id": r.id, "instruction": r.instruction, "trajectory": r.trajectory_text},
                    ensure_ascii=False,
                )
                + "\n"
            )
