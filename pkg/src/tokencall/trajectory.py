"""Trajectory grammar: parsing, canonical serialization, and format checking.

Wire format (v1, frozen -- this text is the contract between harness and
policy and must stay bit-stable):

Tags. Exactly six block tags are recognized, by exact substring match:
``<think>``, ``<tool_token>``, ``<tool_call>``, ``<obs>``, ``<response>``
and ``<user>``, each with its ``</...>`` closer. Any other ``<word>`` or
``</word>`` appearing *outside* a block is an unknown tag (token surfaces
of the form ``<<...>>`` are exempt). Block bodies are free text up to the
matching closing tag; a different tag inside a body is an error.

Turns. A ``<user>`` block always starts a new turn; text before the first
``<user>`` block forms a turn with empty user text. Within a turn the
segment order must follow this automaton (parse accepts any *prefix* of a
turn; an omitted transition is a "tags out of order" error)::

    start       : think -> think | response -> response
    think       : think | tool_token | tool_call | response
    tool_token  : docs | think' | tool_call | response
    docs        : think' | tool_call
    think'      : think' | tool_call
    tool_call   : obs | response
    obs         : think | tool_token | response
    response    : (end of turn)

Bodies. ``<tool_token>``: one surface per non-blank line; at least one.
``<tool_call>``: one JSON object per non-blank line with exactly the keys
``"token"`` (string) and ``"parameters"`` (object, possibly empty);
duplicate keys and non-finite numbers are malformed; at least one line.
``<obs>`` whose first line is exactly ``doc:`` is a documentation block:
each following non-blank line is either a canonical tool-doc JSON object
or, failing that, a free-text notice line.

Well-formedness (the format-reward predicate). ``check_format`` is true
iff parsing succeeds, there is at least one turn, every turn ends at
``tool_call`` or ``response``, and every ``<tool_token>`` block is
followed by a ``<tool_call>`` block later in the same turn.

Canonical serialization. One block per line group, single newline between
blocks, one call per line with ``{"token": ..., "parameters": {...}}`` in
compact JSON with parameter keys sorted recursively, token surfaces one
per line, and a ``<user>...</user>`` wrapper for every turn except a
first turn with empty user text.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Iterator

from .registry import ToolDoc


class SegmentKind(str, Enum):
    THINK = "think"
    TOKEN_BLOCK = "tool_token"
    DOC_BLOCK = "tool_doc"
    CALL_BLOCK = "tool_call"
    OBSERVATION = "obs"
    RESPONSE = "response"


@dataclass(frozen=True)
class ToolCall:
    """One tool invocation: a token surface plus a JSON parameter map."""

    token_surface: str
    parameters: dict

    def __post_init__(self) -> None:
        if not self.token_surface:
            raise ValueError("token surface must be non-empty")


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    payload: Any

    @staticmethod
    def think(text: str) -> "Segment":
        return Segment(SegmentKind.THINK, text)

    @staticmethod
    def token_block(surfaces: list[str]) -> "Segment":
        if not surfaces:
            raise ValueError("token block must list at least one surface")
        return Segment(SegmentKind.TOKEN_BLOCK, list(surfaces))

    @staticmethod
    def doc_block(entries: list) -> "Segment":
        """Entries are ToolDoc objects or free-text notice strings."""
        return Segment(SegmentKind.DOC_BLOCK, list(entries))

    @staticmethod
    def call_block(calls: list[ToolCall]) -> "Segment":
        if not calls:
            raise ValueError("call block must hold at least one call")
        return Segment(SegmentKind.CALL_BLOCK, list(calls))

    @staticmethod
    def observation(text: str) -> "Segment":
        return Segment(SegmentKind.OBSERVATION, text)

    @staticmethod
    def response(text: str) -> "Segment":
        return Segment(SegmentKind.RESPONSE, text)


@dataclass
class Turn:
    user_text: str = ""
    segments: list[Segment] = field(default_factory=list)


@dataclass
class Trajectory:
    turns: list[Turn] = field(default_factory=list)


class ParseError(Exception):
    """Structured rejection: a reason plus the offset it was detected at."""

    def __init__(self, reason: str, offset: int) -> None:
        super().__init__(f"{reason} (at offset {offset})")
        self.reason = reason
        self.offset = offset


_TAG_KINDS = ("think", "tool_token", "tool_call", "obs", "response", "user")
_TAG_RE = re.compile("|".join(re.escape(f"<{k}>") + "|" + re.escape(f"</{k}>") for k in _TAG_KINDS))
_SURFACE_SPAN_RE = re.compile(r"<<[^<>]*>>")
_TAGLIKE_RE = re.compile(r"</?[A-Za-z_][A-Za-z0-9_]*>")


def _reject_constant(name: str) -> None:
    raise ValueError(f"non-finite number {name!r} in call line")


def _strict_pairs(pairs: list[tuple[str, Any]]) -> dict:
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        raise ValueError("duplicate object keys")
    return dict(pairs)


def _loads_strict(text: str) -> Any:
    """JSON parse rejecting duplicate keys and NaN/Infinity."""
    return json.loads(text, object_pairs_hook=_strict_pairs, parse_constant=_reject_constant)


def _check_outside_text(run: str, base: int) -> None:
    masked = _SURFACE_SPAN_RE.sub(lambda m: " " * len(m.group()), run)
    m = _TAGLIKE_RE.search(masked)
    if m:
        raise ParseError(f"unknown tag {m.group()!r}", base + m.start())


def _parse_token_body(body: str, offset: int) -> Segment:
    surfaces = [line.strip() for line in body.split("\n") if line.strip()]
    if not surfaces:
        raise ParseError("empty tool_token block", offset)
    return Segment(SegmentKind.TOKEN_BLOCK, surfaces)


def _parse_call_body(body: str, offset: int) -> Segment:
    calls: list[ToolCall] = []
    line_offset = offset
    for line in body.split("\n"):
        stripped = line.strip()
        if stripped:
            try:
                obj = _loads_strict(stripped)
            except ValueError:
                raise ParseError("malformed call line", line_offset) from None
            if (
                not isinstance(obj, dict)
                or set(obj) != {"token", "parameters"}
                or not isinstance(obj["token"], str)
                or not isinstance(obj["parameters"], dict)
                or not obj["token"]
            ):
                raise ParseError("malformed call line", line_offset)
            calls.append(ToolCall(token_surface=obj["token"], parameters=obj["parameters"]))
        line_offset += len(line) + 1
    if not calls:
        raise ParseError("empty tool_call block", offset)
    return Segment(SegmentKind.CALL_BLOCK, calls)


def _parse_obs_body(body: str) -> Segment:
    first, _, rest = body.partition("\n")
    if first != "doc:":
        return Segment(SegmentKind.OBSERVATION, body)
    entries: list[ToolDoc | str] = []
    for line in rest.split("\n"):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            entries.append(ToolDoc.from_json(_loads_strict(stripped)))
        except ValueError:
            entries.append(stripped)
    return Segment(SegmentKind.DOC_BLOCK, entries)


# Per-turn order automaton: state -> {segment kind -> next state}.
_S_START, _S_THINK, _S_TOKENS, _S_DOCS, _S_PRECALL, _S_CALLS, _S_OBS, _S_RESPONSE = range(8)
_TRANSITIONS: dict[int, dict[SegmentKind, int]] = {
    _S_START: {SegmentKind.THINK: _S_THINK, SegmentKind.RESPONSE: _S_RESPONSE},
    _S_THINK: {
        SegmentKind.THINK: _S_THINK,
        SegmentKind.TOKEN_BLOCK: _S_TOKENS,
        SegmentKind.CALL_BLOCK: _S_CALLS,
        SegmentKind.RESPONSE: _S_RESPONSE,
    },
    _S_TOKENS: {
        SegmentKind.DOC_BLOCK: _S_DOCS,
        SegmentKind.THINK: _S_PRECALL,
        SegmentKind.CALL_BLOCK: _S_CALLS,
        SegmentKind.RESPONSE: _S_RESPONSE,
    },
    _S_DOCS: {SegmentKind.THINK: _S_PRECALL, SegmentKind.CALL_BLOCK: _S_CALLS},
    _S_PRECALL: {SegmentKind.THINK: _S_PRECALL, SegmentKind.CALL_BLOCK: _S_CALLS},
    _S_CALLS: {SegmentKind.OBSERVATION: _S_OBS, SegmentKind.RESPONSE: _S_RESPONSE},
    _S_OBS: {
        SegmentKind.THINK: _S_THINK,
        SegmentKind.TOKEN_BLOCK: _S_TOKENS,
        SegmentKind.RESPONSE: _S_RESPONSE,
    },
    _S_RESPONSE: {},
}
_COMPLETE_STATES = (_S_CALLS, _S_RESPONSE)


def _as_text(data: str | bytes) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def _scan(text: str) -> Iterator[tuple[str, Any, int]]:
    """Yield ("segment", Segment, offset) or ("user", body, offset) events."""
    events = list(_TAG_RE.finditer(text))
    pos = 0
    i = 0
    while i < len(events):
        ev = events[i]
        _check_outside_text(text[pos : ev.start()], pos)
        tag = ev.group()
        if tag.startswith("</"):
            raise ParseError(f"closing tag {tag} before opening tag", ev.start())
        kind = tag[1:-1]
        closer = f"</{kind}>"
        if i + 1 >= len(events):
            raise ParseError(f"unclosed tag <{kind}>", ev.start())
        nxt = events[i + 1]
        if nxt.group() != closer:
            raise ParseError(f"unclosed tag <{kind}>", ev.start())
        body = text[ev.end() : nxt.start()]
        body_offset = ev.end()
        pos = nxt.end()
        i += 2
        if kind == "user":
            yield "user", body, ev.start()
        elif kind == "think":
            yield "segment", Segment(SegmentKind.THINK, body), ev.start()
        elif kind == "tool_token":
            yield "segment", _parse_token_body(body, body_offset), ev.start()
        elif kind == "tool_call":
            yield "segment", _parse_call_body(body, body_offset), ev.start()
        elif kind == "obs":
            yield "segment", _parse_obs_body(body), ev.start()
        else:
            yield "segment", Segment(SegmentKind.RESPONSE, body), ev.start()
    _check_outside_text(text[pos:], pos)


def scan_segments(text: str | bytes) -> list[Segment]:
    """Tokenize a mid-turn fragment into segments, without turn-order rules.

    ``<user>`` blocks are rejected; the driver uses this on policy output.
    """
    text = _as_text(text)
    segments: list[Segment] = []
    for event, payload, offset in _scan(text):
        if event == "user":
            raise ParseError("user tag inside a fragment", offset)
        segments.append(payload)
    return segments


def parse(text: str | bytes) -> Trajectory:
    """Parse raw text into a structured trajectory.

    Total over arbitrary input: every rejection raises :class:`ParseError`
    with an offset inside the input. Prefixes of incomplete turns are
    accepted; use :func:`check_format` for the well-formedness predicate.
    """
    text = _as_text(text)
    turns: list[Turn] = []
    cur = Turn()
    cur_started = False
    state = _S_START
    for event, payload, offset in _scan(text):
        if event == "user":
            if cur_started:
                turns.append(cur)
            cur = Turn(user_text=payload)
            cur_started = True
            state = _S_START
            continue
        segment: Segment = payload
        nxt = _TRANSITIONS[state].get(segment.kind)
        if nxt is None:
            raise ParseError(f"tags out of order: unexpected <{segment.kind.value}>", offset)
        cur.segments.append(segment)
        cur_started = True
        state = nxt
    if cur_started:
        turns.append(cur)
    return Trajectory(turns=turns)


def _sorted_json(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _sorted_json(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_sorted_json(v) for v in value]
    return value


def render_call(call: ToolCall) -> str:
    """Canonical one-line rendering of a call: token first, sorted parameters."""
    obj = {"token": call.token_surface, "parameters": _sorted_json(call.parameters)}
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def render_segment(segment: Segment) -> str:
    """Canonical rendering of one segment."""
    kind = segment.kind
    if kind is SegmentKind.THINK:
        return f"<think>{segment.payload}</think>"
    if kind is SegmentKind.TOKEN_BLOCK:
        body = "\n".join(segment.payload)
        return f"<tool_token>\n{body}\n</tool_token>"
    if kind is SegmentKind.DOC_BLOCK:
        lines = [e.canonical_text() if isinstance(e, ToolDoc) else str(e) for e in segment.payload]
        body = "doc:" + "".join(f"\n{line}" for line in lines)
        return f"<obs>{body}</obs>"
    if kind is SegmentKind.CALL_BLOCK:
        body = "\n".join(render_call(c) for c in segment.payload)
        return f"<tool_call>\n{body}\n</tool_call>"
    if kind is SegmentKind.OBSERVATION:
        return f"<obs>{segment.payload}</obs>"
    if kind is SegmentKind.RESPONSE:
        return f"<response>{segment.payload}</response>"
    raise ValueError(f"unknown segment kind {kind!r}")


def serialize(trajectory: Trajectory) -> str:
    """Canonical text rendering; ``parse(serialize(t))`` equals ``t`` structurally."""
    blocks: list[str] = []
    for i, turn in enumerate(trajectory.turns):
        if i > 0 or turn.user_text:
            blocks.append(f"<user>{turn.user_text}</user>")
        for segment in turn.segments:
            blocks.append(render_segment(segment))
    return "\n".join(blocks)


def check_format(text: str | bytes) -> bool:
    """The binary structural-format predicate; total over arbitrary input."""
    try:
        trajectory = parse(text)
    except ParseError:
        return False
    if not trajectory.turns:
        return False
    for turn in trajectory.turns:
        state = _S_START
        pending_tokens = False
        for segment in turn.segments:
            if segment.kind is SegmentKind.TOKEN_BLOCK:
                pending_tokens = True
            elif segment.kind is SegmentKind.CALL_BLOCK:
                pending_tokens = False
            state = _TRANSITIONS[state][segment.kind]
        if pending_tokens or state not in _COMPLETE_STATES:
            return False
    return True


@dataclass(frozen=True)
class Step:
    """One tool step: the identified surfaces (if any) plus the emitted calls."""

    surfaces: list[str]
    calls: list[ToolCall]
    has_token_block: bool


def extract_steps(trajectory: Trajectory) -> list[Step]:
    """Group a trajectory into tool steps across all turns, in order.

    A step opens at a ``tool_token`` block and closes at the next
    ``tool_call`` block; a bare call block forms a step of its own. A step
    left without calls yields an empty call list.
    """
    steps: list[Step] = []
    for turn in trajectory.turns:
        open_surfaces: list[str] | None = None
        for segment in turn.segments:
            if segment.kind is SegmentKind.TOKEN_BLOCK:
                if open_surfaces is not None:
                    steps.append(Step(surfaces=open_surfaces, calls=[], has_token_block=True))
                open_surfaces = list(segment.payload)
            elif segment.kind is SegmentKind.CALL_BLOCK:
                steps.append(
                    Step(
                        surfaces=open_surfaces if open_surfaces is not None else [],
                        calls=list(segment.payload),
                        has_token_block=open_surfaces is not None,
                    )
                )
                open_surfaces = None
        if open_surfaces is not None:
            steps.append(Step(surfaces=open_surfaces, calls=[], has_token_block=True))
    return steps


def extract_calls(trajectory: Trajectory) -> list[list[ToolCall]]:
    """Per-step call groups, preserving order; token-only steps yield []."""
    return [step.calls for step in extract_steps(trajectory)]


# ---------------------------------------------------------------------------
# Structural JSON value comparison, shared by rewards, filtering, and metrics.

_REL_TOL = 1e-9


def canonical_value(value: Any) -> Any:
    """Hashable canonical form: numbers by exact value, strings NFC-normalized."""
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("num", Fraction(value))
    if isinstance(value, str):
        return ("str", unicodedata.normalize("NFC", value))
    if isinstance(value, list):
        return ("list", tuple(canonical_value(v) for v in value))
    if isinstance(value, dict):
        return ("dict", tuple(sorted((unicodedata.normalize("NFC", k), canonical_value(v)) for k, v in value.items())))
    if value is None:
        return ("null",)
    raise TypeError(f"not a JSON value: {value!r}")


def values_equal(a: Any, b: Any) -> bool:
    """Structural JSON equality: numbers within 1e-9 relative, strings NFC byte-wise."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return a == b or math.isclose(a, b, rel_tol=_REL_TOL, abs_tol=0.0)
    if isinstance(a, str) and isinstance(b, str):
        return unicodedata.normalize("NFC", a) == unicodedata.normalize("NFC", b)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        ka = {unicodedata.normalize("NFC", k): v for k, v in a.items()}
        kb = {unicodedata.normalize("NFC", k): v for k, v in b.items()}
        if set(ka) != set(kb):
            return False
        return all(values_equal(ka[k], kb[k]) for k in ka)
    return a is None and b is None


def params_equal(a: dict, b: dict) -> bool:
    return values_equal(a, b)
