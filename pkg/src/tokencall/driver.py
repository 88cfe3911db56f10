"""Two-step inference loop against a pluggable policy and tool executor.

The loop per tool step: (1) the policy generates until it closes a
``</tool_token>`` or ``</response>``; (2) documentation for each registered
token it emitted is appended to the dialogue (an error notice line for
unregistered tokens -- such trajectories must stay scoreable, not crash);
(3) the policy generates until ``</tool_call>``; (4) the calls are
dispatched to the executor and the observations appended. Repeat until a
response or until a budget trips.

One session is strictly sequential; distinct sessions share nothing mutable
beyond the immutable registry.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .dataconstruct import DatasetRecord
from .prompts import render_prompt
from .registry import ToolRegistry
from .trajectory import (
    ParseError,
    Segment,
    SegmentKind,
    ToolCall,
    Trajectory,
    Turn,
    canonical_value,
    scan_segments,
)


class DriverError(Exception):
    pass


class PolicyProtocolError(DriverError):
    pass


class StepBudgetExceeded(DriverError):
    pass


class CharBudgetExceeded(DriverError):
    pass


class ScriptExhausted(DriverError):
    pass


IDENTIFY_STOP_TAGS = ["</tool_token>", "</response>"]
CALL_STOP_TAGS = ["</tool_call>"]

DEFAULT_MAX_STEPS = 8
DEFAULT_MAX_CHARS = 32_768

UNKNOWN_CALL_TEXT = "tool error: unknown call"


@dataclass(frozen=True)
class PolicyRequest:
    session_id: str
    prompt_text: str
    stop_tags: list[str]
    want_logprobs: bool = False

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "prompt_text": self.prompt_text,
            "stop_tags": list(self.stop_tags),
            "want_logprobs": self.want_logprobs,
        }


@dataclass(frozen=True)
class PolicyResponse:
    text: str
    finish_reason: str = "stop_tag"  # stop_tag | length | end
    logprobs: list[float] | None = None

    def to_json(self) -> dict:
        obj: dict = {"text": self.text, "finish_reason": self.finish_reason}
        if self.logprobs is not None:
            obj["logprobs"] = list(self.logprobs)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "PolicyResponse":
        if not isinstance(obj, dict) or "text" not in obj:
            raise PolicyProtocolError("policy response must be an object with a 'text' field")
        return cls(
            text=obj["text"],
            finish_reason=obj.get("finish_reason", "stop_tag"),
            logprobs=obj.get("logprobs"),
        )


Policy = Callable[[PolicyRequest], PolicyResponse]
Executor = Callable[[ToolCall], str]

_session_counter = itertools.count(1)


@dataclass
class Session:
    id: str
    registry: ToolRegistry
    trajectory: Trajectory = field(default_factory=Trajectory)
    step: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    max_chars: int = DEFAULT_MAX_CHARS


def new_session(
    registry: ToolRegistry,
    session_id: str | None = None,
    *,
    max_steps: int = DEFAULT_MAX_STEPS,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> Session:
    if session_id is None:
        session_id = f"session-{next(_session_counter)}"
    return Session(id=session_id, registry=registry, max_steps=max_steps, max_chars=max_chars)


def prompt_render(session: Session) -> str:
    """Current prompt: fixed system text plus dialogue history.

    Carries no tool documentation beyond doc blocks already earned by token
    identification in this dialogue, so its size is independent of registry
    size before any identification happens.
    """
    return render_prompt(session.trajectory)


def _doc_entries(surfaces: Iterable[str], registry: ToolRegistry) -> list:
    entries = []
    for surface in surfaces:
        resolved = registry.resolve(surface)
        if resolved is None:
            entries.append(f"error: unknown tool token {surface}")
        else:
            entries.append(resolved[0])
    return entries


def _split_fragment(text: str, phase: str) -> tuple[list[Segment], Segment]:
    """Validate a policy fragment: optional think blocks then one closing block."""
    try:
        segments = scan_segments(text)
    except ParseError as exc:
        raise PolicyProtocolError(f"unparseable policy output: {exc.reason}") from exc
    if not segments:
        raise PolicyProtocolError("policy output held no recognized block")
    head, last = segments[:-1], segments[-1]
    if any(s.kind is not SegmentKind.THINK for s in head):
        raise PolicyProtocolError(f"only think blocks may precede the {phase} block")
    return head, last


class TurnRunner:
    """Stepwise state machine behind :func:`run_turn`.

    ``request()`` yields the next policy request; ``feed(text)`` applies the
    policy's output and returns True once the turn is complete. The service
    uses this directly so an external process can play the policy role.
    """

    def __init__(self, session: Session, user_text: str, executor: Executor) -> None:
        self.session = session
        self.executor = executor
        self.phase = "identify"
        session.trajectory.turns.append(Turn(user_text=user_text))
        session.step = 0

    @property
    def turn(self) -> Turn:
        return self.session.trajectory.turns[-1]

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def request(self) -> PolicyRequest:
        if self.done:
            raise DriverError("turn already complete")
        prompt = prompt_render(self.session)
        if len(prompt) > self.session.max_chars:
            raise CharBudgetExceeded(f"prompt length {len(prompt)} > {self.session.max_chars}")
        stops = IDENTIFY_STOP_TAGS if self.phase == "identify" else CALL_STOP_TAGS
        return PolicyRequest(
            session_id=self.session.id, prompt_text=prompt, stop_tags=list(stops)
        )

    def feed(self, text: str) -> bool:
        if self.done:
            raise DriverError("turn already complete")
        if self.phase == "identify":
            self._feed_identify(text)
        else:
            self._feed_call(text)
        return self.done

    def _feed_identify(self, text: str) -> None:
        head, last = _split_fragment(text, "tool_token or response")
        if last.kind is SegmentKind.RESPONSE:
            self.turn.segments.extend(head)
            self.turn.segments.append(last)
            self.phase = "done"
            return
        if last.kind is not SegmentKind.TOKEN_BLOCK:
            raise PolicyProtocolError(
                f"expected a tool_token or response block, got <{last.kind.value}>"
            )
        if not self.turn.segments and not head:
            raise PolicyProtocolError("a turn must open with a think block")
        if self.session.step >= self.session.max_steps:
            raise StepBudgetExceeded(f"step budget {self.session.max_steps} exhausted")
        self.turn.segments.extend(head)
        self.turn.segments.append(last)
        entries = _doc_entries(last.payload, self.session.registry)
        self.turn.segments.append(Segment(SegmentKind.DOC_BLOCK, entries))
        self.phase = "call"

    def _feed_call(self, text: str) -> None:
        head, last = _split_fragment(text, "tool_call")
        if last.kind is not SegmentKind.CALL_BLOCK:
            raise PolicyProtocolError(f"expected a tool_call block, got <{last.kind.value}>")
        self.turn.segments.extend(head)
        self.turn.segments.append(last)
        observation = "\n".join(self.executor(call) for call in last.payload)
        self.turn.segments.append(Segment(SegmentKind.OBSERVATION, observation))
        self.session.step += 1
        self.phase = "identify"


def run_turn(
    session: Session, user_text: str, policy: Policy, executor: Executor
) -> Trajectory:
    """Drive one dialogue turn to completion; returns the session trajectory."""
    runner = TurnRunner(session, user_text, executor)
    while not runner.done:
        request = runner.request()
        response = policy(request)
        runner.feed(response.text)
    return session.trajectory


# ---------------------------------------------------------------------------
# Test doubles and transport adapters

def scripted_policy(script: Iterable[str | PolicyResponse], vocab_size: int = 512) -> Policy:
    """Replay canned responses in order; raises ScriptExhausted past the end.

    When logprobs are requested and the scripted item carries none, a uniform
    distribution over ``vocab_size`` is assumed: -ln(V) per whitespace token.
    """
    items = list(script)
    position = 0

    def policy(request: PolicyRequest) -> PolicyResponse:
        nonlocal position
        if position >= len(items):
            raise ScriptExhausted(f"script exhausted after {len(items)} responses")
        item = items[position]
        position += 1
        if isinstance(item, PolicyResponse):
            return item
        logprobs = None
        if request.want_logprobs:
            logprobs = [-math.log(vocab_size)] * len(item.split())
        finish = "stop_tag" if any(item.endswith(tag) for tag in request.stop_tags) else "end"
        return PolicyResponse(text=item, finish_reason=finish, logprobs=logprobs)

    return policy


def canned_executor(record: DatasetRecord | None) -> Executor:
    """Replay the record's recorded observations for matching calls.

    A call with no recorded observation gets a fixed unknown-call error text,
    so imperfect trajectories stay runnable and scoreable.
    """
    recorded: dict = {}
    if record is not None:
        for turn in record.turns:
            if turn.observations is None:
                continue
            for step_calls, step_obs in zip(turn.steps, turn.observations):
                for call, obs in zip(step_calls, step_obs):
                    key = (call.token_surface, canonical_value(call.parameters))
                    recorded.setdefault(key, obs)

    def executor(call: ToolCall) -> str:
        key = (call.token_surface, canonical_value(call.parameters))
        return recorded.get(key, UNKNOWN_CALL_TEXT)

    return executor


class HttpExecutor:
    """POST each call as JSON to a tool backend; the response body is the observation."""

    def __init__(self, url: str, client=None, timeout: float = 30.0) -> None:
        import httpx

        self.url = url
        self.client = client or httpx.Client(timeout=timeout)

    def __call__(self, call: ToolCall) -> str:
        response = self.client.post(
            self.url, json={"token": call.token_surface, "parameters": call.parameters}
        )
        if response.status_code != 200:
            return UNKNOWN_CALL_TEXT
        return response.text


class HttpPolicy:
    """Policy over HTTP POST: request/response bodies use the wire schema."""

    def __init__(self, url: str, client=None, timeout: float = 120.0) -> None:
        import httpx

        self.url = url
        self.client = client or httpx.Client(timeout=timeout)

    def __call__(self, request: PolicyRequest) -> PolicyResponse:
        response = self.client.post(self.url, json=request.to_json())
        if response.status_code != 200:
            raise PolicyProtocolError(f"policy endpoint returned {response.status_code}")
        return PolicyResponse.from_json(response.json())


class JsonLinesPolicy:
    """Policy over newline-delimited JSON on a byte/text stream pair."""

    def __init__(self, reader, writer) -> None:
        self.reader = reader
        self.writer = writer

    def __call__(self, request: PolicyRequest) -> PolicyResponse:
        line = json.dumps(request.to_json(), ensure_ascii=False) + "\n"
        try:
            try:
                self.writer.write(line)
            except TypeError:  # binary stream
                self.writer.write(line.encode("utf-8"))
            self.writer.flush()
            raw = self.reader.readline()
        except OSError as exc:
            raise PolicyProtocolError(f"policy stream failed: {exc}") from exc
        if not raw:
            raise PolicyProtocolError("policy stream closed")
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            return PolicyResponse.from_json(json.loads(raw))
        except json.JSONDecodeError as exc:
            raise PolicyProtocolError(f"bad policy response line: {exc}") from exc
