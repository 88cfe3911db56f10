"""Seeded synthetic fixtures: toolsets, dataset records, scripted policy
responses, and random valid trajectory texts.

Everything here is deterministic given its seed; tests, scripts, and the
acceptance suite all draw from the same builders.
"""

from __future__ import annotations

import json
import random

from .dataconstruct import DatasetRecord, RecordTurn
from .registry import ParamSpec, ToolDoc, ToolRegistry
from .trajectory import ToolCall, render_call

_TOPICS = (
    "weather", "calendar", "stocks", "music", "recipes", "flights", "hotels",
    "sports", "news", "maps", "email", "photos", "payments", "translation",
    "fitness", "movies", "podcasts", "parking", "grocery", "tickets",
)
_VERBS = ("get", "list", "search", "create", "update", "cancel", "rank", "track")
_PARAM_NAMES = ("query", "name", "city", "date", "limit", "is_id", "category", "amount")
_WORDS = (
    "latest", "nearby", "upcoming", "popular", "detailed", "regional",
    "verified", "historical", "aggregated", "personal",
)


def synth_toolset(n: int, seed: int = 0) -> list[ToolDoc]:
    """n distinct tools with varied names, descriptions, and parameters."""
    rng = random.Random(seed)
    tools = []
    for i in range(n):
        verb = _VERBS[i % len(_VERBS)]
        topic = _TOPICS[(i // len(_VERBS)) % len(_TOPICS)]
        name = f"{verb}_{topic}_{i}"
        words = rng.sample(_WORDS, 3)
        description = f"{verb.capitalize()} {words[0]} {topic} data with {words[1]} and {words[2]} filters."
        n_params = rng.randint(1, 3)
        param_names = rng.sample(_PARAM_NAMES, n_params)
        params = tuple(
            ParamSpec(
                name=p,
                value_type="string" if p != "limit" else "integer",
                required=(j == 0),
                description=f"{p} for {name}",
            )
            for j, p in enumerate(sorted(param_names))
        )
        tools.append(ToolDoc(name=name, description=description, parameters=params))
    return tools


def _call_for(registry: ToolRegistry, tool_index: int, rng: random.Random) -> ToolCall:
    doc = registry.tools[tool_index]
    params = {}
    for spec in doc.parameters:
        if spec.value_type == "integer":
            params[spec.name] = rng.randint(1, 50)
        else:
            params[spec.name] = f"{spec.name}-{rng.randint(100, 999)}"
    return ToolCall(token_surface=registry.surface_of(tool_index), parameters=params)


def synth_record(
    registry: ToolRegistry,
    record_id: str,
    tool_indices: list[int],
    rng: random.Random,
    *,
    split: str = "train",
) -> DatasetRecord:
    """One single-turn record whose ground truth uses exactly these tools."""
    calls = [_call_for(registry, idx, rng) for idx in tool_indices]
    names = ", ".join(registry.tools[idx].name for idx in tool_indices)
    user = f"Please run {names} for me ({record_id})."
    observations = [[f"result of {c.token_surface} for {record_id}" for c in calls]]
    return DatasetRecord(
        id=record_id,
        instruction=user,
        turns=[RecordTurn(user_text=user, steps=[calls], observations=observations)],
        split=split,
    )


def synth_records(
    registry: ToolRegistry,
    n: int,
    seed: int = 0,
    *,
    min_tools: int = 1,
    max_tools: int = 2,
    split: str = "train",
    prefix: str = "rec",
) -> list[DatasetRecord]:
    """n single-turn records, each asking for min..max distinct tools."""
    rng = random.Random(seed)
    records = []
    for i in range(n):
        count = rng.randint(min_tools, max_tools)
        indices = rng.sample(range(len(registry)), count)
        records.append(synth_record(registry, f"{prefix}-{i}", indices, rng, split=split))
    return records


def oracle_script(record: DatasetRecord, registry: ToolRegistry) -> list[str]:
    """Scripted policy responses that reproduce the record's ground truth."""
    responses = []
    for turn in record.turns:
        for step_calls in turn.steps:
            surfaces = "\n".join(c.token_surface for c in step_calls)
            think = f"<think>The request needs {', '.join(c.token_surface for c in step_calls)}.</think>"
            responses.append(f"{think}\n<tool_token>\n{surfaces}\n</tool_token>")
            lines = "\n".join(render_call(c) for c in step_calls)
            responses.append(f"<tool_call>\n{lines}\n</tool_call>")
    responses.append("<response>Done with the request.</response>")
    return responses


def dropped_token_script(record: DatasetRecord, registry: ToolRegistry) -> list[str]:
    """Oracle script with the first ground-truth token dropped everywhere.

    Records with a single ground-truth tool degrade to a bare response, since
    a token block may not be empty.
    """
    responses = []
    for turn in record.turns:
        for step_calls in turn.steps:
            kept = step_calls[1:]
            if not kept:
                continue
            surfaces = "\n".join(c.token_surface for c in kept)
            responses.append(
                f"<think>Only {', '.join(c.token_surface for c in kept)} seems needed.</think>"
                f"\n<tool_token>\n{surfaces}\n</tool_token>"
            )
            lines = "\n".join(render_call(c) for c in kept)
            responses.append(f"<tool_call>\n{lines}\n</tool_call>")
    if not responses:
        return ["<think>No tool seems needed.</think><response>Nothing to do.</response>"]
    responses.append("<response>Done with the request.</response>")
    return responses


def perfect_trajectory_text(record: DatasetRecord) -> str:
    """A well-formed single-pass trajectory reproducing the ground truth."""
    parts = []
    for turn in record.turns:
        for s, step_calls in enumerate(turn.steps):
            if not step_calls:
                continue
            tokens = "\n".join(c.token_surface for c in step_calls)
            parts.append(f"<think>Step {s}: use the identified tools.</think>")
            parts.append(f"<tool_token>\n{tokens}\n</tool_token>")
            parts.append("<tool_call>\n" + "\n".join(render_call(c) for c in step_calls) + "\n</tool_call>")
            obs = turn.observations[s] if turn.observations else ["ok"] * len(step_calls)
            parts.append("<obs>" + "\n".join(obs) + "</obs>")
    parts.append("<response>All requested results are in.</response>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Random valid trajectory texts (for round-trip and mutation fuzzing)

_SAFE_CHARS = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    "  .,:;!?*()[]{}'\"-_=+/\\|@#$%^&~`"
)


def _safe_text(rng: random.Random, lo: int = 0, hi: int = 40) -> str:
    n = rng.randint(lo, hi)
    return "".join(rng.choice(_SAFE_CHARS) for _ in range(n))


def _rand_surface(rng: random.Random) -> str:
    style = rng.randrange(3)
    stem = "_".join(rng.choice(_TOPICS) for _ in range(rng.randint(1, 2)))
    if style == 0:
        return f"<<{stem}_{rng.randint(0, 99)}>>"
    if style == 1:
        return f"{rng.randint(0, 999):03d}"
    return "-".join(str(rng.randint(0, 9)) for _ in range(rng.randint(1, 3)))


def _rand_json_value(rng: random.Random, depth: int = 0):
    options = ["str", "int", "float", "bool", "null"]
    if depth < 1:
        options += ["list", "dict"]
    kind = rng.choice(options)
    if kind == "str":
        return _safe_text(rng, 0, 12)
    if kind == "int":
        return rng.randint(-1000, 1000)
    if kind == "float":
        return round(rng.uniform(-100, 100), 3)
    if kind == "bool":
        return rng.choice([True, False])
    if kind == "null":
        return None
    if kind == "list":
        return [_rand_json_value(rng, depth + 1) for _ in range(rng.randint(0, 3))]
    return {f"k{j}": _rand_json_value(rng, depth + 1) for j in range(rng.randint(0, 3))}


def _rand_call_line(rng: random.Random) -> str:
    params = {rng.choice(_PARAM_NAMES): _rand_json_value(rng) for _ in range(rng.randint(0, 3))}
    spacing = rng.choice([(", ", ": "), (",", ":")])
    return json.dumps({"token": _rand_surface(rng), "parameters": params}, separators=spacing)


def _pad(rng: random.Random) -> str:
    return rng.choice(["", "\n", "\n\n", " ", "\n  "])


def random_trajectory_text(rng: random.Random) -> str:
    """A format-valid trajectory with randomized spacing and content.

    Every generated text passes both parsing and the format check; mutation
    fuzzing then perturbs these to probe checker agreement.
    """
    parts: list[str] = []
    n_turns = rng.randint(1, 3)
    for t in range(n_turns):
        if t > 0 or rng.random() < 0.5:
            parts.append(f"<user>{_safe_text(rng)}</user>{_pad(rng)}")
        if rng.random() < 0.1:
            parts.append(f"<response>{_safe_text(rng)}</response>{_pad(rng)}")
            continue
        parts.append(f"<think>{_safe_text(rng)} {_rand_surface(rng)} {_safe_text(rng)}</think>{_pad(rng)}")
        n_steps = rng.randint(0, 2)
        end_with_call = n_steps > 0 and rng.random() < 0.25
        bare_call_ok = True  # right after a think block
        for s in range(n_steps):
            if rng.random() < 0.8:
                surfaces = "\n".join(_rand_surface(rng) for _ in range(rng.randint(1, 3)))
                parts.append(f"<tool_token>{_pad(rng)}{surfaces}\n</tool_token>{_pad(rng)}")
                if rng.random() < 0.6:
                    doc_lines = "\n".join(
                        f"error: unknown tool token {_rand_surface(rng)}"
                        for _ in range(rng.randint(0, 2))
                    )
                    parts.append(f"<obs>doc:\n{doc_lines}</obs>{_pad(rng)}")
                if rng.random() < 0.4:
                    parts.append(f"<think>{_safe_text(rng)}</think>{_pad(rng)}")
            elif not bare_call_ok:
                parts.append(f"<think>{_safe_text(rng)}</think>{_pad(rng)}")
            lines = "\n".join(_rand_call_line(rng) for _ in range(rng.randint(1, 3)))
            parts.append(f"<tool_call>{_pad(rng)}{lines}\n</tool_call>{_pad(rng)}")
            if s == n_steps - 1 and end_with_call:
                break
            parts.append(f"<obs>{_safe_text(rng)}</obs>{_pad(rng)}")
            if rng.random() < 0.5:
                parts.append(f"<think>{_safe_text(rng)}</think>{_pad(rng)}")
                bare_call_ok = True
            else:
                bare_call_ok = False
        if not end_with_call:
            parts.append(f"<response>{_safe_text(rng)}</response>{_pad(rng)}")
    return "".join(parts)
