"""Fixed, versioned prompt texts and dialogue rendering.

The pre-identification prompt carries zero tool documentation regardless of
registry size; documentation enters the dialogue only after the policy has
identified tokens. ``render_docs_in_prompt`` is the opposite convention
(every doc inlined up front) and exists for efficiency comparisons.
"""

from __future__ import annotations

from .registry import ToolRegistry
from .trajectory import Trajectory, serialize

PROMPT_VERSION = 1

SYSTEM_PROMPT = """\
You are an assistant that resolves user requests by reasoning and by invoking tools you know by their dedicated tokens.

Protocol, in order:
1. Reason inside <think> and </think>. Bring up candidate tool tokens while reasoning when they are relevant.
2. When tools are needed, list every chosen tool token inside <tool_token> and </tool_token>, one token per line.
3. Documentation for each valid token you listed is then appended to the dialogue. Emit the calls inside <tool_call> and </tool_call>: one JSON object per line of the form {"token": "...", "parameters": {...}}. Use an empty object when a call takes no parameters.
4. Tool results arrive inside <obs> and </obs>. Keep reasoning and calling tools as needed, then finish with your answer inside <response> and </response>.

Earlier turns appear in the dialogue wrapped in <user> tags, together with your previous blocks."""


def render_prompt(trajectory: Trajectory) -> str:
    """System prompt plus the dialogue so far; ends on a fresh line."""
    body = serialize(trajectory)
    if body:
        return f"{SYSTEM_PROMPT}\n{body}\n"
    return f"{SYSTEM_PROMPT}\n"


def render_docs_in_prompt(registry: ToolRegistry, trajectory: Trajectory) -> str:
    """Comparison rendering that inlines every tool's documentation up front."""
    docs = "\n".join(
        f"{registry.surface_of(i)} {doc.canonical_text()}" for i, doc in enumerate(registry.tools)
    )
    body = serialize(trajectory)
    prompt = f"{SYSTEM_PROMPT}\nAvailable tools:\n{docs}\n"
    if body:
        prompt += f"{body}\n"
    return prompt
