"""Composite reward (format + tool + parameter), group advantages, and the
clipped-ratio surrogate objective.

All operations are pure and stateless; this module backs the scoring
service's hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .registry import ToolRegistry
from .trajectory import (
    ParseError,
    ToolCall,
    canonical_value,
    check_format,
    extract_calls,
    parse,
)


class RewardError(Exception):
    pass


class GroupTooSmall(RewardError):
    pass


class LengthMismatch(RewardError):
    pass


class NonFiniteInput(RewardError):
    pass


@dataclass(frozen=True)
class RewardBreakdown:
    """format in {0,1}; tool, param in [0,1]; total is their exact sum."""

    format: float
    tool: float
    param: float
    total: float
    note: str = ""

    def to_json(self) -> dict:
        return {"format": self.format, "tool": self.tool, "param": self.param, "total": self.total}


@dataclass(frozen=True)
class GroupAdvantages:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    epsilon_clip: float
    degenerate: bool

    def to_json(self) -> dict:
        return {
            "rewards": list(self.rewards),
            "advantages": list(self.advantages),
            "epsilon_clip": self.epsilon_clip,
            "degenerate": self.degenerate,
        }


def jaccard(a: Iterable, b: Iterable) -> float:
    """|a & b| / |a | b|; two empty sets count as fully similar (1.0)."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def token_set(calls: Sequence[ToolCall]) -> set[str]:
    return {c.token_surface for c in calls}


def param_pair_set(call: ToolCall) -> set:
    """Parameter set of a call: (name, canonical value) pairs."""
    return {(name, canonical_value(value)) for name, value in call.parameters.items()}


def reward_tool(pred_calls: Sequence[ToolCall], gt_calls: Sequence[ToolCall]) -> float:
    """Jaccard similarity of the two token-surface sets (duplicates collapse)."""
    return jaccard(token_set(pred_calls), token_set(gt_calls))


def match_call_indices(
    pred_calls: Sequence[ToolCall], gt_calls: Sequence[ToolCall]
) -> list[int | None]:
    """Index of the first unused same-token prediction for each ground-truth call."""
    used = [False] * len(pred_calls)
    indices: list[int | None] = []
    for gt in gt_calls:
        match = None
        for i, pred in enumerate(pred_calls):
            if not used[i] and pred.token_surface == gt.token_surface:
                used[i] = True
                match = i
                break
        indices.append(match)
    return indices


def match_calls(
    pred_calls: Sequence[ToolCall], gt_calls: Sequence[ToolCall]
) -> list[tuple[ToolCall, ToolCall | None]]:
    """Pair each ground-truth call with the first unused same-token prediction."""
    return [
        (gt, pred_calls[i] if i is not None else None)
        for gt, i in zip(gt_calls, match_call_indices(pred_calls, gt_calls))
    ]


def reward_param(pred_calls: Sequence[ToolCall], gt_calls: Sequence[ToolCall]) -> float:
    """Mean, over ground-truth calls, of the Jaccard similarity between
    parameter (name, value) pair sets of token-matched calls.

    Unmatched ground-truth calls contribute 0. With no ground-truth calls the
    reward is 1.0 when the prediction is also empty, else 0.0.
    """
    if not gt_calls:
        return 1.0 if not pred_calls else 0.0
    total = 0.0
    for gt, pred in match_calls(pred_calls, gt_calls):
        if pred is not None:
            total += jaccard(param_pair_set(gt), param_pair_set(pred))
    return total / len(gt_calls)


def normalize_calls(calls: Sequence[ToolCall], registry: ToolRegistry | None) -> list[ToolCall]:
    """Rewrite token fields that hold a registered raw tool name to its surface."""
    if registry is None:
        return list(calls)
    out = []
    for call in calls:
        if registry.resolve(call.token_surface) is None:
            surface = registry.surface_for_name(call.token_surface)
            if surface is not None:
                call = ToolCall(token_surface=surface, parameters=call.parameters)
        out.append(call)
    return out


def _step_rewards(
    pred: Sequence[ToolCall], gt: Sequence[ToolCall]
) -> tuple[float, float]:
    return reward_tool(pred, gt), reward_param(pred, gt)


def score(
    text: str | bytes,
    gt_calls_per_step: Sequence[Sequence[ToolCall]],
    registry: ToolRegistry | None = None,
    *,
    multi_step: bool = False,
) -> RewardBreakdown:
    """Total composite reward of a raw trajectory against per-step ground truth.

    Default scoring unit is the final step's calls against the final
    ground-truth step; ``multi_step=True`` instead averages the per-step
    rewards across aligned steps. Unparseable text earns zero everywhere.
    """
    fmt = 1.0 if check_format(text) else 0.0
    try:
        trajectory = parse(text)
    except ParseError as exc:
        return RewardBreakdown(format=0.0, tool=0.0, param=0.0, total=0.0, note=exc.reason)
    steps = [normalize_calls(calls, registry) for calls in extract_calls(trajectory)]
    gt_steps = [normalize_calls(calls, registry) for calls in gt_calls_per_step]
    if multi_step:
        n = max(len(steps), len(gt_steps))
        if n == 0:
            tool = param = 1.0
        else:
            tools, params = [], []
            for i in range(n):
                t, p = _step_rewards(
                    steps[i] if i < len(steps) else [],
                    gt_steps[i] if i < len(gt_steps) else [],
                )
                tools.append(t)
                params.append(p)
            tool = math.fsum(tools) / n
            param = math.fsum(params) / n
    else:
        pred = steps[-1] if steps else []
        gt = gt_steps[-1] if gt_steps else []
        tool, param = _step_rewards(pred, gt)
    return RewardBreakdown(format=fmt, tool=tool, param=param, total=fmt + tool + param)


_DEGENERATE_STD = 1e-8


def group_advantages(rewards: Sequence[float], epsilon_clip: float = 0.2) -> GroupAdvantages:
    """Standardize rewards within a sampled group (population statistics).

    All-equal groups (std below 1e-8) are degenerate and yield all-zero
    advantages instead of dividing by zero.
    """
    g = len(rewards)
    if g < 2:
        raise GroupTooSmall(f"group size must be >= 2, got {g}")
    if any(not math.isfinite(r) for r in rewards):
        raise NonFiniteInput("rewards must be finite")
    mean = math.fsum(rewards) / g
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / g)
    if std < _DEGENERATE_STD:
        advantages = tuple(0.0 for _ in rewards)
        return GroupAdvantages(tuple(rewards), advantages, epsilon_clip, degenerate=True)
    advantages = tuple((r - mean) / std for r in rewards)
    return GroupAdvantages(tuple(rewards), advantages, epsilon_clip, degenerate=False)


def grpo_surrogate(
    logp_new: Sequence[float],
    logp_old: Sequence[float],
    advantages: Sequence[float],
    epsilon: float = 0.2,
) -> float:
    """Clipped-ratio surrogate over trajectory-level log-probabilities.

    (1/G) sum_i min(rho_i * A_i, clip(rho_i, 1-eps, 1+eps) * A_i) with
    rho_i = exp(logp_new_i - logp_old_i). No KL penalty term. ``epsilon``
    may be ``math.inf``, reducing to the plain importance-weighted mean.
    """
    if not (len(logp_new) == len(logp_old) == len(advantages)):
        raise LengthMismatch(
            f"got lengths {len(logp_new)}, {len(logp_old)}, {len(advantages)}"
        )
    if len(advantages) == 0:
        raise LengthMismatch("empty group")
    values = list(logp_new) + list(logp_old) + list(advantages)
    if any(not math.isfinite(v) for v in values) or math.isnan(epsilon):
        raise NonFiniteInput("log-probabilities and advantages must be finite")
    terms = []
    lo, hi = 1.0 - epsilon, 1.0 + epsilon
    for lp_new, lp_old, adv in zip(logp_new, logp_old, advantages):
        rho = math.exp(lp_new - lp_old)
        clipped = min(max(rho, lo), hi)
        terms.append(min(rho * adv, clipped * adv))
    return math.fsum(terms) / len(terms)
