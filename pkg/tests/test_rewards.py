import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokencall.rewards import (
    GroupTooSmall,
    LengthMismatch,
    NonFiniteInput,
    group_advantages,
    grpo_surrogate,
    jaccard,
    param_pair_set,
    reward_param,
    reward_tool,
    score,
)
from tokencall.trajectory import ToolCall


def _brute_jaccard(a, b):
    # element-by-element enumeration, no set algebra
    a, b = list(a), list(b)
    union = []
    for x in a + b:
        if not any(x == u for u in union):
            union.append(x)
    inter = [x for x in union if any(x == y for y in a) and any(x == y for y in b)]
    if not union:
        return 1.0
    return len(inter) / len(union)


class TestJaccard:
    def test_identity(self):
        assert jaccard({"A"}, {"A"}) == 1.0

    def test_half(self):
        assert jaccard({"A", "B"}, {"A"}) == 0.5

    def test_both_empty(self):
        assert jaccard(set(), set()) == 1.0

    def test_random_pairs_match_enumeration_oracle(self, rng):
        universe = [f"e{i}" for i in range(10)]
        for _ in range(50):
            a = set(rng.sample(universe, rng.randint(0, 10)))
            b = set(rng.sample(universe, rng.randint(0, 10)))
            assert jaccard(a, b) == _brute_jaccard(a, b)


class TestRewardTool:
    def test_exact(self):
        pred = [ToolCall("<<a>>", {}), ToolCall("<<b>>", {})]
        assert reward_tool(pred, pred) == 1.0

    def test_missing_one(self):
        pred = [ToolCall("<<a>>", {})]
        gt = [ToolCall("<<a>>", {}), ToolCall("<<b>>", {})]
        assert reward_tool(pred, gt) == 0.5

    def test_hallucinated_surface(self):
        pred = [ToolCall("_friends", {})]
        gt = [ToolCall("<<user_friends_list>>", {})]
        assert reward_tool(pred, gt) == 0.0

    def test_duplicates_collapse(self):
        pred = [ToolCall("<<a>>", {}), ToolCall("<<a>>", {"x": 1})]
        gt = [ToolCall("<<a>>", {})]
        assert reward_tool(pred, gt) == 1.0


class TestRewardParam:
    def test_exact_single(self):
        pred = [ToolCall("<<t>>", {"name": "Fnatic"})]
        gt = [ToolCall("<<t>>", {"name": "Fnatic"})]
        assert reward_param(pred, gt) == 1.0

    def test_one_of_two_matched(self):
        gt = [ToolCall("<<a>>", {"x": 1}), ToolCall("<<b>>", {"y": 2})]
        pred = [ToolCall("<<a>>", {"x": 1})]
        assert reward_param(pred, gt) == 0.5

    def test_pair_set_third(self):
        # pair sets {(a,1),(b,2)} vs {(a,1),(b,3)}: one shared of three distinct
        gt = [ToolCall("<<t>>", {"a": 1, "b": 2})]
        pred = [ToolCall("<<t>>", {"a": 1, "b": 3})]
        assert reward_param(pred, gt) == pytest.approx(1 / 3, abs=1e-12)

    def test_empty_gt_conventions(self):
        assert reward_param([], []) == 1.0
        assert reward_param([ToolCall("<<a>>", {})], []) == 0.0

    def test_numeric_value_unification(self):
        gt = [ToolCall("<<t>>", {"a": 1})]
        pred = [ToolCall("<<t>>", {"a": 1.0})]
        assert reward_param(pred, gt) == 1.0

    def test_random_pairs_match_enumeration_oracle(self, rng):
        names = ["p", "q", "r"]
        for _ in range(50):
            def rand_call():
                return ToolCall(
                    "<<t>>",
                    {n: rng.randint(0, 2) for n in rng.sample(names, rng.randint(0, 3))},
                )

            gt, pred = [rand_call()], [rand_call()]
            expected = _brute_jaccard(param_pair_set(gt[0]), param_pair_set(pred[0]))
            assert reward_param(pred, gt) == expected


class TestScore:
    def test_perfect(self, case_study_text):
        gt = [
            [
                ToolCall("<<get_teams_and_players>>", {"name": "Fnatic"}),
                ToolCall("<<user_friends_list>>", {"is_id": "77788899900011122"}),
            ]
        ]
        breakdown = score(case_study_text, gt)
        assert (breakdown.format, breakdown.tool, breakdown.param) == (1.0, 1.0, 1.0)
        assert breakdown.total == 3.0

    def test_wrong_tool(self):
        text = '<think>t</think><tool_call>\n{"token":"<<wrong>>","parameters":{}}\n</tool_call>'
        breakdown = score(text, [[ToolCall("<<right>>", {})]])
        assert (breakdown.format, breakdown.tool, breakdown.param) == (1.0, 0.0, 0.0)
        assert breakdown.total == 1.0

    def test_malformed(self):
        breakdown = score("<think>unclosed", [[ToolCall("<<a>>", {})]])
        assert breakdown.total == 0.0

    def test_parseable_but_misformatted_keeps_correctness(self):
        # pending token block: format 0, correctness still computed
        text = (
            "<think>t</think>"
            '<tool_call>\n{"token":"<<a>>","parameters":{}}\n</tool_call>'
            "<obs>o</obs>"
        )
        breakdown = score(text, [[ToolCall("<<a>>", {})]])
        assert breakdown.format == 0.0
        assert breakdown.tool == 1.0

    def test_multi_step_averages(self):
        text = (
            "<think>t</think>"
            '<tool_call>\n{"token":"<<a>>","parameters":{}}\n</tool_call><obs>o</obs>'
            "<think>t2</think>"
            '<tool_call>\n{"token":"<<wrong>>","parameters":{}}\n</tool_call>'
        )
        gt = [[ToolCall("<<a>>", {})], [ToolCall("<<b>>", {})]]
        final = score(text, gt)
        both = score(text, gt, multi_step=True)
        assert final.tool == 0.0
        assert both.tool == 0.5

    def test_reorder_invariance(self, rng):
        from tokencall.trajectory import render_call

        calls = [ToolCall("<<a>>", {"x": 1}), ToolCall("<<b>>", {"y": 2}), ToolCall("<<c>>", {})]
        gt = [list(calls)]
        for _ in range(5):
            shuffled = list(calls)
            rng.shuffle(shuffled)
            text = "<think>t</think><tool_call>\n" + "\n".join(
                render_call(c) for c in shuffled
            ) + "\n</tool_call>"
            breakdown = score(text, gt)
            assert breakdown.total == 3.0


class TestGroupAdvantages:
    def test_hand_case(self):
        group = group_advantages([1, 2, 3])
        expected = [-1.224744871391589, 0.0, 1.224744871391589]
        for a, e in zip(group.advantages, expected):
            assert a == pytest.approx(e, abs=1e-12)

    def test_degenerate(self):
        group = group_advantages([5, 5, 5, 5])
        assert group.degenerate is True
        assert group.advantages == (0.0, 0.0, 0.0, 0.0)

    def test_standardization_identity(self, rng):
        for _ in range(50):
            rewards = [rng.uniform(0, 3) for _ in range(rng.randint(2, 64))]
            group = group_advantages(rewards)
            if group.degenerate:
                continue
            g = len(rewards)
            mean = math.fsum(group.advantages) / g
            std = math.sqrt(math.fsum(a * a for a in group.advantages) / g)
            assert abs(mean) < 1e-9
            assert abs(std - 1.0) < 1e-9

    def test_too_small(self):
        with pytest.raises(GroupTooSmall):
            group_advantages([1.0])


class TestSurrogate:
    def test_ratio_one_identity(self, rng):
        lp = [rng.uniform(-5, 0) for _ in range(8)]
        adv = [rng.uniform(-2, 2) for _ in range(8)]
        assert grpo_surrogate(lp, lp, adv, 0.2) == pytest.approx(math.fsum(adv) / 8, abs=1e-12)

    def test_clip_positive(self):
        assert grpo_surrogate([math.log(2)], [0.0], [1.0], 0.2) == 1.2

    def test_clip_negative_takes_pessimistic(self):
        assert grpo_surrogate([math.log(2)], [0.0], [-1.0], 0.2) == -2.0

    def test_infinite_epsilon_plain_mean(self, rng):
        new = [rng.uniform(-2, 0) for _ in range(6)]
        old = [rng.uniform(-2, 0) for _ in range(6)]
        adv = [rng.uniform(-2, 2) for _ in range(6)]
        expected = math.fsum(math.exp(n - o) * a for n, o, a in zip(new, old, adv)) / 6
        assert grpo_surrogate(new, old, adv, math.inf) == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            grpo_surrogate([0.0], [0.0, 0.0], [1.0], 0.2)

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            grpo_surrogate([float("nan")], [0.0], [1.0], 0.2)


@given(
    st.sets(st.sampled_from("abcdefghij")),
    st.sets(st.sampled_from("abcdefghij")),
    st.sampled_from("abcdefghij"),
)
@settings(max_examples=200, deadline=None)
def test_jaccard_symmetry_and_monotonicity(a, b, extra):
    assert jaccard(a, b) == jaccard(b, a)
    assert 0.0 <= jaccard(a, b) <= 1.0
    # adding a shared element never decreases similarity
    assert jaccard(a | {extra}, b | {extra}) >= jaccard(a, b) - 1e-15


@given(st.lists(st.floats(min_value=0, max_value=3), min_size=2, max_size=64))
@settings(max_examples=200, deadline=None)
def test_bounded_rewards_bounded_advantages(rewards):
    group = group_advantages(rewards)
    assert len(group.advantages) == len(rewards)
    if group.degenerate:
        assert set(group.advantages) == {0.0}


@given(st.text(max_size=300))
@settings(max_examples=200, deadline=None)
def test_score_total_bounded_for_any_text(text):
    breakdown = score(text, [[ToolCall("<<a>>", {"x": 1})]])
    assert 0.0 <= breakdown.tool <= 1.0
    assert 0.0 <= breakdown.param <= 1.0
    assert 0.0 <= breakdown.total <= 3.0
    assert breakdown.total == breakdown.format + breakdown.tool + breakdown.param
