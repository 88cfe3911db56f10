import math

import pytest

from tokencall.dataconstruct import SftRecord
from tokencall.losses import (
    MalformedTrajectoryInDataset,
    Phase,
    PositiveLogProb,
    TrainingExample,
    UnregisteredToolInDataset,
    aggregate_losses,
    build_phase1_examples,
    build_sft_examples,
    load_examples,
    save_examples,
)
from tokencall.rewards import LengthMismatch
from tokencall.synth import perfect_trajectory_text
from tokencall.trajectory import check_format, parse


def test_counting_contract(small_registry, small_records):
    examples = build_phase1_examples(small_registry, small_records)
    assert len(examples) == 2 * len(small_registry) + len(small_records)
    phases = [e.phase for e in examples]
    assert phases.count(Phase.MEMORIZATION) == len(small_registry)
    assert phases.count(Phase.RECALL) == len(small_registry)
    assert phases.count(Phase.USAGE) == len(small_records)


def test_empty_dataset_gives_2n(small_registry):
    examples = build_phase1_examples(small_registry, [])
    assert len(examples) == 2 * len(small_registry)


def test_memorization_and_recall_shapes(small_registry):
    examples = build_phase1_examples(small_registry, [])
    mem = next(e for e in examples if e.phase is Phase.MEMORIZATION)
    recall = next(e for e in examples if e.phase is Phase.RECALL)
    surface = small_registry.surface_of(0)
    doc = small_registry.tools[0].canonical_text()
    assert mem.target_text == surface
    assert mem.context_text.startswith(doc)
    assert recall.context_text.startswith(surface)
    assert recall.target_text == doc


def test_usage_target_holds_all_calls(small_registry, small_records):
    record = next(r for r in small_records if len(r.turns[0].steps[0]) == 2)
    examples = build_phase1_examples(small_registry, [record])
    usage = examples[-1]
    assert usage.phase is Phase.USAGE
    lines = [line for line in usage.target_text.splitlines() if line.startswith("{")]
    assert len(lines) == 2
    parsed = parse("<think>t</think>" + usage.target_text)
    assert len(parsed.turns[0].segments[1].payload) == 2


def test_unregistered_tool_in_dataset(small_registry, small_records):
    from tokencall.dataconstruct import DatasetRecord, RecordTurn
    from tokencall.trajectory import ToolCall

    bad = DatasetRecord(
        id="bad",
        instruction="q",
        turns=[RecordTurn(user_text="q", steps=[[ToolCall("<<nope>>", {})]])],
    )
    with pytest.raises(UnregisteredToolInDataset):
        build_phase1_examples(small_registry, [bad])


def test_sft_examples_round_trip(small_registry, small_records):
    records = [
        SftRecord(id=r.id, instruction=r.instruction, trajectory_text=perfect_trajectory_text(r))
        for r in small_records
    ]
    examples = build_sft_examples(records, small_registry)
    assert len(examples) == len(records)
    for example in examples:
        assert check_format(example.target_text)
        assert example.context_text.endswith(f"<user>{records[0].instruction}</user>") or "<user>" in example.context_text


def test_sft_rejects_raw_tool_name(small_registry):
    name = small_registry.tools[0].name
    text = (
        "<think>t</think>"
        f'<tool_call>\n{{"token":"{name}","parameters":{{}}}}\n</tool_call>'
        "<obs>o</obs><response>r</response>"
    )
    record = SftRecord(id="x", instruction="q", trajectory_text=text)
    with pytest.raises(MalformedTrajectoryInDataset) as exc:
        build_sft_examples([record], small_registry)
    assert "unsubstituted" in str(exc.value)


def test_sft_rejects_malformed(small_registry):
    record = SftRecord(id="x", instruction="q", trajectory_text="<think>unclosed")
    with pytest.raises(MalformedTrajectoryInDataset):
        build_sft_examples([record], small_registry)


def _example(phase, example_id="e"):
    return TrainingExample(
        example_id=example_id, phase=phase, context_text="c", target_text="t"
    )


class TestAggregate:
    def test_uniform_policy_identity(self):
        vocab, length = 512, 37
        example = _example(Phase.USAGE)
        report = aggregate_losses([example], [[-math.log(vocab)] * length])
        assert report.usage == pytest.approx(length * math.log(vocab), abs=1e-9)

    def test_alpha_beta_zero_reduces_to_memorization(self):
        examples = [_example(Phase.MEMORIZATION, "m"), _example(Phase.RECALL, "r"), _example(Phase.USAGE, "u")]
        logprobs = [[-1.0], [-2.0], [-3.0]]
        report = aggregate_losses(examples, logprobs, alpha=0.0, beta=0.0)
        assert report.phase1_total == report.memorization == 1.0

    def test_hand_sum(self):
        examples = [_example(Phase.RECALL, "a"), _example(Phase.RECALL, "b")]
        report = aggregate_losses(examples, [[-0.5, -1.5], [-2.0]])
        assert report.recall == 4.0

    def test_weighting_identity_random(self, rng):
        examples = [_example(Phase.MEMORIZATION, "m"), _example(Phase.RECALL, "r"), _example(Phase.USAGE, "u")]
        logprobs = [[-0.3, -0.7], [-1.1], [-0.2, -0.4, -0.9]]
        for _ in range(20):
            alpha, beta = rng.uniform(0, 3), rng.uniform(0, 3)
            report = aggregate_losses(examples, logprobs, alpha=alpha, beta=beta)
            expected = report.memorization + alpha * report.recall + beta * report.usage
            assert report.phase1_total == expected

    def test_linearity(self):
        a = [_example(Phase.SFT, "a")]
        b = [_example(Phase.SFT, "b")]
        lp_a, lp_b = [[-1.0, -2.0]], [[-0.25]]
        merged = aggregate_losses(a + b, lp_a + lp_b)
        parts = aggregate_losses(a, lp_a).sft + aggregate_losses(b, lp_b).sft
        assert merged.sft == pytest.approx(parts, abs=1e-12)

    def test_positive_logprob_rejected(self):
        with pytest.raises(PositiveLogProb):
            aggregate_losses([_example(Phase.SFT)], [[0.1]])

    def test_zero_logprob_allowed(self):
        report = aggregate_losses([_example(Phase.SFT)], [[0.0, -1.0]])
        assert report.sft == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            aggregate_losses([_example(Phase.SFT)], [])

    def test_token_counts_and_mean_view(self):
        examples = [_example(Phase.USAGE, "u1"), _example(Phase.USAGE, "u2")]
        report = aggregate_losses(examples, [[-1.0, -1.0], [-4.0]])
        assert report.token_counts["usage"] == 3
        assert report.per_token_mean()["usage"] == pytest.approx(2.0)

    def test_nonnegative(self):
        report = aggregate_losses([_example(Phase.MEMORIZATION)], [[-0.0, -0.5]])
        assert report.memorization >= 0.0


def test_examples_file_round_trip(tmp_path, small_registry, small_records):
    examples = build_phase1_examples(small_registry, small_records)
    path = tmp_path / "examples.jsonl"
    save_examples(examples, path)
    assert load_examples(path) == examples


def test_determinism(small_registry, small_records):
    a = build_phase1_examples(small_registry, small_records)
    b = build_phase1_examples(small_registry, small_records)
    assert a == b
