import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokencall.metrics import (
    UnknownRecordId,
    eval_calling,
    eval_identification,
    evaluate_dataset,
)
from tokencall.synth import perfect_trajectory_text
from tokencall.trajectory import ToolCall


class TestIdentification:
    def test_exact(self):
        assert eval_identification({"<<a>>", "<<b>>"}, {"<<a>>", "<<b>>"}) == (1, 1.0)

    def test_partial(self):
        em, f1 = eval_identification({"<<a>>"}, {"<<a>>", "<<b>>"})
        assert em == 0
        assert f1 == pytest.approx(2 / 3, abs=1e-12)

    def test_one_empty(self):
        assert eval_identification(set(), {"<<a>>"}) == (0, 0.0)

    def test_both_empty(self):
        assert eval_identification(set(), set()) == (1, 1.0)

    def test_em_implies_f1(self):
        em, f1 = eval_identification({"x"}, {"x"})
        assert em == 1 and f1 == 1.0


class TestCalling:
    def test_exact(self):
        calls = [ToolCall("<<a>>", {"x": 1})]
        assert eval_calling(calls, calls) == (1, 1, 1)

    def test_wrong_param_decomposition(self):
        gt = [ToolCall("<<a>>", {"x": 1})]
        pred = [ToolCall("<<a>>", {"x": 2})]
        assert eval_calling(pred, gt) == (0, 1, 0)

    def test_matched_one_of_two(self):
        gt = [ToolCall("<<a>>", {"x": 1}), ToolCall("<<b>>", {"y": 2})]
        pred = [ToolCall("<<a>>", {"x": 1})]
        assert eval_calling(pred, gt) == (0, 0, 0)

    def test_extra_same_token_call_charges_params(self):
        gt = [ToolCall("<<a>>", {"x": 1})]
        pred = [ToolCall("<<a>>", {"x": 1}), ToolCall("<<a>>", {"x": 9})]
        em, tool_acc, param_acc = eval_calling(pred, gt)
        assert (em, tool_acc, param_acc) == (0, 1, 0)

    def test_extra_foreign_token_kills_tool_acc_only(self):
        gt = [ToolCall("<<a>>", {"x": 1})]
        pred = [ToolCall("<<a>>", {"x": 1}), ToolCall("<<z>>", {})]
        assert eval_calling(pred, gt) == (0, 0, 1)

    def test_both_empty(self):
        assert eval_calling([], []) == (1, 1, 1)

    def test_em_implies_components(self):
        calls = [ToolCall("<<a>>", {}), ToolCall("<<b>>", {"q": "v"})]
        em, tool_acc, param_acc = eval_calling(calls, list(calls))
        assert em == tool_acc == param_acc == 1


class TestEvaluateDataset:
    def _perfect_predictions(self, records):
        return {r.id: perfect_trajectory_text(r) for r in records}

    def test_all_correct_is_100(self, small_registry, small_records):
        report = evaluate_dataset(self._perfect_predictions(small_records), small_records, small_registry)
        for value in (report.ident_em, report.ident_f1, report.call_em, report.tool_acc, report.param_acc):
            assert value == 100.0
        assert report.n == len(small_records)

    def test_one_fully_wrong_of_four(self, small_registry, small_records):
        records = small_records[:4]
        predictions = self._perfect_predictions(records)
        predictions[records[0].id] = "<think>no idea</think><response>pass</response>"
        report = evaluate_dataset(predictions, records, small_registry)
        assert report.ident_em == 75.0

    def test_missing_prediction_scores_zero(self, small_registry, small_records):
        predictions = self._perfect_predictions(small_records)
        dropped = small_records[0].id
        del predictions[dropped]
        report = evaluate_dataset(predictions, small_records, small_registry)
        expected = 100.0 * (len(small_records) - 1) / len(small_records)
        assert report.ident_em == pytest.approx(expected)
        detail = next(r for r in report.per_record if r.record_id == dropped)
        assert detail.missing and detail.ident_f1 == 0.0

    def test_unknown_record_id(self, small_registry, small_records):
        predictions = {"ghost": "<response>r</response>"}
        with pytest.raises(UnknownRecordId):
            evaluate_dataset(predictions, small_records, small_registry)

    def test_unparseable_prediction_scores_zero(self, small_registry, small_records):
        predictions = self._perfect_predictions(small_records)
        predictions[small_records[0].id] = "<think>broken"
        report = evaluate_dataset(predictions, small_records, small_registry)
        assert report.ident_em == pytest.approx(100.0 * (len(small_records) - 1) / len(small_records))

    def test_permutation_invariance(self, small_registry, small_records):
        predictions = self._perfect_predictions(small_records)
        a = evaluate_dataset(predictions, small_records, small_registry)
        shuffled = list(small_records)
        random.Random(5).shuffle(shuffled)
        b = evaluate_dataset(predictions, shuffled, small_registry)
        assert a.to_json() == {**b.to_json()}

    def test_call_em_bounded_by_components(self, small_registry, small_records):
        rng = random.Random(2)
        predictions = {}
        for record in small_records:
            roll = rng.random()
            if roll < 0.4:
                predictions[record.id] = perfect_trajectory_text(record)
            elif roll < 0.7:
                predictions[record.id] = "<think>t</think><response>idk</response>"
        report = evaluate_dataset(predictions, small_records, small_registry)
        assert report.call_em <= report.tool_acc + 1e-9
        assert report.call_em <= report.param_acc + 1e-9
        for detail in report.per_record:
            assert detail.call_em <= detail.tool_acc
            assert detail.call_em <= detail.param_acc

    def test_table_two_decimals(self, small_registry, small_records):
        report = evaluate_dataset(self._perfect_predictions(small_records), small_records, small_registry)
        table = report.format_table()
        assert "100.00" in table
        assert "ident_f1" in table

    def test_per_step_scope(self, small_registry):
        from tokencall.dataconstruct import DatasetRecord, RecordTurn

        s0, s1 = small_registry.surface_of(0), small_registry.surface_of(1)
        record = DatasetRecord(
            id="ms",
            instruction="q",
            turns=[
                RecordTurn(
                    user_text="q",
                    steps=[[ToolCall(s0, {"a": 1})], [ToolCall(s1, {"b": 2})]],
                )
            ],
        )
        # first step right, second step absent
        text = (
            "<think>t</think>"
            f"<tool_token>\n{s0}\n</tool_token>"
            f'<tool_call>\n{{"token":"{s0}","parameters":{{"a":1}}}}\n</tool_call>'
            "<obs>o</obs><response>r</response>"
        )
        final = evaluate_dataset({"ms": text}, [record], small_registry, turn_scope="final")
        per_step = evaluate_dataset({"ms": text}, [record], small_registry, turn_scope="per_step")
        assert final.ident_em == 0.0  # final step compared against final gt step
        assert per_step.ident_em == 50.0


@given(
    st.sets(st.sampled_from("abcdef")),
    st.sets(st.sampled_from("abcdef"), min_size=1),
)
@settings(max_examples=200, deadline=None)
def test_f1_monotone_in_correct_additions(pred, gt):
    _, f1_before = eval_identification(pred, gt)
    missing = gt - pred
    if missing:
        _, f1_after = eval_identification(pred | {next(iter(missing))}, gt)
        assert f1_after >= f1_before - 1e-12


@given(st.sets(st.sampled_from("abcdef")), st.sets(st.sampled_from("abcdef")))
@settings(max_examples=200, deadline=None)
def test_f1_bounds_and_em_implication(pred, gt):
    em, f1 = eval_identification(pred, gt)
    assert 0.0 <= f1 <= 1.0
    if em == 1:
        assert f1 == 1.0
