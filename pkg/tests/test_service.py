from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from tokencall.config import Config, ServiceConfig
from tokencall.losses import build_phase1_examples, save_examples
from tokencall.registry import build_registry
from tokencall.rewards import group_advantages, score
from tokencall.service import create_app
from tokencall.synth import oracle_script, perfect_trajectory_text, synth_records, synth_toolset
from tokencall.trajectory import check_format


@pytest.fixture(scope="module")
def registry():
    return build_registry(synth_toolset(15, seed=21), "atomic")


@pytest.fixture(scope="module")
def records(registry):
    return synth_records(registry, 5, seed=22)


@pytest.fixture(scope="module")
def client(registry, records):
    app = create_app(registry, records, Config(service=ServiceConfig(max_concurrent=64)))
    with TestClient(app) as c:
        yield c


class TestScore:
    def test_perfect_matches_library(self, client, registry, records):
        record = records[0]
        text = perfect_trajectory_text(record)
        response = client.post("/score", json={"text": text, "record_id": record.id})
        assert response.status_code == 200
        body = response.json()
        expected = score(text, record.gt_steps(), registry)
        assert {k: body[k] for k in ("format", "tool", "param", "total")} == expected.to_json()
        assert body["total"] == 3.0

    def test_stateless_gt_in_request(self, client, registry, records):
        record = records[0]
        text = perfect_trajectory_text(record)
        gt = [
            [{"token": c.token_surface, "parameters": c.parameters} for c in step]
            for step in record.gt_steps()
        ]
        response = client.post("/score", json={"text": text, "gt_calls_per_step": gt})
        assert response.json()["total"] == 3.0

    def test_unknown_record_404(self, client):
        response = client.post("/score", json={"text": "x", "record_id": "ghost"})
        assert response.status_code == 404

    def test_needs_gt_400(self, client):
        response = client.post("/score", json={"text": "x"})
        assert response.status_code == 400

    def test_malformed_text_scores_zero(self, client, records):
        response = client.post("/score", json={"text": "<think>broken", "record_id": records[0].id})
        assert response.status_code == 200
        assert response.json()["total"] == 0.0


class TestAdvantages:
    def test_matches_library(self, client):
        rewards = [1.0, 2.0, 3.0]
        response = client.post("/advantages", json={"rewards": rewards})
        expected = group_advantages(rewards)
        assert response.json()["advantages"] == pytest.approx(list(expected.advantages))

    def test_degenerate(self, client):
        response = client.post("/advantages", json={"rewards": [5, 5, 5]})
        body = response.json()
        assert body["degenerate"] is True
        assert body["advantages"] == [0.0, 0.0, 0.0]

    def test_too_small_400(self, client):
        assert client.post("/advantages", json={"rewards": [1.0]}).status_code == 400


class TestLosses:
    def test_losses_endpoint(self, client, registry, records, tmp_path_factory):
        examples = build_phase1_examples(registry, records)
        path = tmp_path_factory.mktemp("examples") / "phase1.jsonl"
        save_examples(examples, path)
        logprobs = [{"example_id": e.example_id, "logprobs": [-1.0, -0.5]} for e in examples]
        response = client.post(
            "/losses",
            json={"examples_ref": str(path), "logprobs": logprobs, "alpha": 1.0, "beta": 1.0},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["memorization"] == pytest.approx(1.5 * len(registry))
        assert body["phase1_total"] == pytest.approx(
            body["memorization"] + body["recall"] + body["usage"]
        )

    def test_missing_logprobs_400(self, client, registry, records, tmp_path_factory):
        examples = build_phase1_examples(registry, records)
        path = tmp_path_factory.mktemp("examples") / "phase1.jsonl"
        save_examples(examples, path)
        response = client.post("/losses", json={"examples_ref": str(path), "logprobs": []})
        assert response.status_code == 400

    def test_bad_ref_404(self, client):
        response = client.post("/losses", json={"examples_ref": "/nope.jsonl", "logprobs": []})
        assert response.status_code == 404


class TestTools:
    def test_registered_surface(self, client, registry):
        surface = registry.surface_of(0)
        response = client.get(f"/tools/{surface}")
        assert response.status_code == 200
        assert response.json()["tool"]["name"] == registry.tools[0].name

    def test_unknown_surface_404(self, client):
        assert client.get("/tools/_friends").status_code == 404


class TestSessions:
    def test_full_turn_over_http(self, client, registry, records):
        record = records[0]
        opened = client.post("/session", json={"record_id": record.id}).json()
        session_id = opened["session_id"]
        assert opened["stop_tags"] == ["</tool_token>", "</response>"]
        assert f"<user>{record.instruction}</user>" in opened["prompt"]
        script = oracle_script(record, registry)
        body = None
        for text in script:
            body = client.post(f"/session/{session_id}/step", json={"text": text}).json()
        assert body["done"] is True
        assert check_format(body["trajectory"])

    def test_new_turn_after_done(self, client, registry, records):
        record = records[1]
        opened = client.post("/session", json={"record_id": record.id}).json()
        session_id = opened["session_id"]
        for text in oracle_script(record, registry):
            body = client.post(f"/session/{session_id}/step", json={"text": text}).json()
        assert body["done"] is True
        follow = client.post(
            f"/session/{session_id}/step", json={"user_text": "and another thing"}
        ).json()
        assert follow["done"] is False
        assert "<user>and another thing</user>" in follow["prompt"]

    def test_unknown_session_404(self, client):
        assert client.post("/session/ghost/step", json={"text": "x"}).status_code == 404

    def test_interleaved_sessions_stay_independent(self, client, registry, records):
        ids, scripts = [], []
        for record in records[3:5]:
            opened = client.post("/session", json={"record_id": record.id}).json()
            ids.append(opened["session_id"])
            scripts.append(oracle_script(record, registry))
        finals = {}
        for step in range(max(len(s) for s in scripts)):
            for sid, script in zip(ids, scripts):
                if step < len(script):
                    finals[sid] = client.post(f"/session/{sid}/step", json={"text": script[step]}).json()
        for sid, record in zip(ids, records[3:5]):
            assert finals[sid]["done"] is True
            assert record.instruction in finals[sid]["trajectory"]
            assert check_format(finals[sid]["trajectory"])

    def test_protocol_violation_400(self, client, records):
        opened = client.post("/session", json={"record_id": records[2].id}).json()
        response = client.post(
            f"/session/{opened['session_id']}/step", json={"text": "<obs>weird</obs>"}
        )
        assert response.status_code == 400


class TestConcurrencyLimit:
    def test_rejects_over_capacity(self, registry, records):
        import threading

        app = create_app(registry, records, Config(service=ServiceConfig(max_concurrent=1)))
        release = threading.Event()

        @app.get("/slow")
        def slow():
            release.wait(timeout=5)
            return {"ok": True}

        with TestClient(app) as c:
            with ThreadPoolExecutor(max_workers=2) as pool:
                first = pool.submit(lambda: c.get("/slow"))
                import time

                time.sleep(0.2)
                second = c.get("/health")
                release.set()
                assert first.result().status_code == 200
        assert second.status_code == 503

    def test_concurrent_scores_identical(self, client, registry, records):
        record = records[0]
        text = perfect_trajectory_text(record)
        expected = score(text, record.gt_steps(), registry).to_json()
        payload = {"text": text, "record_id": record.id}

        def one(_):
            return client.post("/score", json=payload)

        with ThreadPoolExecutor(max_workers=16) as pool:
            responses = list(pool.map(one, range(32)))
        assert all(r.status_code == 200 for r in responses)
        for r in responses:
            body = r.json()
            assert {k: body[k] for k in expected} == expected
