"""HTTP contract tests: endpoints, error bodies, caching, statelessness."""

import json
from pathlib import Path

import jsonschema
import pytest
from fastapi.testclient import TestClient

from congater.checkpoint import quantize_model, save_checkpoint
from congater.data import (SynthConfig, doc_neutrality, gen_classification,
                           gen_retrieval, save_background, save_jsonl,
                           save_wordlists, wordlists)
from congater.encoder import EncoderConfig, EncoderModel
from congater.service import create_app

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "schemas"


def schema(name: str) -> dict:
    return json.loads((SCHEMA_DIR / name).read_text())


def check(instance, schema_name: str, ref: str | None = None) -> None:
    doc = schema(schema_name)
    if ref is not None:
        doc = {"$defs": doc.get("$defs", {}), **doc["$defs"][ref]}
    jsonschema.validate(instance, doc)


VOCAB = 64
SEQ = 16


def small_synth(**kw) -> SynthConfig:
    base = dict(n_examples=160, vocab_size=VOCAB, seq_length=SEQ,
                markers_per_example=2, n_queries=24, candidates_per_query=4,
                background_docs=40, seed=0)
    base.update(kw)
    return SynthConfig(**base)


def small_encoder(attributes) -> EncoderConfig:
    return EncoderConfig(vocab_size=VOCAB, hidden=12, blocks=2, kind="mlp",
                         max_length=SEQ, attributes=dict(attributes),
                         attr_classes={a: 2 for a in attributes}, seed=0)


def fast_probe_config(directory: Path) -> None:
    payload = {"evaluation": {"n_probes": 2, "probe_epochs": 2,
                              "probe_lr": 0.05, "probe_batch_size": 64,
                              "probe_seed": 0}}
    (directory / "config.json").write_text(json.dumps(payload))


def write_classification_bundle(directory: Path, attributes=None,
                                with_eval=True) -> EncoderModel:
    attributes = attributes or {"gender": "congater"}
    directory.mkdir(parents=True)
    synth = small_synth(attributes={a: 2 for a in attributes})
    train_set, val_set, _ = gen_classification(synth)
    model = EncoderModel(small_encoder(attributes))
    quantize_model(model)
    model.provenance = {"task": "classification"}
    save_checkpoint(model, directory / "model.ckpt")
    if with_eval:
        save_jsonl(directory / "probe_train.jsonl", train_set)
        save_jsonl(directory / "eval.jsonl", val_set)
    fast_probe_config(directory)
    return model


def write_ranking_bundle(directory: Path) -> EncoderModel:
    directory.mkdir(parents=True)
    synth = small_synth()
    _, val_q, _, background = gen_retrieval(synth)
    model = EncoderModel(small_encoder({"gender": "congater"}))
    quantize_model(model)
    model.provenance = {"task": "ranking"}
    save_checkpoint(model, directory / "model.ckpt")
    save_jsonl(directory / "queries.jsonl", val_q)
    save_background(directory / "background.jsonl", background)
    save_wordlists(directory / "wordlists", wordlists(synth))
    fast_probe_config(directory)
    return model


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    write_classification_bundle(root / "clf")
    write_classification_bundle(root / "duo",
                                attributes={"age": "congater",
                                            "gender": "congater"})
    write_classification_bundle(root / "bare", with_eval=False)
    write_ranking_bundle(root / "rank")
    return root


@pytest.fixture(scope="module")
def client(model_dir):
    with TestClient(create_app(model_dir)) as c:
        yield c


def post(client, path, payload):
    return client.post(path, json=payload)


TOKENS = [3, 9, 4, 1, 7]


# ---------------------------------------------------------------------------
# /models


def test_models_lists_every_bundle(client):
    body = client.get("/models").json()
    check(body, "models_response.schema.json")
    by_name = {entry["name"]: entry for entry in body}
    assert set(by_name) == {"clf", "duo", "bare", "rank"}
    assert by_name["clf"]["task"] == "classification"
    assert by_name["rank"]["task"] == "ranking"
    assert by_name["clf"]["attributes"] == ["gender"]
    assert by_name["duo"]["attributes"] == ["age", "gender"]
    assert by_name["clf"]["classes"] == 2


def test_models_empty_dir(tmp_path):
    with TestClient(create_app(tmp_path / "nothing")) as c:
        assert c.get("/models").json() == []


def test_unknown_endpoint_and_method(client):
    r = client.get("/definitely-not-here")
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"
    r = client.get("/predict")
    assert r.status_code == 405
    assert r.json()["code"] == "method_not_allowed"


def test_cors_header_present(client):
    r = client.get("/models", headers={"Origin": "http://localhost:5173"})
    assert r.headers.get("access-control-allow-origin") == "*"


# ---------------------------------------------------------------------------
# /predict


def test_predict_contract_and_determinism(client):
    payload = {"model": "clf", "tokens": TOKENS, "omega": {"gender": 0.5}}
    first = post(client, "/predict", payload)
    second = post(client, "/predict", payload)
    assert first.status_code == 200
    assert first.content == second.content
    body = first.json()
    check(body, "predict.schema.json", ref="response")
    assert body["label"] == max(range(len(body["probs"])),
                                key=lambda i: body["probs"][i])
    assert abs(sum(body["probs"]) - 1.0) < 1e-9


def test_predict_omega_zero_equals_omitted(client):
    with_zero = post(client, "/predict",
                     {"model": "clf", "tokens": TOKENS,
                      "omega": {"gender": 0.0}}).json()
    without = post(client, "/predict",
                   {"model": "clf", "tokens": TOKENS}).json()
    assert with_zero == without


def test_predict_is_stateless_across_calls(client):
    before = post(client, "/predict", {"model": "clf", "tokens": TOKENS}).json()
    post(client, "/predict",
         {"model": "clf", "tokens": TOKENS, "omega": {"gender": 1.0}})
    after = post(client, "/predict", {"model": "clf", "tokens": TOKENS}).json()
    assert before == after


def test_predict_unknown_model(client):
    r = post(client, "/predict", {"model": "ghost", "tokens": TOKENS})
    assert r.status_code == 404
    body = r.json()
    check(body, "error.schema.json")
    assert body["code"] == "unknown_model"
    assert body["field"] == "model"


@pytest.mark.parametrize("payload,code,field", [
    ({"model": "clf"}, "missing_field", "tokens"),
    ({"model": "clf", "tokens": TOKENS, "extra": 1}, "unexpected_field", "extra"),
    ({"model": "clf", "tokens": []}, "bad_tokens", "tokens"),
    ({"model": "clf", "tokens": [1, "two"]}, "bad_tokens", "tokens"),
    ({"model": "clf", "tokens": [True, 1]}, "bad_tokens", "tokens"),
    ({"model": "clf", "tokens": [1, VOCAB]}, "bad_tokens", "tokens"),
    ({"model": "clf", "tokens": list(range(SEQ + 1))}, "bad_tokens", "tokens"),
    ({"model": "clf", "tokens": TOKENS, "omega": {"ghost": 0.5}},
     "unknown_attribute", "omega.ghost"),
    ({"model": "clf", "tokens": TOKENS, "omega": {"gender": 1.5}},
     "bad_omega", "omega.gender"),
    ({"model": "clf", "tokens": TOKENS, "omega": {"gender": "high"}},
     "bad_omega", "omega.gender"),
    ({"model": "clf", "tokens": TOKENS, "omega": [0.5]}, "bad_omega", "omega"),
])
def test_predict_validation_errors(client, payload, code, field):
    r = post(client, "/predict", payload)
    assert r.status_code == 422
    body = r.json()
    check(body, "error.schema.json")
    assert body["code"] == code
    assert body["field"] == field


def test_predict_rejects_non_json_body(client):
    r = client.post("/predict", content=b"not json at all",
                    headers={"content-type": "application/json"})
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_json"


# ---------------------------------------------------------------------------
# /sweep


def test_sweep_default_grid_and_schema(client):
    r = post(client, "/sweep", {"model": "clf"})
    assert r.status_code == 200
    body = r.json()
    check(body, "sweep.schema.json", ref="response")
    assert body["attributes"] == ["gender"]
    assert len(body["rows"]) == 11
    assert body["rows"][0]["omega"] == 0.0
    assert body["rows"][-1]["omega"] == 1.0


def test_sweep_replay_is_byte_identical(client):
    payload = {"model": "clf", "grid": [0.0, 0.5, 1.0]}
    first = post(client, "/sweep", payload)
    second = post(client, "/sweep", payload)
    assert first.content == second.content
    assert len(first.json()["rows"]) == 3


def test_sweep_multi_attribute_cartesian(client):
    r = post(client, "/sweep", {"model": "duo", "grid": [0.0, 1.0]})
    assert r.status_code == 200
    body = r.json()
    check(body, "sweep.schema.json", ref="response")
    assert body["attributes"] == ["age", "gender"]
    assert len(body["rows"]) == 4
    combos = {(row["omega"]["age"], row["omega"]["gender"])
              for row in body["rows"]}
    assert combos == {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}


def test_sweep_ranking_model(client):
    r = post(client, "/sweep", {"model": "rank", "grid": [0.0, 1.0]})
    assert r.status_code == 200
    for row in r.json()["rows"]:
        assert row["mrr10"] is not None
        assert row["nfairr10"] is not None
        assert row["probe_mean"] is None


@pytest.mark.parametrize("payload,status,code", [
    ({"model": "clf", "grid": [0.5, 1.0]}, 422, "bad_grid"),
    ({"model": "clf", "grid": [0.0, "x"]}, 422, "bad_grid"),
    ({"model": "clf", "grid": 0.5}, 422, "bad_grid"),
    ({"model": "clf", "attributes": []}, 422, "bad_attributes"),
    ({"model": "clf", "attributes": ["ghost"]}, 422, "unknown_attribute"),
    ({"model": "bare"}, 409, "no_eval_data"),
    ({"model": "ghost"}, 404, "unknown_model"),
])
def test_sweep_errors(client, payload, status, code):
    r = post(client, "/sweep", payload)
    assert r.status_code == status
    body = r.json()
    check(body, "error.schema.json")
    assert body["code"] == code


# ---------------------------------------------------------------------------
# /rank


def rank_payload(model_dir, n=3, rels=None):
    lists = wordlists(small_synth())
    candidates = []
    for i in range(n):
        cand = {"tokens": [2 + i, 11, 5, 8]}
        if rels is not None:
            cand["rel"] = rels[i]
        candidates.append(cand)
    return {"model": "rank", "query": [4, 9, 12], "candidates": candidates}, lists


def test_rank_plain(client, model_dir):
    payload, lists = rank_payload(model_dir)
    r = post(client, "/rank", payload)
    assert r.status_code == 200
    body = r.json()
    check(body, "rank.schema.json", ref="response")
    assert "mrr10" not in body and "nfairr10" not in body
    scores = [entry["score"] for entry in body["ranking"]]
    assert scores == sorted(scores, reverse=True)
    assert {entry["index"] for entry in body["ranking"]} == {0, 1, 2}
    for entry in body["ranking"]:
        tokens = payload["candidates"][entry["index"]]["tokens"]
        assert entry["neutrality"] == pytest.approx(
            doc_neutrality(tokens, lists))
        assert "rel" not in entry


def test_rank_with_relevance_reports_metrics(client, model_dir):
    payload, _ = rank_payload(model_dir, rels=[1, 1, 1])
    r = post(client, "/rank", payload)
    assert r.status_code == 200
    body = r.json()
    check(body, "rank.schema.json", ref="response")
    # every candidate is relevant, so whatever ranks first gives MRR 1
    assert body["mrr10"] == 1.0
    assert 0.0 < body["nfairr10"] <= 1.0
    assert all(entry["rel"] == 1 for entry in body["ranking"])


def test_rank_omega_changes_only_scores(client, model_dir):
    payload, _ = rank_payload(model_dir)
    base = post(client, "/rank", payload).json()
    payload["omega"] = {"gender": 1.0}
    gated = post(client, "/rank", payload).json()
    base_neut = {e["index"]: e["neutrality"] for e in base["ranking"]}
    gated_neut = {e["index"]: e["neutrality"] for e in gated["ranking"]}
    assert base_neut == gated_neut


def test_rank_mode_mismatch(client, model_dir):
    payload, _ = rank_payload(model_dir)
    payload["model"] = "clf"
    r = post(client, "/rank", payload)
    assert r.status_code == 409
    assert r.json()["code"] == "mode_mismatch"


def test_rank_needs_two_candidates(client):
    r = post(client, "/rank", {"model": "rank", "query": [1, 2],
                               "candidates": [{"tokens": [1, 2]}]})
    assert r.status_code == 422
    assert r.json()["code"] == "bad_candidates"


def test_rank_partial_relevance_rejected(client, model_dir):
    payload, _ = rank_payload(model_dir)
    payload["candidates"][0]["rel"] = 1
    r = post(client, "/rank", payload)
    assert r.status_code == 422
    assert r.json()["code"] == "partial_relevance"


def test_rank_candidate_field_errors(client, model_dir):
    payload, _ = rank_payload(model_dir)
    payload["candidates"][1] = {"tokens": [1, 2], "rel": 2}
    r = post(client, "/rank", payload)
    assert r.status_code == 422
    body = r.json()
    assert body["code"] == "bad_candidates"
    assert body["field"] == "candidates[1].rel"

    payload, _ = rank_payload(model_dir)
    payload["candidates"][1] = {"tokens": [1, VOCAB]}
    r = post(client, "/rank", payload)
    assert r.status_code == 422
    assert r.json()["field"] == "candidates[1].tokens"
