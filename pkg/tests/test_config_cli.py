"""Config validation and the command line, end to end on tiny runs."""

import json
from pathlib import Path

import pytest

from congater import cli
from congater.config import (ConfigError, apply_overrides, config_hash,
                             load_config, validate)

TINY = [
    "--set", "encoder.vocab_size=64",
    "--set", "encoder.hidden=12",
    "--set", 'encoder.kind="mlp"',
    "--set", "data.n_examples=200",
    "--set", "data.seq_length=16",
    "--set", "data.markers_per_example=2",
    "--set", "training.train_epochs=1",
    "--set", "training.adv_epochs=1",
    "--set", "training.batch_size=32",
    "--set", "evaluation.n_probes=2",
    "--set", "evaluation.probe_epochs=3",
    "--set", "evaluation.probe_lr=0.05",
]

TINY_RANKING = TINY + [
    "--set", 'data.mode="ranking"',
    "--set", "data.n_queries=24",
    "--set", "data.candidates_per_query=4",
    "--set", "data.background_docs=40",
    "--set", 'training.regime="posthoc"',
]


# ---------------------------------------------------------------------------
# config document handling


class TestConfig:
    def test_defaults_resolve(self):
        run = load_config(None)
        assert run["encoder"]["vocab_size"] == 512
        assert run["training"]["regime"] == "parallel"
        assert run["evaluation"]["omega_grid"][0] == 0.0

    def test_unknown_section_named(self):
        with pytest.raises(ConfigError, match="trainingg"):
            validate({"trainingg": {}})

    def test_unknown_key_named_with_path(self):
        with pytest.raises(ConfigError, match=r"training\.task_lrr"):
            validate({"training": {"task_lrr": 1e-3}})

    def test_type_mismatch_named_with_path(self):
        with pytest.raises(ConfigError, match=r"data\.n_examples"):
            validate({"data": {"n_examples": "lots"}})

    def test_overrides_parse_json_and_bare_words(self):
        doc = apply_overrides({}, ["training.task_lr=0.5",
                                   "data.mode=ranking",
                                   "data.upsample=false"])
        assert doc["training"]["task_lr"] == 0.5
        assert doc["data"]["mode"] == "ranking"
        assert doc["data"]["upsample"] is False

    def test_override_requires_section_key_form(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["task_lr=0.5"])
        with pytest.raises(ConfigError):
            apply_overrides({}, ["training.task_lr"])

    def test_hash_stable_and_sensitive(self):
        a = validate({"training": {"seed": 1}})
        b = validate({"training": {"seed": 1}})
        c = validate({"training": {"seed": 2}})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)

    def test_config_file_loading(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"training": {"seed": 7}}))
        run = load_config(path)
        assert run["training"]["seed"] == 7
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(bad)

    def test_lambda_accepts_map(self):
        run = load_config(None, ["losses.lambda={\"gender\": 2.0}"])
        assert run.loss_config().lambdas == {"gender": 2.0}


# ---------------------------------------------------------------------------
# command line


def run_cli(argv) -> int:
    return cli.main([str(a) for a in argv])


class TestCliErrors:
    def test_bad_config_key_exits_2(self, capsys, tmp_path):
        code = run_cli(["synth", "--set", "data.bogus=1",
                        "--out", tmp_path / "x"])
        assert code == 2
        assert "data.bogus" in capsys.readouterr().err

    def test_bad_grid_exits_2(self, capsys, tmp_path):
        code = run_cli(["sweep", tmp_path / "nope", "--omega-grid", "0.5,1"])
        assert code == 2
        assert "grid" in capsys.readouterr().err

    def test_missing_bundle_exits_1(self, capsys, tmp_path):
        code = run_cli(["sweep", tmp_path / "nope"])
        assert code == 1
        assert "model.ckpt" in capsys.readouterr().err


class TestSynth:
    def test_deterministic_files(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert run_cli(["synth", *TINY, "--out", tmp_path / name]) == 0
        for fname in ("train.jsonl", "val.jsonl", "test.jsonl", "meta.json"):
            assert (tmp_path / "a" / fname).read_bytes() == \
                   (tmp_path / "b" / fname).read_bytes()

    def test_meta_stamp_and_json_flag(self, tmp_path, capsys):
        assert run_cli(["synth", *TINY, "--json", "--out", tmp_path / "d"]) == 0
        printed = json.loads(capsys.readouterr().out)
        meta = json.loads((tmp_path / "d" / "meta.json").read_text())
        assert printed == meta
        for key in ("config_hash", "seed", "format_version"):
            assert key in meta
        assert meta["counts"]["train"] == 140  # 63:12:15 split of 200

    def test_ranking_mode_writes_background(self, tmp_path):
        assert run_cli(["synth", *TINY_RANKING, "--out", tmp_path / "r"]) == 0
        assert (tmp_path / "r" / "background.jsonl").exists()
        lists_dir = tmp_path / "r" / "wordlists"
        assert sorted(p.name for p in lists_dir.iterdir()) == \
            ["gender.0.txt", "gender.1.txt"]


@pytest.fixture(scope="module")
def trained_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bundle"
    assert cli.main(["train", *TINY, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def ranking_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_rank") / "bundle"
    assert cli.main(["train", *TINY_RANKING, "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_bundle_layout(self, trained_bundle):
        names = sorted(p.name for p in trained_bundle.iterdir())
        assert names == ["config.json", "eval.jsonl", "model.ckpt",
                         "probe_train.jsonl", "run_log.json", "wordlists"]

    def test_artifacts_carry_stamp(self, trained_bundle):
        for fname in ("config.json", "run_log.json"):
            payload = json.loads((trained_bundle / fname).read_text())
            assert set(payload) >= {"config_hash", "seed", "format_version"}
        log = json.loads((trained_bundle / "run_log.json").read_text())
        assert len(log["records"]) == 2  # one task epoch, one attribute epoch

    def test_checkpoint_carries_task_and_stamp(self, trained_bundle):
        from congater.checkpoint import load_checkpoint
        model = load_checkpoint(trained_bundle / "model.ckpt")
        assert model.provenance["task"] == "classification"
        assert "config_hash" in model.provenance

    def test_bundle_serves(self, trained_bundle):
        from fastapi.testclient import TestClient

        from congater.service import create_app
        with TestClient(create_app(trained_bundle.parent)) as client:
            models = client.get("/models").json()
            assert models == [{"name": "bundle", "task": "classification",
                               "attributes": ["gender"], "classes": 2}]

    def test_ranking_bundle_layout(self, ranking_bundle):
        names = sorted(p.name for p in ranking_bundle.iterdir())
        assert names == ["background.jsonl", "config.json", "model.ckpt",
                         "queries.jsonl", "run_log.json", "wordlists"]


class TestSweepCommand:
    def test_three_point_grid(self, trained_bundle, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli(["sweep", trained_bundle, *TINY,
                        "--omega-grid", "0,0.5,1", "--out", out])
        assert code == 0
        payload = json.loads(out.with_suffix(".json").read_text())
        assert set(payload) >= {"config_hash", "seed", "format_version",
                                "attributes", "grid", "rows"}
        assert payload["grid"] == [0.0, 0.5, 1.0]
        assert [row["omega"] for row in payload["rows"]] == [0.0, 0.5, 1.0]

    def test_zero_row_matches_direct_evaluation(self, trained_bundle, tmp_path):
        from congater.service import load_bundle
        out = tmp_path / "sweep"
        assert run_cli(["sweep", trained_bundle, *TINY,
                        "--omega-grid", "0,1", "--out", out]) == 0
        payload = json.loads(out.with_suffix(".json").read_text())
        zero_row = payload["rows"][0]
        bundle = load_bundle(trained_bundle)
        z = bundle.model.encode([ex.tokens for ex in bundle.eval_examples], {})
        predicted = bundle.model.predict(z).values.argmax(axis=1)
        labels = [ex.task_label for ex in bundle.eval_examples]
        accuracy = float((predicted == labels).mean())
        assert zero_row["task"] == pytest.approx(accuracy, abs=1e-12)

    def test_csv_written_with_stamp_comment(self, trained_bundle, tmp_path):
        out = tmp_path / "sweep"
        assert run_cli(["sweep", trained_bundle, *TINY,
                        "--omega-grid", "0,1", "--out", out]) == 0
        lines = out.with_suffix(".csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == ("omega,task,probe_mean,probe_std,uncertainty,"
                            "flip_retention,mrr10,nfairr10")
        assert len(lines) == 4

    def test_deterministic_artifact(self, trained_bundle, tmp_path):
        outs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            assert run_cli(["sweep", trained_bundle, *TINY,
                            "--omega-grid", "0,1", "--out", out]) == 0
            outs.append(out.with_suffix(".json").read_bytes())
        assert outs[0] == outs[1]


class TestProbeCommand:
    def test_rows_per_omega(self, trained_bundle, capsys):
        code = run_cli(["probe", trained_bundle, *TINY,
                        "--omega-grid", "0,1", "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert [row["omega"] for row in payload["rows"]] == [0.0, 1.0]
        for row in payload["rows"]:
            assert row["attribute"] == "gender"
            assert len(row["scores"]) == 2  # n_probes
            assert 0.0 <= row["mean"] <= 1.0

    def test_rejects_ranking_bundle(self, ranking_bundle, capsys):
        assert run_cli(["probe", ranking_bundle, "--omega-grid", "0,1"]) == 1
        assert "classification" in capsys.readouterr().err


class TestRankEvalCommand:
    def test_metrics_table(self, ranking_bundle, capsys):
        code = run_cli(["rank-eval", ranking_bundle, *TINY_RANKING,
                        "--omega-grid", "0,1", "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert [row["omega"] for row in payload["rows"]] == [0.0, 1.0]
        for row in payload["rows"]:
            assert 0.0 <= row["mrr10"] <= 1.0
            assert 0.0 <= row["nfairr10"] <= 1.0

    def test_rejects_classification_bundle(self, trained_bundle, capsys):
        assert run_cli(["rank-eval", trained_bundle,
                        "--omega-grid", "0,1"]) == 1
        assert "ranking" in capsys.readouterr().err


class TestReportCommand:
    def test_renders_sweep_artifact(self, trained_bundle, tmp_path):
        out = tmp_path / "sweep"
        assert run_cli(["sweep", trained_bundle, *TINY,
                        "--omega-grid", "0,0.5,1", "--out", out]) == 0
        svg_path = tmp_path / "curves.svg"
        assert run_cli(["report", out.with_suffix(".json"),
                        "--out", svg_path]) == 0
        svg = svg_path.read_text()
        assert svg.startswith("<svg ")
        assert "polyline" in svg
        assert "task" in svg

    def test_default_output_path(self, trained_bundle, tmp_path):
        out = tmp_path / "sweep"
        assert run_cli(["sweep", trained_bundle, *TINY,
                        "--omega-grid", "0,1", "--out", out]) == 0
        assert run_cli(["report", out.with_suffix(".json")]) == 0
        assert out.with_suffix(".svg").exists()

    def test_rejects_non_report_json(self, tmp_path, capsys):
        path = tmp_path / "junk.json"
        path.write_text(json.dumps({"rows": []}))
        assert run_cli(["report", path]) == 1
        assert "attributes" in capsys.readouterr().err
