"""End-to-end command-line behaviour on tiny synthetic runs."""

import json

import pytest

from affuq import HeadConfig, RngStream, init_params, load_dataset, serialize
from affuq.cli import build_parser, main


def run(args):
    return main([str(a) for a in args])


def synth_args(out, seed=0, count=40, classes=3, noise=0.0, kind="blobs", shift=10.0):
    return ["synth", "--kind", kind, "--count", count, "--classes", classes,
            "--obj-dim", 5, "--glob-dim", 5, "--noise-rate", noise,
            "--shift", shift, "--seed", seed, "--out", out]


def train_args(data, out, seed=0, epochs=3, method="single", members=2,
               dropout=0.3):
    return ["train", "--data", data, "--action", "sit", "--epochs", epochs,
            "--batch-size", 16, "--lr", 0.01, "--hidden-dim", 12,
            "--fc-hidden-dim", 6, "--num-categories", 3,
            "--dropout-rate", dropout, "--method", method, "--M", members,
            "--seed", seed, "--out", out]


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "blobs.jsonl"
    assert run(synth_args(data)) == 0
    return tmp_path, data


class TestSynth:
    def test_writes_requested_count(self, tmp_path):
        out = tmp_path / "d.jsonl"
        assert run(synth_args(out, count=200)) == 0
        assert len(load_dataset(out)) == 200
        meta = json.loads((tmp_path / "d.jsonl.meta.json").read_text())
        assert meta["generator"] == "blobs"
        assert "created_at" in meta

    def test_ood_has_no_labels(self, tmp_path):
        out = tmp_path / "ood.jsonl"
        assert run(synth_args(out, kind="ood", shift=10.0, count=15)) == 0
        dataset = load_dataset(out)
        assert all(rec.labels == {} for rec in dataset.records)

    def test_seed_determinism(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(synth_args(a, seed=9)) == 0
        assert run(synth_args(b, seed=9)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_spec_fails(self, tmp_path, capsys):
        assert run(synth_args(tmp_path / "x.jsonl", classes=1)) == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_single_writes_model_and_log(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "run")) == 0
        assert (tmp_path / "run.model.json").exists()
        log_lines = (tmp_path / "run.log.jsonl").read_text().splitlines()
        assert len(log_lines) == 3

    def test_zero_epochs_equals_serialized_init(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "cold", seed=5, epochs=0)) == 0
        header = load_dataset(data).header
        config = HeadConfig(
            num_object_classes=header.num_object_classes,
            obj_feature_dim=5, global_feature_dim=5, hidden_dim=12,
            fc_hidden_dim=6, num_categories=3, dropout_rate=0.3,
        )
        expected = serialize(init_params(config, RngStream(5).derive("init")), config)
        assert (tmp_path / "cold.model.json").read_bytes() == expected

    def test_rerun_is_byte_identical(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "one", seed=3)) == 0
        assert run(train_args(data, tmp_path / "two", seed=3)) == 0
        assert (tmp_path / "one.model.json").read_bytes() \
            == (tmp_path / "two.model.json").read_bytes()
        assert (tmp_path / "one.log.jsonl").read_bytes() \
            == (tmp_path / "two.log.jsonl").read_bytes()

    def test_ensemble_writes_members_and_manifest(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "ens", method="ensemble",
                              members=3, dropout=0.0)) == 0
        manifest = json.loads((tmp_path / "ens.manifest.json").read_text())
        assert manifest["num_members"] == 3
        for index in range(3):
            assert (tmp_path / f"ens.member{index:02d}.model.json").exists()

    def test_missing_data_errors(self, tmp_path, capsys):
        assert run(train_args(tmp_path / "nope.jsonl", tmp_path / "x")) == 1
        assert "error:" in capsys.readouterr().err


class TestPredict:
    def test_mc_single_pass_rate_zero_has_zero_epistemic(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "m")) == 0
        out = tmp_path / "preds.jsonl"
        assert run(["predict", "--model", tmp_path / "m.model.json",
                    "--data", data, "--method", "mc_dropout", "--M", 1,
                    "--dropout-rate", 0.0, "--seed", 1, "--out", out]) == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == 40
        assert all(row["trace_e"] == 0.0 for row in rows)
        assert all(len(row["mean_p"]) == 3 for row in rows)
        assert "sigma_a" not in rows[0]

    def test_full_flag_and_decompose_alias_agree(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "m")) == 0
        flagged = tmp_path / "full.jsonl"
        aliased = tmp_path / "alias.jsonl"
        common = ["--model", tmp_path / "m.model.json", "--data", data,
                  "--M", 4, "--seed", 2]
        assert run(["predict", *common, "--full", "--out", flagged]) == 0
        assert run(["decompose", *common, "--out", aliased]) == 0
        assert flagged.read_bytes() == aliased.read_bytes()
        row = json.loads(flagged.read_text().splitlines()[0])
        assert len(row["sigma_a"]) == 3 and len(row["sigma_a"][0]) == 3

    def test_single_member_ensemble_equals_deterministic_pass(self, workspace):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "solo", method="ensemble",
                              members=1, dropout=0.0)) == 0
        ens_out = tmp_path / "ens.jsonl"
        mc_out = tmp_path / "mc.jsonl"
        assert run(["predict", "--model", tmp_path / "solo.manifest.json",
                    "--data", data, "--out", ens_out]) == 0
        assert run(["predict", "--model", tmp_path / "solo.member00.model.json",
                    "--data", data, "--method", "mc_dropout", "--M", 1,
                    "--dropout-rate", 0.0, "--seed", 7, "--out", mc_out]) == 0
        ens_rows = [json.loads(l) for l in ens_out.read_text().splitlines()]
        mc_rows = [json.loads(l) for l in mc_out.read_text().splitlines()]
        for a, b in zip(ens_rows, mc_rows):
            assert a["mean_p"] == b["mean_p"]
            assert a["predicted_class"] == b["predicted_class"]

    def test_method_file_mismatch_errors(self, workspace, capsys):
        tmp_path, data = workspace
        assert run(train_args(data, tmp_path / "m")) == 0
        code = run(["predict", "--model", tmp_path / "m.model.json",
                    "--data", data, "--method", "ensemble",
                    "--out", tmp_path / "x.jsonl"])
        assert code == 1
        assert "manifest" in capsys.readouterr().err

    def test_dimension_mismatch_errors(self, workspace, tmp_path, capsys):
        _, data = workspace
        other = tmp_path / "wide.jsonl"
        assert run(["synth", "--count", 10, "--classes", 3, "--obj-dim", 9,
                    "--glob-dim", 9, "--seed", 0, "--out", other]) == 0
        assert run(train_args(data, tmp_path / "m")) == 0
        code = run(["predict", "--model", tmp_path / "m.model.json",
                    "--data", other, "--out", tmp_path / "x.jsonl"])
        assert code == 1
        assert "disagree" in capsys.readouterr().err


class TestMetrics:
    def _pipeline(self, tmp_path, data):
        assert run(train_args(data, tmp_path / "m", epochs=25)) == 0
        preds = tmp_path / "preds.jsonl"
        assert run(["predict", "--model", tmp_path / "m.model.json",
                    "--data", data, "--M", 20, "--seed", 3,
                    "--out", preds]) == 0
        return preds

    def test_report_csv_and_figure(self, workspace):
        tmp_path, data = workspace
        preds = self._pipeline(tmp_path, data)
        assert run(["metrics", "--pred", preds, "--data", data,
                    "--action", "sit", "--bins", 10,
                    "--out", tmp_path / "eval"]) == 0
        report = json.loads((tmp_path / "eval.report.json").read_text())
        assert report["action"] == "sit"
        assert 0.0 <= report["ece"] <= 1.0
        assert 0.0 <= report["brier"] <= 2.0
        csv_lines = (tmp_path / "eval.reliability.csv").read_text().splitlines()
        assert csv_lines[0] == "bin_center,acc,conf,count"
        assert len(csv_lines) == 11
        svg = (tmp_path / "eval.reliability.svg").read_text()
        assert svg.lstrip().startswith("<?xml")

    def test_perfect_predictions_score_perfectly(self, tmp_path):
        data = tmp_path / "d.jsonl"
        assert run(synth_args(data, count=30)) == 0
        dataset = load_dataset(data)
        preds = tmp_path / "oracle.jsonl"
        with open(preds, "w") as fh:
            for rec in dataset.records:
                p = [0.0, 0.0, 0.0]
                p[rec.labels[list(rec.labels)[0]]] = 1.0
                fh.write(json.dumps({"record_id": rec.record_id, "mean_p": p}) + "\n")
        assert run(["metrics", "--pred", preds, "--data", data,
                    "--action", "sit", "--out", tmp_path / "eval"]) == 0
        report = json.loads((tmp_path / "eval.report.json").read_text())
        assert report["macro_acc_seven"] == 1.0
        assert report["macro_acc_three"] == 1.0
        assert report["macro_acc_binary"] == 1.0
        assert report["ece"] == 0.0
        assert report["brier"] == 0.0

    def test_missing_labels_fail(self, workspace, tmp_path, capsys):
        _, data = workspace
        ood = tmp_path / "ood.jsonl"
        assert run(synth_args(ood, kind="ood", count=10)) == 0
        assert run(train_args(data, tmp_path / "m")) == 0
        preds = tmp_path / "p.jsonl"
        assert run(["predict", "--model", tmp_path / "m.model.json",
                    "--data", ood, "--M", 2, "--out", preds]) == 0
        code = run(["metrics", "--pred", preds, "--data", ood,
                    "--action", "sit", "--out", tmp_path / "eval"])
        assert code == 1
        assert "label" in capsys.readouterr().err


class TestConfigFile:
    def test_file_supplies_defaults_flags_override(self, workspace):
        tmp_path, data = workspace
        config_path = tmp_path / "train.config.json"
        config_path.write_text(json.dumps({
            "epochs": 1, "batch-size": 16, "lr": 0.01, "hidden-dim": 12,
            "fc-hidden-dim": 6, "num-categories": 3, "method": "single",
        }))
        assert run(["train", "--config", config_path, "--data", data,
                    "--action", "sit", "--epochs", 2,
                    "--out", tmp_path / "cfg"]) == 0
        log_lines = (tmp_path / "cfg.log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2  # the explicit flag beat the file value

    def test_unknown_key_rejected(self, workspace, capsys):
        tmp_path, data = workspace
        config_path = tmp_path / "bad.json"
        config_path.write_text(json.dumps({"learning-rate": 0.1}))
        code = run(["train", "--config", config_path, "--data", data,
                    "--action", "sit", "--epochs", 1, "--out", tmp_path / "x"])
        assert code == 1
        assert "learning-rate" in capsys.readouterr().err


class TestEnvironment:
    def test_data_dir_resolves_relative_paths(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AFFUQ_DATA_DIR", str(tmp_path))
        assert run(["synth", "--count", 10, "--classes", 2, "--seed", 0,
                    "--out", "rel.jsonl"]) == 0
        assert (tmp_path / "rel.jsonl").exists()


class TestHelp:
    def test_flags_listed_with_defaults(self, capsys):
        parser, subs = build_parser()
        for name, sub in subs.items():
            text = sub.format_help()
            assert "--seed" in text
            assert "--config" in text
        predict_help = subs["predict"].format_help()
        assert "--M" in predict_help and "default: 50" in predict_help
        assert "--dropout-rate" in predict_help and "default: 0.3" in predict_help
        train_help = subs["train"].format_help()
        assert "default: 128" in train_help      # batch size
        assert "default: 0.0001" in train_help   # initial learning rate
        assert "default: 0.85" in train_help     # decay factor
