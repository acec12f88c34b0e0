import json
import os

import numpy as np
import pytest

from tritable.cli import main
from tritable.schema import load_jsonl_file


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "corpus.jsonl"
    rc = main(["synth", "--sentences", "30", "--relations", "3", "--seed", "5",
               "--max-len", "14", "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("cli") / "model"
    rc = main(["train", "--train", str(corpus), "--dev", str(corpus),
               "--out", str(out), "--d", "16", "--heads", "2",
               "--iterations", "1", "--enc-layers", "0", "--epochs", "15",
               "--batch-size", "8", "--lr", "5e-3", "--seed", "3"])
    assert rc == 0
    return out


class TestSynthCommand:
    def test_line_count_matches_request(self, tmp_path):
        out = tmp_path / "c.jsonl"
        assert main(["synth", "--sentences", "100", "--relations", "4",
                     "--seed", "7", "--out", str(out)]) == 0
        assert sum(1 for _ in open(out)) == 100

    def test_same_flags_identical_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args = ["synth", "--sentences", "25", "--relations", "3", "--seed", "9"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_relations_exits_2(self, tmp_path):
        rc = main(["synth", "--sentences", "5", "--relations", "0",
                   "--out", str(tmp_path / "x.jsonl")])
        assert rc == 2

    def test_sidecar_config_written(self, corpus):
        sidecar = json.loads((corpus.parent / "corpus.jsonl.config.json").read_text())
        assert sidecar["sentences"] == 30
        assert sidecar["seed"] == 5

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps({"sentences": 10, "relations": 2, "seed": 1}))
        out = tmp_path / "c.jsonl"
        assert main(["synth", "--config", str(cfg), "--sentences", "4",
                     "--out", str(out)]) == 0
        assert sum(1 for _ in open(out)) == 4


class TestTrainCommand:
    def test_missing_config_file_exits_2(self, tmp_path, corpus):
        rc = main(["train", "--config", str(tmp_path / "missing.json"),
                   "--train", str(corpus), "--dev", str(corpus),
                   "--out", str(tmp_path / "m")])
        assert rc == 2

    def test_missing_corpus_exits_2(self, tmp_path):
        rc = main(["train", "--train", str(tmp_path / "none.jsonl"),
                   "--dev", str(tmp_path / "none.jsonl"),
                   "--out", str(tmp_path / "m")])
        assert rc == 2

    def test_writes_model_dir_and_epoch_log(self, trained):
        assert (trained / "manifest.json").exists()
        assert (trained / "params").is_dir()
        lines = (trained / "epochs.jsonl").read_text().splitlines()
        entries = [json.loads(l) for l in lines]
        assert all({"epoch", "train_loss", "dev_p", "dev_r", "dev_f1",
                    "seconds"} == set(e) for e in entries)

    def test_rerun_same_seeds_identical_logs(self, tmp_path, corpus):
        logs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert main(["train", "--train", str(corpus), "--dev", str(corpus),
                         "--out", str(out), "--d", "16", "--heads", "2",
                         "--iterations", "1", "--enc-layers", "0",
                         "--epochs", "3", "--seed", "3"]) == 0
            entries = [json.loads(l) for l in
                       (out / "epochs.jsonl").read_text().splitlines()]
            for e in entries:
                e.pop("seconds")
            logs.append(entries)
        assert logs[0] == logs[1]


class TestEvalCommand:
    def test_model_eval_report_shape(self, tmp_path, corpus, trained):
        report_path = tmp_path / "report.json"
        assert main(["eval", "--model", str(trained), "--test", str(corpus),
                     "--match", "exact", "--report", str(report_path)]) == 0
        doc = json.loads(report_path.read_text())
        assert set(doc) == {"match", "overall", "by_pattern", "by_triple_count"}
        overall = doc["overall"]
        assert {"predicted", "gold", "correct", "precision", "recall", "f1"} \
            == set(overall)

    def test_head_match_at_least_exact(self, tmp_path, corpus, trained):
        scores = {}
        for mode in ("exact", "head"):
            rp = tmp_path / f"r_{mode}.json"
            assert main(["eval", "--model", str(trained), "--test", str(corpus),
                         "--match", mode, "--report", str(rp)]) == 0
            scores[mode] = json.loads(rp.read_text())["overall"]["f1"]
        assert scores["head"] >= scores["exact"]

    def test_decode_output_feeds_eval(self, tmp_path, corpus, trained):
        preds = tmp_path / "preds.jsonl"
        assert main(["decode", "--model", str(trained), "--input", str(corpus),
                     "--out", str(preds)]) == 0
        report_model = tmp_path / "rm.json"
        report_pred = tmp_path / "rp.json"
        assert main(["eval", "--model", str(trained), "--test", str(corpus),
                     "--report", str(report_model)]) == 0
        assert main(["eval", "--pred", str(preds), "--test", str(corpus),
                     "--report", str(report_pred)]) == 0
        assert (json.loads(report_model.read_text())
                == json.loads(report_pred.read_text()))

    def test_vocabulary_mismatch_exits_2(self, tmp_path, trained):
        other = tmp_path / "other.jsonl"
        assert main(["synth", "--sentences", "5", "--relations", "6",
                     "--seed", "1", "--out", str(other)]) == 0
        rc = main(["eval", "--model", str(trained), "--test", str(other),
                   "--report", str(tmp_path / "r.json")])
        assert rc == 2

    def test_requires_exactly_one_source(self, tmp_path, corpus):
        rc = main(["eval", "--test", str(corpus),
                   "--report", str(tmp_path / "r.json")])
        assert rc == 2


class TestDecodeCommand:
    def test_untrained_model_is_total(self, tmp_path, corpus):
        model_dir = tmp_path / "raw"
        from tritable.model import Model, ModelConfig
        from tritable.schema import load_jsonl_file
        ds = load_jsonl_file(str(corpus))
        Model.build(ModelConfig(d=8, heads=2, iterations=1, enc_layers=0,
                                max_len=64, seed=0), ds).save(str(model_dir))
        out = tmp_path / "p.jsonl"
        assert main(["decode", "--model", str(model_dir), "--input", str(corpus),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 30
        for line in lines:
            obj = json.loads(line)
            assert set(obj) == {"sentence_id", "triples"}


class TestRoundtripCommand:
    def test_synth_corpus_passes(self, corpus, capsys):
        assert main(["roundtrip", "--input", str(corpus)]) == 0
        assert "30 passed" in capsys.readouterr().out

    def test_empty_corpus_passes(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert main(["roundtrip", "--input", str(empty)]) == 0

    def test_unsafe_sentence_flagged_not_failed(self, tmp_path, capsys):
        # nested spans defeat nearest-match pairing; flagged unsafe, exit 0
        line = json.dumps({
            "id": "hard", "tokens": ["a", "b", "c", "d"],
            "triples": [
                {"subject": [0, 3], "relation": "r0", "object": [0, 3]},
                {"subject": [1, 2], "relation": "r0", "object": [1, 2]},
            ]})
        path = tmp_path / "unsafe.jsonl"
        path.write_text(line + "\n")
        assert main(["roundtrip", "--input", str(path)]) == 0
        assert "1 flagged unsafe" in capsys.readouterr().out

    def test_load_error_exits_2(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{nope\n")
        assert main(["roundtrip", "--input", str(bad)]) == 2


class TestGradcheckCommand:
    def test_default_config_exits_0(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        assert "max relative gradient error" in capsys.readouterr().out

    def test_corrupted_gradient_exits_1(self):
        assert main(["gradcheck", "--seed", "0",
                     "--inject-gradient-error"]) == 1

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_seed_sweep_exits_0(self, seed):
        assert main(["gradcheck", "--seed", str(seed), "--tokens", "4"]) == 0
