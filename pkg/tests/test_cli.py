import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tweetmisinfo import cli, embed, textnorm
from tweetmisinfo.errors import ConfigError
from tweetmisinfo.synthetic import make_corpus

FIXTURES = Path(__file__).parent / "fixtures"


def run(*args):
    return cli.main([str(a) for a in args])


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_preprocess_golden(tmp_path):
    out = tmp_path / "norm.jsonl"
    assert run("preprocess", "--dataset", FIXTURES / "three.jsonl", "--normalized", out) == 0
    assert out.read_text() == (FIXTURES / "three.normalized.jsonl").read_text()
    stats = json.loads((tmp_path / "norm.jsonl.stats.json").read_text())
    assert stats["written"] == 3 and stats["dropped_empty"] == 0


def test_preprocess_counts_dropped(tmp_path):
    src = tmp_path / "d.jsonl"
    src.write_text('{"id": "a", "text": "hello"}\n{"id": "b", "text": "@x https://t.co/1"}\n')
    assert run("preprocess", "--dataset", src, "--output-dir", tmp_path) == 0
    stats = json.loads((tmp_path / "normalized.jsonl.stats.json").read_text())
    assert stats["dropped_ids"] == ["b"]


def test_preprocess_errors(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("preprocess", "--dataset", empty, "--output-dir", tmp_path) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "ok"}\n{"id": "b", "text": \n')
    assert run("preprocess", "--dataset", bad, "--output-dir", tmp_path) == 3
    assert "bad.jsonl:2" in capsys.readouterr().err
    assert run("preprocess", "--dataset", tmp_path / "missing.jsonl") == 2


def test_embed_toy_determinism(tmp_path):
    norm = FIXTURES / "three.normalized.jsonl"
    a, b, c = tmp_path / "a.emb1", tmp_path / "b.emb1", tmp_path / "c.emb1"
    assert run("embed-toy", "--normalized", norm, "--embeddings", a, "--seed", 1) == 0
    assert run("embed-toy", "--normalized", norm, "--embeddings", b, "--seed", 1) == 0
    assert run("embed-toy", "--normalized", norm, "--embeddings", c, "--seed", 2) == 0
    assert sha(a) == sha(b) != sha(c)
    mats = list(embed.read_embeddings(a))
    assert [m.tweet_id for m in mats] == ["1", "2", "3"]
    assert mats[1].values.shape == (4, 9, 32)


def test_embed_toy_from_raw_text(tmp_path):
    out = tmp_path / "e.emb1"
    assert run("embed-toy", "--dataset", FIXTURES / "three.jsonl", "--embeddings", out) == 0
    assert [m.n_tokens for m in embed.read_embeddings(out)] == [1, 9, 6]


def test_embed_toy_missing_dataset(tmp_path):
    assert run("embed-toy", "--dataset", tmp_path / "nope.jsonl", "--output-dir", tmp_path) == 2


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("seed: 3\npooling: last\nclassifier:\n  epochs: 7\n")
    cfg = cli.load_config(cfg_file, env={})
    assert (cfg.seed, cfg.pooling, cfg.classifier["epochs"]) == (3, "last", 7)
    env = {"TWEETMISINFO_SEED": "5", "TWEETMISINFO_CLASSIFIER__EPOCHS": "9", "TWEETMISINFO_CD": "false"}
    cfg = cli.load_config(cfg_file, env=env)
    assert (cfg.seed, cfg.classifier["epochs"], cfg.cd) == (5, 9, False)
    cfg = cli.load_config(cfg_file, env=env, overrides={"seed": 8, "cd": True})
    assert (cfg.seed, cfg.cd) == (8, True)
    assert cfg.threshold == 0.4


@pytest.mark.parametrize(
    "text", ["threshold: 1.5\n", "classes: 4\n", "bogus: 1\n", "classifier:\n  nope: 1\n", "seed: [1\n"]
)
def test_config_errors(tmp_path, text):
    f = tmp_path / "c.yaml"
    f.write_text(text)
    with pytest.raises(ConfigError):
        cli.load_config(f, env={})
    assert run("preprocess", "--config", f) == 2


def _write_corpus(path, n=100, seed=0, **kw):
    textnorm.write_dataset(make_corpus(n, seed=seed, **kw), path)


@pytest.fixture
def toy_run(tmp_path):
    data = tmp_path / "data.jsonl"
    _write_corpus(data, 100, seed=2)
    emb = tmp_path / "emb.emb1"
    assert run("embed-toy", "--dataset", data, "--embeddings", emb, "--seed", 4) == 0
    model_dir = tmp_path / "models"
    assert run("train", "--dataset", data, "--embeddings", emb, "--model-dir", model_dir,
               "--classes", 2, "--epochs", 10) == 0
    return tmp_path, data, emb, model_dir


def test_train_outputs(toy_run):
    tmp, data, emb, model_dir = toy_run
    report = json.loads((model_dir / "fold_report.json").read_text())
    assert report["mcc_mean"] >= 0.95
    assert report["pooling"] == "4-CAT" and report["classes"] == 2
    assert len(report["folds"]) == 5
    assert sorted(p.name for p in model_dir.glob("fold*.semlp")) == [f"fold{i}.semlp" for i in range(5)]
    manifest = json.loads((model_dir / "manifest-train.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 64
    assert "numpy" in manifest["versions"]


def test_train_rerun_identical(toy_run):
    tmp, data, emb, model_dir = toy_run
    again = tmp / "again"
    assert run("train", "--dataset", data, "--embeddings", emb, "--model-dir", again,
               "--classes", 2, "--epochs", 10) == 0
    for name in ["fold_report.json", "ensemble.json"] + [f"fold{i}.semlp" for i in range(5)]:
        assert sha(model_dir / name) == sha(again / name)


def test_train_dimension_mismatch(tmp_path):
    data = tmp_path / "data.jsonl"
    _write_corpus(data, 50)
    emb = tmp_path / "emb.emb1"
    assert run("embed-toy", "--dataset", data, "--embeddings", emb) == 0
    cfg = tmp_path / "c.yaml"
    cfg.write_text("classifier:\n  se_reduction: 64\n")
    out = tmp_path / "m"
    # last-layer pooling gives 32 dims, smaller than the SE reduction
    code = run("train", "--config", cfg, "--dataset", data, "--embeddings", emb, "--pooling", "last",
               "--model-dir", out)
    assert code == 2
    assert (out / "manifest-train.json").exists()
    shallow = tmp_path / "shallow.emb1"
    assert run("embed-toy", "--dataset", data, "--embeddings", shallow, "--config", _yaml(tmp_path, "toy_layers: 2\n")) == 0
    # 4-layer pooling on a 2-layer file
    assert run("train", "--dataset", data, "--embeddings", shallow, "--model-dir", out) == 3
    textnorm.write_dataset(
        [textnorm.Tweet(f"z{i}", "word", textnorm.Label.CONSPIRACY if i % 2 else textnorm.Label.OTHER)
         for i in range(20)],
        tmp_path / "z.jsonl",
    )
    # dataset ids without embeddings
    assert run("train", "--dataset", tmp_path / "z.jsonl", "--embeddings", emb, "--model-dir", out,
               "--classes", 2) == 3


def _yaml(tmp_path, text):
    f = tmp_path / "extra.yaml"
    f.write_text(text)
    return f


def test_predict_and_evaluate(toy_run, capsys):
    tmp, data, emb, model_dir = toy_run
    preds = tmp / "preds.jsonl"
    assert run("predict", "--model-dir", model_dir, "--embeddings", emb, "--predictions", preds) == 0
    rows = [json.loads(l) for l in preds.read_text().splitlines()]
    assert len(rows) == 100
    assert set(rows[0]) >= {"id", "per_model_labels", "mean_confidence", "final_label"}
    out = tmp / "eval"
    assert run("evaluate", "--predictions", preds, "--dataset", data, "--classes", 2, "--output-dir", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["reports"]) == {"count-as-wrong", "exclude"}
    assert report["run"]["classes"] == "2+CD"
    assert (out / "confusion.csv").read_text().startswith("gold,conspiracy,non-conspiracy")
    assert "Submission" in capsys.readouterr().out


def test_predict_without_cd(toy_run):
    tmp, data, emb, model_dir = toy_run
    preds = tmp / "p.jsonl"
    assert run("predict", "--model-dir", model_dir, "--embeddings", emb, "--predictions", preds,
               "--no-cd", "--threshold", "0.99") == 0
    assert all(json.loads(l)["final_label"] != -1 for l in preds.read_text().splitlines())
    preds_cd = tmp / "p2.jsonl"
    assert run("predict", "--model-dir", model_dir, "--embeddings", emb, "--predictions", preds_cd,
               "--threshold", "0.99") == 0
    assert any(json.loads(l)["final_label"] == -1 for l in preds_cd.read_text().splitlines())


def test_evaluate_missing_prediction(toy_run, capsys):
    tmp, data, emb, model_dir = toy_run
    preds = tmp / "preds.jsonl"
    preds.write_text(json.dumps({"id": "t00000", "final_label": 0}) + "\n")
    assert run("evaluate", "--predictions", preds, "--dataset", data, "--classes", 2,
               "--output-dir", tmp / "e") == 3
    assert "lack a prediction" in capsys.readouterr().err


def test_predict_embedding_dim_mismatch(toy_run):
    tmp, data, emb, model_dir = toy_run
    other = tmp / "other.emb1"
    embed.write_embeddings([embed.toy_embed(["a"], 4, 8, 0, "x")], other)
    assert run("predict", "--model-dir", model_dir, "--embeddings", other, "--predictions", tmp / "p.jsonl") == 3
