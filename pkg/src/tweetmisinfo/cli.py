"""Command-line entry point.

Settings are resolved in increasing precedence: built-in defaults, the YAML
file given with ``--config``, environment variables ``TWEETMISINFO_<KEY>``
(nested classifier keys as ``TWEETMISINFO_CLASSIFIER__<KEY>``), then
command-line flags.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, classifier, embed, metrics, pipeline, textnorm
from .errors import ConfigError, DataError, TweetMisinfoError

log = logging.getLogger("tweetmisinfo")

ENV_PREFIX = "TWEETMISINFO_"
CLASSIFIER_KEYS = {
    f.name for f in dataclasses.fields(classifier.ClassifierConfig) if f.name not in ("input_dim", "n_classes", "seed")
}


@dataclass
class RunConfig:
    dataset: str | None = None
    normalized: str | None = None
    embeddings: str | None = None
    output_dir: str = "run"
    model_dir: str | None = None
    predictions: str | None = None
    mode: str = "vanilla"
    canonicalize_keywords: bool = False
    keep_annotations: bool = True
    pooling: str = "4-cat"
    classes: int = 3
    cd: bool = True
    threshold: float = pipeline.DEFAULT_THRESHOLD
    cd_mode: str = "mean"
    seed: int = 0
    jobs: int = 1
    toy_layers: int = 4
    toy_hidden: int = 32
    name: str = "run"
    classifier: dict = field(default_factory=dict)

    def validate(self):
        try:
            textnorm.Mode(self.mode)
            embed.PoolingStrategy(self.pooling)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.classes not in (2, 3):
            raise ConfigError(f"classes must be 2 or 3, got {self.classes}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.cd_mode not in ("mean", "per-model"):
            raise ConfigError(f"cd_mode must be 'mean' or 'per-model', got {self.cd_mode!r}")
        if self.jobs < 1 or self.toy_layers < 1 or self.toy_hidden < 1:
            raise ConfigError("jobs, toy_layers and toy_hidden must be positive")
        unknown = set(self.classifier) - CLASSIFIER_KEYS
        if unknown:
            raise ConfigError(f"unknown classifier keys: {sorted(unknown)}")
        return self

    def as_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        """Hash of the settings that influence results (paths excluded)."""
        d = self.as_dict()
        for key in ("dataset", "normalized", "embeddings", "output_dir", "model_dir", "predictions", "jobs", "name"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def scheme(self):
        return pipeline.LabelScheme(str(self.classes))

    @property
    def norm_config(self):
        return textnorm.NormalizationConfig(
            mode=self.mode,
            canonicalize_keywords=self.canonicalize_keywords,
            keep_annotations=self.keep_annotations,
        )


def _coerce(key, value, target_type):
    if target_type is bool and isinstance(value, str):
        value = yaml.safe_load(value)
    try:
        if target_type in (int, float):
            return target_type(value)
        if target_type is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {target_type.__name__}") from None
    return value


_TYPES = {"int": int, "float": float, "bool": bool}


def _field_type(f):
    return _TYPES.get(str(f.type), str)


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        values.update(loaded)

    env = os.environ if env is None else env
    clf = dict(values.get("classifier") or {})
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name.startswith("classifier__"):
            clf[name[len("classifier__"):]] = yaml.safe_load(raw)
        else:
            values[name] = raw
    values["classifier"] = clf

    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val

    known = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, f in known.items():
        if key in values and values[key] is not None and key != "classifier":
            values[key] = _coerce(key, values[key], _field_type(f))
    return RunConfig(**values).validate()


def classifier_config(cfg: RunConfig, input_dim: int) -> classifier.ClassifierConfig:
    return classifier.ClassifierConfig(
        input_dim=input_dim, n_classes=cfg.scheme.n_classes, seed=cfg.seed, **cfg.classifier
    )


# file helpers

def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _require(value, flag):
    if value is None:
        raise ConfigError(f"missing required setting {flag}")
    if not os.path.exists(value):
        raise ConfigError(f"{flag}: path {value} does not exist")
    return value


def read_records(path):
    """Parse a JSONL file into dicts, naming the line of any failure."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise DataError(f"{path}:{lineno}: expected an object with an 'id' field")
            obj["_line"] = lineno
            records.append(obj)
    if not records:
        raise DataError(f"{path}: no records")
    return records


def read_labelled(path):
    """Tweets with labels from a raw or a normalized JSONL file."""
    tweets = []
    for obj in read_records(path):
        text = obj.get("text") or " ".join(obj.get("tokens") or [])
        try:
            tweets.append(textnorm.Tweet(str(obj["id"]), text, obj.get("label")))
        except DataError as exc:
            raise type(exc)(f"{path}:{obj['_line']}: {exc}") from None
    return tweets


def write_manifest(out_dir, command, cfg: RunConfig):
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "pooling": cfg.pooling,
        "classes": cfg.classes,
        "scheme": cfg.scheme.class_names,
        "cd": cfg.cd,
        "threshold": cfg.threshold,
        "config_hash": cfg.digest(),
        "config": cfg.as_dict(),
        "versions": {
            "tweetmisinfo": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    atomic_write(Path(out_dir) / f"manifest-{command}.json", _dumps(manifest))


# commands

def cmd_preprocess(cfg: RunConfig):
    src = _require(cfg.dataset, "--dataset")
    dst = cfg.normalized or str(Path(cfg.output_dir) / "normalized.jsonl")
    tweets = list(textnorm.read_dataset(src))
    if not tweets:
        raise DataError(f"{src}: no records")
    lines, dropped = [], []
    ncfg = cfg.norm_config
    for t in tweets:
        try:
            tokens = textnorm.normalize(t, ncfg)
        except textnorm.EmptyAfterNormalization:
            dropped.append(t.id)
            continue
        obj = {"id": t.id, "tokens": tokens}
        if t.label is not None:
            obj["label"] = int(t.label)
        lines.append(json.dumps(obj, ensure_ascii=False))
    stats = {"input": len(tweets), "written": len(lines), "dropped_empty": len(dropped), "dropped_ids": dropped}
    atomic_write(dst, "".join(l + "\n" for l in lines))
    atomic_write(dst + ".stats.json", _dumps(stats))
    print(f"normalized {len(lines)} tweets -> {dst} (dropped {len(dropped)} empty)")
    return stats


def cmd_embed_toy(cfg: RunConfig):
    src = _require(cfg.normalized or cfg.dataset, "--input")
    dst = cfg.embeddings or str(Path(cfg.output_dir) / "embeddings.emb1")
    ncfg = cfg.norm_config

    def matrices():
        for obj in read_records(src):
            tokens = obj.get("tokens")
            if tokens is None:
                if "text" not in obj:
                    raise DataError(f"{src}:{obj['_line']}: record has neither 'tokens' nor 'text'")
                tokens = textnorm.normalize(obj["text"], ncfg)
            yield embed.toy_embed(tokens, cfg.toy_layers, cfg.toy_hidden, cfg.seed, str(obj["id"]))

    path = Path(dst)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        n = embed.write_embeddings(matrices(), tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(f"wrote {n} toy embeddings ({cfg.toy_layers} layers x {cfg.toy_hidden}) -> {dst}")
    return n


def _pooled(cfg: RunConfig, path):
    return embed.pool_all(embed.read_embeddings(path), cfg.pooling)


def table1_report(cfg: RunConfig, result: pipeline.EnsembleResult):
    s = result.summary()
    return {
        "model": cfg.name,
        "pooling": embed.PoolingStrategy(cfg.pooling).value.upper(),
        "classes": cfg.classes,
        "acc_mean": s["acc_mean"],
        "acc_std": s["acc_std"],
        "mcc_mean": s["mcc_mean"],
        "mcc_std": s["mcc_std"],
        "ACC": f"{s['acc_mean']:.4f} ± {s['acc_std']:.4f}",
        "MCC": f"{s['mcc_mean']:.4f} ± {s['mcc_std']:.4f}",
        "folds": [f.to_dict() for f in result.folds],
    }


def cmd_train(cfg: RunConfig):
    ds_path = _require(cfg.normalized or cfg.dataset, "--dataset")
    emb_path = _require(cfg.embeddings, "--embeddings")
    out = Path(cfg.model_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", cfg)

    tweets = read_labelled(ds_path)
    vectors = _pooled(cfg, emb_path)
    if not vectors:
        raise DataError(f"{emb_path}: no embeddings")
    dim = len(next(iter(vectors.values())))
    ccfg = classifier_config(cfg, dim)
    result = pipeline.train_ensemble(tweets, vectors, cfg.scheme, ccfg, seed=cfg.seed, jobs=cfg.jobs)

    for i, model in enumerate(result.models):
        atomic_write(out / f"fold{i}.semlp", model.to_bytes())
    ensemble = {
        "pooling": cfg.pooling,
        "classes": cfg.classes,
        "class_names": cfg.scheme.class_names,
        "input_dim": dim,
        "models": [f"fold{i}.semlp" for i in range(len(result.models))],
        "folds": {tid: fold for tid, fold in sorted(result.plan.assignments.items())},
    }
    atomic_write(out / "ensemble.json", _dumps(ensemble))
    report = table1_report(cfg, result)
    atomic_write(out / "fold_report.json", _dumps(report))
    history = {f"fold{f.fold}": f.history for f in result.folds}
    atomic_write(out / "history.json", _dumps(history))
    text = format_table1([report])
    atomic_write(out / "fold_report.txt", text)
    print(text, end="")
    return report


def format_table1(rows):
    head = f"{'Model':<16}{'Pooling':>8}{'Classes':>9}{'ACC':>20}{'MCC':>20}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['model']:<16}{r['pooling']:>8}{r['classes']:>9}{r['ACC']:>20}{r['MCC']:>20}")
    return "\n".join(lines) + "\n"


def load_ensemble(model_dir):
    model_dir = Path(model_dir)
    try:
        meta = json.loads((model_dir / "ensemble.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{model_dir}: no ensemble.json ({exc.strerror})") from None
    models = [classifier.SEMLP.load(model_dir / name) for name in meta["models"]]
    return meta, models


def cmd_predict(cfg: RunConfig):
    model_dir = _require(cfg.model_dir or cfg.output_dir, "--model-dir")
    emb_path = _require(cfg.embeddings, "--embeddings")
    meta, models = load_ensemble(model_dir)
    if meta["pooling"] != cfg.pooling or meta["classes"] != cfg.classes:
        log.warning("using pooling=%s classes=%s stored with the models", meta["pooling"], meta["classes"])
    cfg = dataclasses.replace(cfg, pooling=meta["pooling"], classes=meta["classes"])
    out_path = Path(cfg.predictions or Path(cfg.output_dir) / "predictions.jsonl")
    write_manifest(out_path.parent, "predict", cfg)

    vectors = _pooled(cfg, emb_path)
    ids = list(vectors)
    if cfg.dataset or cfg.normalized:
        ids = [str(r["id"]) for r in read_records(_require(cfg.normalized or cfg.dataset, "--dataset"))]
    if vectors and len(next(iter(vectors.values()))) != meta["input_dim"]:
        raise pipeline.DimensionMismatch(
            f"embedding dimension {len(next(iter(vectors.values())))} != model input_dim {meta['input_dim']}"
        )
    preds = pipeline.predict_ensemble(models, vectors, ids, cfg.cd, cfg.threshold, cfg.cd_mode)
    atomic_write(out_path, "".join(json.dumps(p.to_dict()) + "\n" for p in preds))
    n_cd = sum(p.final_label == pipeline.CD for p in preds)
    print(f"wrote {len(preds)} predictions ({n_cd} cannot-determine) -> {out_path}")
    return preds


def read_predictions(path):
    out = {}
    for obj in read_records(path):
        try:
            out[str(obj["id"])] = int(obj["final_label"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}:{obj['_line']}: missing or invalid final_label") from None
    return out


def table2_row(cfg: RunConfig, report_mcc: float):
    classes = f"{cfg.classes}+CD" if cfg.cd else str(cfg.classes)
    return {"submission": f"{cfg.name} ({cfg.pooling.upper()})", "classes": classes, "mcc": report_mcc}


def cmd_evaluate(cfg: RunConfig):
    pred_path = _require(cfg.predictions, "--predictions")
    ds_path = _require(cfg.normalized or cfg.dataset, "--dataset")
    out = Path(cfg.output_dir)
    write_manifest(out, "evaluate", cfg)

    scheme = cfg.scheme
    gold = {
        t.id: scheme.class_index(t.label)
        for t in pipeline.map_labels(read_labelled(ds_path), scheme)
        if t.label is not None
    }
    if not gold:
        raise DataError(f"{ds_path}: no labelled tweets")
    preds = read_predictions(pred_path)
    reports = {}
    for policy in metrics.CD_POLICIES:
        try:
            reports[policy] = metrics.evaluate(gold, preds, scheme.n_classes, policy, scheme.class_names)
        except metrics.EmptyMatrix as exc:
            reports[policy] = exc
    primary = reports["count-as-wrong"]
    doc = {
        "run": table2_row(cfg, primary.mcc),
        "reports": {
            p: (r.to_dict() if isinstance(r, metrics.EvaluationReport) else {"error": str(r), "n_scored": 0})
            for p, r in reports.items()
        },
    }
    atomic_write(out / "report.json", _dumps(doc))
    atomic_write(out / "confusion.txt", primary.confusion.to_text())
    atomic_write(out / "confusion.csv", primary.confusion.to_csv())
    lines = [f"{'Submission':<24}{'Classes':>8}{'MCC':>10}"]
    r = doc["run"]
    lines.append(f"{r['submission']:<24}{r['classes']:>8}{r['mcc']:>10.4f}")
    for p, rep in reports.items():
        if isinstance(rep, metrics.EvaluationReport):
            lines.append(f"[{p}] accuracy={rep.accuracy:.4f} mcc={rep.mcc:.4f} scored={rep.n_scored} cd={rep.n_cd}")
        else:
            lines.append(f"[{p}] no scored samples")
    print("\n".join(lines))
    print(primary.confusion.to_text(), end="")
    return doc


COMMANDS = {
    "preprocess": cmd_preprocess,
    "embed-toy": cmd_embed_toy,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--pooling", choices=[s.value for s in embed.PoolingStrategy])
    common.add_argument("--classes", type=int, choices=[2, 3])
    common.add_argument("--cd", action=argparse.BooleanOptionalAction, default=None,
                        help="emit cannot-determine labels (default on)")
    common.add_argument("--threshold", type=float, help="cannot-determine threshold (default 0.4)")
    common.add_argument("--jobs", type=int)
    common.add_argument("--mode", choices=[m.value for m in textnorm.Mode])
    common.add_argument("--dataset", help="labelled JSONL dataset")
    common.add_argument("--normalized", help="normalized JSONL (tokens)")
    common.add_argument("--embeddings", help="EMB1 embedding file")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--model-dir", dest="model_dir")
    common.add_argument("--predictions", help="predictions JSONL")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tweetmisinfo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "pooling", "classes", "cd", "threshold", "jobs", "mode", "dataset",
                  "normalized", "embeddings", "output_dir", "model_dir", "predictions")
    }
    try:
        cfg = load_config(args.config, overrides=overrides)
        if args.epochs is not None:
            cfg.classifier["epochs"] = args.epochs
        COMMANDS[args.command](cfg)
    except TweetMisinfoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
