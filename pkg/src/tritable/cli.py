"""Command-line entry point tying the pipeline together.

Subcommands: ``synth`` writes a corpus, ``train`` fits a model, ``eval``
scores a model or a predictions file, ``decode`` writes predictions,
``roundtrip`` validates the tagging codec over a corpus, and ``gradcheck``
compares analytic gradients against finite differences.

Exit codes: 0 success, 1 check failed, 2 usage or input error, 3 numerical
divergence.  Every command is deterministic under fixed seeds, and the
effective configuration is written next to each output for provenance.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Sequence

from . import metrics, schema, synth, tagging, train as training
from .model import Model, ModelConfig
from .schema import CorpusError, Dataset

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

GRAD_TOLERANCE = 1e-4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise CliError(f"config file {path}: expected a JSON object")
    return obj


def _merge(cls, file_values: dict, overrides: dict):
    """Build a config dataclass from file values plus non-None flag overrides."""
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(file_values) - fields
    if unknown:
        raise CliError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


def _write_sidecar(out_path: str, config_obj) -> None:
    sidecar = out_path.rstrip("/") + ".config.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(config_obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_corpus(path: str, vocab=None) -> Dataset:
    if not os.path.exists(path):
        raise CliError(f"corpus file not found: {path}")
    try:
        return schema.load_jsonl_file(path, vocab=vocab)
    except CorpusError as exc:
        raise CliError(f"{path}: {exc}") from None


def _load_model(path: str) -> Model:
    if not os.path.isdir(path):
        raise CliError(f"model directory not found: {path}")
    return Model.load(path)


# -- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    overrides = {
        "sentences": args.sentences, "relations": args.relations,
        "seed": args.seed, "min_len": args.min_len, "max_len": args.max_len,
        "correlated": args.correlated or None,
    }
    cfg = _merge(synth.SynthConfig, _load_config_file(args.config), overrides)
    try:
        dataset = synth.generate(cfg)
    except synth.GenerationError as exc:
        raise CliError(str(exc)) from None
    schema.save_jsonl_file(dataset, args.out)
    _write_sidecar(args.out, cfg)
    print(f"wrote {len(dataset)} sentences, {len(dataset.vocab)} relations -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_cfg = _merge(ModelConfig, file_cfg.get("model", {}), {
        "d": args.d, "heads": args.heads, "iterations": args.iterations,
        "enc_layers": args.enc_layers, "seed": args.seed,
        "ablate_reasoning": args.ablate_reasoning or None,
        "single_head": args.single_head or None,
    })
    train_cfg = _merge(training.TrainConfig, file_cfg.get("train", {}), {
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "shuffle_seed": args.shuffle_seed, "patience": args.patience,
    })
    train_set = _load_corpus(args.train)
    dev_set = _load_corpus(args.dev, vocab=train_set.vocab)
    model = Model.build(model_cfg, train_set)
    try:
        result = training.train(model, train_set, dev_set, train_cfg)
    except training.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    os.makedirs(args.out, exist_ok=True)
    model.save(args.out)
    with open(os.path.join(args.out, "epochs.jsonl"), "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(entry.to_json() + "\n")
    with open(os.path.join(args.out, "train_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"model": dataclasses.asdict(model.config),
                   "train": dataclasses.asdict(train_cfg)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    last = result.log[-1]
    print(f"best dev F1 {result.best_f1:.4f} at epoch {result.best_epoch}"
          f" ({len(result.log)} epochs, final loss {last.train_loss:.4f})")
    return EXIT_OK


def _predictions_from_file(path: str, dataset: Dataset) -> dict:
    preds: dict[str, list] = {}
    if not os.path.exists(path):
        raise CliError(f"predictions file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{lineno}: {exc.msg}") from None
            sid = obj.get("sentence_id")
            triples = []
            for t in obj.get("triples", []):
                try:
                    triples.append(schema.Triple(
                        schema.Entity(*t["subject"]),
                        dataset.vocab.index(t["relation"]),
                        schema.Entity(*t["object"])))
                except (CorpusError, KeyError, TypeError) as exc:
                    raise CliError(f"{path}:{lineno}: bad triple ({exc})") from None
            preds[sid] = triples
    return preds


def cmd_eval(args) -> int:
    if (args.model is None) == (args.pred is None):
        raise CliError("exactly one of --model or --pred is required")
    mode = metrics.MatchMode.EXACT if args.match == "exact" else metrics.MatchMode.HEAD_ONLY
    if args.model is not None:
        model = _load_model(args.model)
        # an unknown relation name surfaces here as a vocabulary mismatch
        dataset = _load_corpus(args.test,
                               vocab=schema.RelationVocab(model.relation_names))
        predictions = {s.id: model.extract(s) for s in dataset.sentences}
    else:
        dataset = _load_corpus(args.test)
        predictions = _predictions_from_file(args.pred, dataset)
        for s in dataset.sentences:
            predictions.setdefault(s.id, [])
    try:
        report = metrics.build_report(dataset, predictions, mode)
    except metrics.EvalError as exc:
        raise CliError(str(exc)) from None
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(args.report + ".config.json", "w", encoding="utf-8") as fh:
        json.dump({"model": args.model, "pred": args.pred, "test": args.test,
                   "match": args.match}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.render_text())
    return EXIT_OK


def cmd_decode(args) -> int:
    model = _load_model(args.model)
    dataset = _load_corpus(args.input,
                           vocab=schema.RelationVocab(model.relation_names))
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in dataset.sentences:
            triples = model.extract(s)
            fh.write(json.dumps({
                "sentence_id": s.id,
                "triples": [{"subject": list(t.subject.span()),
                             "relation": model.relation_names[t.relation],
                             "object": list(t.object.span())} for t in triples],
            }) + "\n")
    with open(args.out + ".config.json", "w", encoding="utf-8") as fh:
        json.dump({"model": args.model, "input": args.input}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote predictions for {len(dataset)} sentences -> {args.out}")
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    dataset = _load_corpus(args.input)
    relations = len(dataset.vocab)
    passed = unsafe = failed = 0
    first_failure = None
    for s in dataset.sentences:
        tables, conflicts = tagging.encode_tables(s, max(relations, 1))
        decoded = tagging.decode_tables(tables)
        gold = sorted(set(s.triples), key=schema.Triple.sort_key)
        if decoded == gold and conflicts == 0:
            passed += 1
        elif not tagging.is_roundtrip_safe(s):
            unsafe += 1  # flagged by the safety predicate, not a codec bug
        else:
            failed += 1
            if first_failure is None:
                first_failure = s.id
    print(f"roundtrip: {passed} passed, {unsafe} flagged unsafe, {failed} failed"
          f" of {len(dataset)} sentences")
    if first_failure is not None:
        print(f"first failure: sentence {first_failure!r}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    overrides = {
        "d": args.d, "heads": args.heads, "iterations": args.iterations,
        "relations": args.relations, "enc_layers": args.enc_layers,
        "single_head": args.single_head or None, "seed": args.seed,
    }
    defaults = {"d": 8, "heads": 2, "iterations": 2, "relations": 2,
                "enc_layers": 1, "vocab": 16, "max_len": 16, "seed": args.seed or 0}
    cfg = _merge(ModelConfig, {**defaults, **_load_config_file(args.config)}, overrides)
    error = training.gradient_check(cfg, seed=args.seed or 0, n=args.tokens,
                                    corrupt=args.inject_gradient_error)
    print(f"max relative gradient error: {error:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    return EXIT_OK if error < GRAD_TOLERANCE else EXIT_CHECK_FAILED


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tritable",
        description="Relational triple extraction via table filling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--sentences", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--correlated", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--ablate-reasoning", dest="ablate_reasoning", action="store_true")
    p.add_argument("--single-head", dest="single_head", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model or a predictions file")
    p.add_argument("--model")
    p.add_argument("--pred")
    p.add_argument("--test", required=True)
    p.add_argument("--match", choices=["exact", "head"], default="exact")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="write predicted triples as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("roundtrip", help="validate the tagging codec on a corpus")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("gradcheck", help="compare gradients to finite differences")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--tokens", type=int, default=6)
    p.add_argument("--single-head", dest="single_head", action="store_true")
    p.add_argument("--inject-gradient-error", action="store_true",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
