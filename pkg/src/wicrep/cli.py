"""Command-line pipelines: generate data, pretrain, fine-tune, evaluate, analyze.

Every command takes an optional JSON config file plus flag overrides
(flags win). Unknown config keys are rejected by name. The resolved
config is written next to the primary output as an audit trail, and all
outputs are byte-deterministic functions of the resolved config.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .encoder import EncoderConfig, init_model, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    EvalReport,
    graded_sim_eval,
    one_shot_wsd,
    read_graded_pairs,
    read_wic_pairs,
    read_wsd_exemplars,
    read_wsd_test,
    wic_task_eval,
    write_report,
    write_wic_pairs,
    write_wsd_exemplars,
    write_wsd_test,
)
from .features import LayerSpec, extract_wic_batch, write_embeddings
from .geometry import GeometryParams, geometry_report, write_geometry_csv, write_geometry_json
from .rng import Rng
from .syncorpus import (
    CorpusSpec,
    default_sense_specs,
    gen_corpus,
    gen_wic_pairs,
    gen_wsd_data,
    write_gold_json,
)
from .tokenizer import (
    build_vocab,
    encode_with_target,
    read_corpus,
    read_targeted_tsv,
    write_corpus,
    write_targeted_tsv,
)
from .training import MlmConfig, TrainConfig, finetune, mlm_pretrain, write_loss_csv

CONFIG_FORMAT_VERSION = 1

logger = logging.getLogger("wicrep")

# Per-command knob tables: name -> (default, type). None defaults mark
# required path-like settings; bool knobs accept true/false in JSON and
# 0/1 on the command line.
_LAYER_KEYS = {
    "n_feature_layers": (4, int),
    "probe_layer": (None, int),
    "include_embedding": (False, bool),
}

_SCHEMAS: dict[str, dict[str, tuple]] = {
    "gen-synth": {
        "out_dir": (None, str),
        "seed": (0, int),
        "n_sentences": (2000, int),
        "len_min": (8, int),
        "len_max": (14, int),
        "n_filler_words": (300, int),
        "topical_rate": (0.75, float),
        "topic_overlap": (0.0, float),
        "n_ambiguous": (10, int),
        "n_senses": (2, int),
        "n_topical": (6, int),
        "quota": (50, int),
        "n_dev_pairs": (200, int),
        "n_test_pairs": (400, int),
    },
    "pretrain": {
        "corpus": (None, str),
        "out": (None, str),
        "seed": (0, int),
        "max_vocab": (30000, int),
        "min_freq": (1, int),
        "n_layers": (4, int),
        "d_model": (64, int),
        "n_heads": (4, int),
        "d_ffn": (256, int),
        "dropout": (0.1, float),
        "epochs": (1, int),
        "lr": (1e-3, float),
        "batch_size": (64, int),
        "mask_prob": (0.15, float),
        "weight_decay": (0.01, float),
    },
    "finetune": {
        "corpus": (None, str),
        "checkpoint": (None, str),
        "out": (None, str),
        "seed": (0, int),
        "temperature": (0.04, float),
        "mask_k": (10, int),
        "dropout": (0.4, float),
        "lr": (2e-5, float),
        "epochs": (1, int),
        "batch_size": (200, int),
        "weight_decay": (0.01, float),
        "max_sentences": (10000, int),
        "include_positive_in_denominator": (False, bool),
        "exclude_frequent_targets": (True, bool),
        "frequent_target_fraction": (0.01, float),
        "n_feature_layers": (4, int),
    },
    "eval-wic": {
        "checkpoint": (None, str),
        "dev": (None, str),
        "test": (None, str),
        "out": (None, str),
        **_LAYER_KEYS,
    },
    "eval-sim": {
        "checkpoint": (None, str),
        "pairs": (None, str),
        "out": (None, str),
        **_LAYER_KEYS,
    },
    "eval-wsd": {
        "checkpoint": (None, str),
        "exemplars": (None, str),
        "test": (None, str),
        "out": (None, str),
        "template": (None, str),
        **_LAYER_KEYS,
    },
    "analyze": {
        "checkpoint": (None, str),
        "corpus": (None, str),
        "out_json": (None, str),
        "out_csv": (None, str),
        "seed": (0, int),
        "max_sentences": (1000, int),
        "is_sentences": (200, int),
        "is_repetitions": (5, int),
        "rw_samples": (5, int),
        "rw_words": (200, int),
        "top_n": (4, int),
    },
    "dump-embeddings": {
        "checkpoint": (None, str),
        "targeted": (None, str),
        "out": (None, str),
        **_LAYER_KEYS,
    },
    "sweep": {
        "corpus": (None, str),
        "checkpoint": (None, str),
        "dev": (None, str),
        "test": (None, str),
        "out": (None, str),
        "knob": (None, str),
        "values": (None, str),
        "seed": (0, int),
        "temperature": (0.04, float),
        "mask_k": (10, int),
        "dropout": (0.4, float),
        "lr": (2e-5, float),
        "epochs": (1, int),
        "batch_size": (200, int),
        "weight_decay": (0.01, float),
        "max_sentences": (10000, int),
        "exclude_frequent_targets": (True, bool),
        "frequent_target_fraction": (0.01, float),
        "n_feature_layers": (4, int),
    },
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "gen-synth": ("out_dir",),
    "pretrain": ("corpus", "out"),
    "finetune": ("corpus", "checkpoint", "out"),
    "eval-wic": ("checkpoint", "dev", "test", "out"),
    "eval-sim": ("checkpoint", "pairs", "out"),
    "eval-wsd": ("checkpoint", "exemplars", "test", "out"),
    "analyze": ("checkpoint", "corpus", "out_json", "out_csv"),
    "dump-embeddings": ("checkpoint", "targeted", "out"),
    "sweep": ("corpus", "checkpoint", "dev", "test", "out", "knob", "values"),
}

_OPTIONAL_STRINGS = frozenset({"template", "probe_layer"})

SWEEP_KNOBS = ("dropout", "mask_k", "layer_n", "corpus_size")


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage errors; we need 2 for data
    errors, so usage problems are rethrown as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="wicrep", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, schema in _SCHEMAS.items():
        p = sub.add_parser(command, add_help=True)
        p.add_argument("--config", default=None, help="JSON config file")
        for key, (default, typ) in schema.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, default=None, type=_parse_bool, metavar="0|1")
            else:
                p.add_argument(flag, default=None, type=typ)
    return parser


def _check_type(command: str, key: str, value, typ) -> object:
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{command}: key {key!r} must be {typ.__name__}, got a boolean")
    if not isinstance(value, typ):
        raise ConfigError(
            f"{command}: key {key!r} must be {typ.__name__}, got {type(value).__name__}"
        )
    return value


def resolve_config(command: str, config_path, flag_values: dict) -> dict:
    """defaults <- config file <- flags; unknown keys rejected by name."""
    schema = _SCHEMAS[command]
    merged = {k: default for k, (default, _) in schema.items()}
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as f:
                file_cfg = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config file {config_path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        # emitted audit configs are valid inputs: strip their metadata after
        # checking it matches, so a run can be replayed from its own record
        meta_command = file_cfg.pop("command", None)
        if meta_command is not None and meta_command != command:
            raise ConfigError(
                f"config file {config_path} was written for command "
                f"{meta_command!r}, not {command!r}"
            )
        meta_version = file_cfg.pop("format_version", None)
        if meta_version is not None and meta_version != CONFIG_FORMAT_VERSION:
            raise ConfigError(
                f"config file {config_path} has format_version {meta_version!r}; "
                f"this build reads version {CONFIG_FORMAT_VERSION}"
            )
        unknown = sorted(set(file_cfg) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for key, value in file_cfg.items():
            if value is None and (key in _OPTIONAL_STRINGS or schema[key][0] is None):
                continue
            merged[key] = _check_type(command, key, value, schema[key][1])
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    for key in _REQUIRED[command]:
        if merged[key] is None:
            raise ConfigError(f"{command}: missing required setting {key!r}")
    return merged


def _write_resolved_config(primary_out, command: str, cfg: dict) -> None:
    payload = {"command": command, "format_version": CONFIG_FORMAT_VERSION, **cfg}
    path = Path(str(primary_out) + ".config.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _layer_spec(cfg: dict) -> LayerSpec:
    return LayerSpec(
        n_layers=cfg["n_feature_layers"],
        include_embedding=cfg["include_embedding"],
        probe_layer=cfg["probe_layer"],
    )


# -- commands ---------------------------------------------------------------------

def _cmd_gen_synth(cfg: dict) -> None:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = CorpusSpec(
        sense_specs=default_sense_specs(
            cfg["n_ambiguous"], cfg["n_senses"], cfg["n_topical"], cfg["quota"]
        ),
        n_sentences=cfg["n_sentences"],
        sentence_len_range=(cfg["len_min"], cfg["len_max"]),
        n_filler_words=cfg["n_filler_words"],
        topical_rate=cfg["topical_rate"],
        topic_overlap=cfg["topic_overlap"],
    )
    corpus = gen_corpus(spec, cfg["seed"])
    root = Rng(cfg["seed"])
    dev = gen_wic_pairs(corpus, cfg["n_dev_pairs"], root.child(1))
    test = gen_wic_pairs(corpus, cfg["n_test_pairs"], root.child(2))
    exemplars, wsd_test = gen_wsd_data(corpus, root.child(3))
    write_corpus(out_dir / "corpus.txt", corpus.sentences)
    write_targeted_tsv(
        out_dir / "targeted.tsv",
        [(corpus.sentences[o.sentence_index], o.char_span) for o in corpus.occurrences],
    )
    write_wic_pairs(out_dir / "wic_dev.tsv", dev)
    write_wic_pairs(out_dir / "wic_test.tsv", test)
    write_wsd_exemplars(out_dir / "wsd_exemplars.tsv", exemplars)
    write_wsd_test(out_dir / "wsd_test.tsv", wsd_test)
    write_gold_json(out_dir / "gold.json", corpus)
    _write_resolved_config(out_dir / "run", "gen-synth", cfg)


def _cmd_pretrain(cfg: dict) -> None:
    sentences = read_corpus(cfg["corpus"])
    vocab = build_vocab(sentences, max_size=cfg["max_vocab"], min_freq=cfg["min_freq"])
    enc_cfg = EncoderConfig(
        n_layers=cfg["n_layers"], d_model=cfg["d_model"], n_heads=cfg["n_heads"],
        d_ffn=cfg["d_ffn"], dropout=cfg["dropout"],
    )
    model = init_model(enc_cfg, vocab, cfg["seed"])
    mlm_cfg = MlmConfig(
        mask_prob=cfg["mask_prob"], lr=cfg["lr"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], weight_decay=cfg["weight_decay"], seed=cfg["seed"],
    )
    model, losses = mlm_pretrain(model, sentences, mlm_cfg)
    save_checkpoint(model, cfg["out"])
    write_loss_csv(str(cfg["out"]) + ".loss.csv", losses)
    _write_resolved_config(cfg["out"], "pretrain", cfg)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        temperature=cfg["temperature"], mask_k=cfg["mask_k"], dropout=cfg["dropout"],
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        weight_decay=cfg["weight_decay"], max_sentences=cfg["max_sentences"],
        seed=cfg["seed"],
        include_positive_in_denominator=cfg.get("include_positive_in_denominator", False),
        exclude_frequent_targets=cfg.get("exclude_frequent_targets", True),
        frequent_target_fraction=cfg.get("frequent_target_fraction", 0.01),
        n_feature_layers=cfg["n_feature_layers"],
    )


def _cmd_finetune(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    sentences = read_corpus(cfg["corpus"])
    model, losses = finetune(model, sentences, _train_config(cfg))
    save_checkpoint(model, cfg["out"])
    write_loss_csv(str(cfg["out"]) + ".loss.csv", losses)
    _write_resolved_config(cfg["out"], "finetune", cfg)


def _cmd_eval_wic(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    report = wic_task_eval(
        model, read_wic_pairs(cfg["dev"]), read_wic_pairs(cfg["test"]), _layer_spec(cfg)
    )
    write_report(cfg["out"], report)
    _write_resolved_config(cfg["out"], "eval-wic", cfg)


def _cmd_eval_sim(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    report = graded_sim_eval(model, read_graded_pairs(cfg["pairs"]), _layer_spec(cfg))
    write_report(cfg["out"], report)
    _write_resolved_config(cfg["out"], "eval-sim", cfg)


def _cmd_eval_wsd(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    test = read_wsd_test(cfg["test"])
    accuracy, _ = one_shot_wsd(
        model, read_wsd_exemplars(cfg["exemplars"]), test,
        _layer_spec(cfg), template=cfg["template"],
    )
    report = EvalReport(task="wsd", n_instances=len(test), accuracy=accuracy)
    write_report(cfg["out"], report)
    _write_resolved_config(cfg["out"], "eval-wsd", cfg)


def _cmd_analyze(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    params = GeometryParams(
        max_sentences=cfg["max_sentences"], is_sentences=cfg["is_sentences"],
        is_repetitions=cfg["is_repetitions"], rw_samples=cfg["rw_samples"],
        rw_words=cfg["rw_words"], top_n=cfg["top_n"],
    )
    report = geometry_report(model, read_corpus(cfg["corpus"]), cfg["seed"], params)
    write_geometry_json(cfg["out_json"], report)
    write_geometry_csv(cfg["out_csv"], report)
    _write_resolved_config(cfg["out_json"], "analyze", cfg)


def _cmd_dump_embeddings(cfg: dict) -> None:
    model = load_checkpoint(cfg["checkpoint"])
    rows = read_targeted_tsv(cfg["targeted"])
    spec = _layer_spec(cfg)
    records = []
    for i in range(0, len(rows), 64):
        chunk = rows[i : i + 64]
        instances = [encode_with_target(s, span, model.vocab) for s, span in chunk]
        vecs = extract_wic_batch(model, instances, spec).data
        for (sentence, (a, b)), vec in zip(chunk, vecs):
            records.append({"text": sentence, "target": f"{a}:{b}", "vector": vec})
    write_embeddings(cfg["out"], records)
    _write_resolved_config(cfg["out"], "dump-embeddings", cfg)


def _sweep_values(knob: str, raw: str) -> list:
    if knob not in SWEEP_KNOBS:
        raise ConfigError(f"knob must be one of {SWEEP_KNOBS}, got {knob!r}")
    values = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part) if knob == "dropout" else int(part))
        except ValueError as e:
            raise ConfigError(f"bad sweep value {part!r} for knob {knob}") from e
    if not values:
        raise ConfigError("sweep needs at least one value")
    return values


def _cmd_sweep(cfg: dict) -> None:
    base_model = load_checkpoint(cfg["checkpoint"])
    sentences = read_corpus(cfg["corpus"])
    dev = read_wic_pairs(cfg["dev"])
    test = read_wic_pairs(cfg["test"])
    values = _sweep_values(cfg["knob"], cfg["values"])
    base_cfg = _train_config(cfg)
    results = []
    if cfg["knob"] == "layer_n":
        tuned, _ = finetune(base_model, sentences, base_cfg)
        for v in values:
            report = wic_task_eval(tuned, dev, test, LayerSpec(n_layers=v))
            results.append((v, report))
    else:
        field = {"dropout": "dropout", "mask_k": "mask_k", "corpus_size": "max_sentences"}
        for v in values:
            run_cfg = replace(base_cfg, **{field[cfg["knob"]]: v})
            tuned, _ = finetune(base_model, sentences, run_cfg)
            report = wic_task_eval(
                tuned, dev, test, LayerSpec(n_layers=cfg["n_feature_layers"])
            )
            results.append((v, report))
    with open(cfg["out"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["knob", "value", "accuracy", "auc"])
        for v, report in results:
            w.writerow([cfg["knob"], v, f"{report.accuracy:.10g}", f"{report.auc:.10g}"])
    _write_resolved_config(cfg["out"], "sweep", cfg)


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval-wic": _cmd_eval_wic,
    "eval-sim": _cmd_eval_sim,
    "eval-wsd": _cmd_eval_wsd,
    "analyze": _cmd_analyze,
    "dump-embeddings": _cmd_dump_embeddings,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("missing command; try --help")
        schema = _SCHEMAS[args.command]
        flags = {k: getattr(args, k) for k in schema}
        cfg = resolve_config(args.command, args.config, flags)
        _COMMANDS[args.command](cfg)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
