"""End-to-end command-line pipeline: every subcommand, exit codes, audit
trail, flag/config precedence, and byte determinism of the artifacts."""

import csv
import json
import shutil
import subprocess

import pytest

from wicrep.cli import main
from wicrep.evaluation import GradedPair, read_wic_pairs, write_graded_pairs
from wicrep.features import read_embeddings


def run(*args) -> int:
    return main([str(a) for a in args])


GEN_ARGS = (
    "--seed", 5, "--n-sentences", 80, "--n-ambiguous", 3, "--n-topical", 4,
    "--quota", 5, "--n-filler-words", 30, "--len-min", 6, "--len-max", 10,
    "--n-dev-pairs", 24, "--n-test-pairs", 40,
)

TINY_ENCODER = ("--n-layers", 2, "--d-model", 16, "--n-heads", 2, "--d-ffn", 32)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synth -> pretrain -> finetune once; downstream tests share it."""
    d = tmp_path_factory.mktemp("pipeline")
    assert run("gen-synth", "--out-dir", d / "data", *GEN_ARGS) == 0
    assert run(
        "pretrain", "--corpus", d / "data" / "corpus.txt", "--out", d / "base.ckpt",
        *TINY_ENCODER, "--epochs", 1, "--batch-size", 32, "--seed", 0,
    ) == 0
    assert run(
        "finetune", "--corpus", d / "data" / "corpus.txt",
        "--checkpoint", d / "base.ckpt", "--out", d / "tuned.ckpt",
        "--epochs", 1, "--batch-size", 20, "--mask-k", 1, "--dropout", 0.3,
        "--temperature", 0.2, "--lr", 1e-4, "--max-sentences", 40,
        "--n-feature-layers", 2,
    ) == 0
    return d


def test_gen_synth_outputs(pipeline):
    data = pipeline / "data"
    for name in (
        "corpus.txt", "targeted.tsv", "wic_dev.tsv", "wic_test.tsv",
        "wsd_exemplars.tsv", "wsd_test.tsv", "gold.json", "run.config.json",
    ):
        assert (data / name).exists(), name
    dev = read_wic_pairs(data / "wic_dev.tsv")
    assert len(dev) == 24
    assert {p.label for p in dev} == {"T", "F"}
    audit = json.loads((data / "run.config.json").read_text())
    assert audit["command"] == "gen-synth"
    assert audit["format_version"] == 1
    assert audit["seed"] == 5


def test_train_artifacts(pipeline):
    for stem in ("base.ckpt", "tuned.ckpt"):
        assert (pipeline / stem).exists()
        with open(pipeline / f"{stem}.loss.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["step", "loss"]
        assert len(rows) > 1
        audit = json.loads((pipeline / f"{stem}.config.json").read_text())
        assert audit["command"] in ("pretrain", "finetune")


def test_eval_wic_command(pipeline, tmp_path):
    out = tmp_path / "wic.json"
    code = run(
        "eval-wic", "--checkpoint", pipeline / "tuned.ckpt",
        "--dev", pipeline / "data" / "wic_dev.tsv",
        "--test", pipeline / "data" / "wic_test.tsv",
        "--out", out, "--n-feature-layers", 2,
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["task"] == "wic"
    assert report["n_instances"] == 40
    assert 0.0 <= report["accuracy"] <= 1.0
    assert 0.0 <= report["auc"] <= 1.0
    assert report["threshold"] is not None
    assert (tmp_path / "wic.json.config.json").exists()


def test_eval_wic_probe_layer(pipeline, tmp_path):
    common = (
        "--checkpoint", pipeline / "tuned.ckpt",
        "--dev", pipeline / "data" / "wic_dev.tsv",
        "--test", pipeline / "data" / "wic_test.tsv",
        "--out", tmp_path / "probe.json",
    )
    assert run("eval-wic", *common, "--probe-layer", 1) == 0
    assert run("eval-wic", *common, "--probe-layer", 99) == 1
    assert run("eval-wic", *common, "--include-embedding", 1) == 0


def test_eval_sim_command(pipeline, tmp_path):
    pairs = read_wic_pairs(pipeline / "data" / "wic_test.tsv")[:20]
    graded = [
        GradedPair(p.word, p.sentence1, p.span1, p.sentence2, p.span2,
                   3.0 if p.label == "T" else 1.0)
        for p in pairs
    ]
    gpath = tmp_path / "graded.tsv"
    write_graded_pairs(gpath, graded)
    out = tmp_path / "sim.json"
    assert run(
        "eval-sim", "--checkpoint", pipeline / "tuned.ckpt",
        "--pairs", gpath, "--out", out, "--n-feature-layers", 2,
    ) == 0
    report = json.loads(out.read_text())
    assert report["task"] == "graded-similarity"
    assert -1.0 <= report["spearman_rho"] <= 1.0


def test_eval_wsd_command(pipeline, tmp_path):
    out = tmp_path / "wsd.json"
    common = (
        "--checkpoint", pipeline / "tuned.ckpt",
        "--exemplars", pipeline / "data" / "wsd_exemplars.tsv",
        "--test", pipeline / "data" / "wsd_test.tsv",
        "--out", out, "--n-feature-layers", 2,
    )
    assert run("eval-wsd", *common) == 0
    report = json.loads(out.read_text())
    assert report["task"] == "wsd"
    assert report["n_instances"] == 80 - 6
    # template mode treats the exemplar context as a gloss
    assert run("eval-wsd", *common, "--template", "the word {word} means {filler}") == 0


def test_analyze_command(pipeline, tmp_path):
    jout, cout = tmp_path / "geom.json", tmp_path / "geom.csv"
    assert run(
        "analyze", "--checkpoint", pipeline / "tuned.ckpt",
        "--corpus", pipeline / "data" / "corpus.txt",
        "--out-json", jout, "--out-csv", cout,
        "--max-sentences", 40, "--is-sentences", 10, "--is-repetitions", 2,
        "--rw-samples", 2, "--rw-words", 10, "--top-n", 2,
    ) == 0
    payload = json.loads(jout.read_text())
    assert set(payload["rows"]) == {"layer0", "layer1", "layer2", "top2"}
    with open(cout, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["layer", "metric", "value", "variance"]
    assert len(rows) == 1 + 4 * 4


def test_dump_embeddings_command(pipeline, tmp_path):
    out = tmp_path / "emb.jsonl"
    assert run(
        "dump-embeddings", "--checkpoint", pipeline / "tuned.ckpt",
        "--targeted", pipeline / "data" / "targeted.tsv",
        "--out", out, "--n-feature-layers", 2,
    ) == 0
    records = read_embeddings(out)
    assert len(records) == 80
    assert all(len(r["vector"]) == 16 for r in records)


def test_sweep_command(pipeline, tmp_path):
    out = tmp_path / "sweep.csv"
    assert run(
        "sweep", "--corpus", pipeline / "data" / "corpus.txt",
        "--checkpoint", pipeline / "base.ckpt",
        "--dev", pipeline / "data" / "wic_dev.tsv",
        "--test", pipeline / "data" / "wic_test.tsv",
        "--out", out, "--knob", "dropout", "--values", "0.0,0.3",
        "--epochs", 1, "--batch-size", 20, "--mask-k", 1,
        "--temperature", 0.2, "--lr", 1e-4, "--max-sentences", 40,
        "--n-feature-layers", 2,
    ) == 0
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["knob", "value", "accuracy", "auc"]
    assert [r[:2] for r in rows[1:]] == [["dropout", "0.0"], ["dropout", "0.3"]]
    for r in rows[1:]:
        assert 0.0 <= float(r[2]) <= 1.0
        assert 0.0 <= float(r[3]) <= 1.0


def test_sweep_rejects_bad_knob_and_values(pipeline, tmp_path):
    common = (
        "--corpus", pipeline / "data" / "corpus.txt",
        "--checkpoint", pipeline / "base.ckpt",
        "--dev", pipeline / "data" / "wic_dev.tsv",
        "--test", pipeline / "data" / "wic_test.tsv",
        "--out", tmp_path / "s.csv",
    )
    assert run("sweep", *common, "--knob", "bogus", "--values", "1") == 1
    assert run("sweep", *common, "--knob", "mask_k", "--values", "a,b") == 1


# -- config resolution and exit codes ---------------------------------------------

def test_unknown_config_key_rejected_by_name(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "d"), "bogus_key": 1}))
    assert run("gen-synth", "--config", cfg) == 1
    assert "bogus_key" in capsys.readouterr().err


def test_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "out_dir": str(tmp_path / "d"), "seed": 1, "n_sentences": 60,
        "n_ambiguous": 3, "n_topical": 4, "quota": 2, "n_filler_words": 30,
        "len_min": 6, "len_max": 10, "n_dev_pairs": 10, "n_test_pairs": 10,
    }))
    assert run("gen-synth", "--config", cfg, "--seed", 2) == 0
    audit = json.loads((tmp_path / "d" / "run.config.json").read_text())
    assert audit["seed"] == 2            # flag wins
    assert audit["n_sentences"] == 60    # file beats default


def test_replay_from_emitted_config(pipeline, tmp_path, capsys):
    """The audit record a run writes is itself a valid --config input and
    replays the run byte-for-byte (modulo the overridden output path)."""
    assert run(
        "pretrain", "--config", pipeline / "base.ckpt.config.json",
        "--out", tmp_path / "replay.ckpt",
    ) == 0
    assert (tmp_path / "replay.ckpt").read_bytes() == (pipeline / "base.ckpt").read_bytes()
    assert (
        (tmp_path / "replay.ckpt.loss.csv").read_bytes()
        == (pipeline / "base.ckpt.loss.csv").read_bytes()
    )

    assert run(
        "gen-synth", "--config", pipeline / "data" / "run.config.json",
        "--out-dir", tmp_path / "data2",
    ) == 0
    for name in ("corpus.txt", "gold.json", "wic_dev.tsv", "wsd_test.tsv"):
        assert (
            (tmp_path / "data2" / name).read_bytes()
            == (pipeline / "data" / name).read_bytes()
        ), name

    # a record from one command is rejected by another, by name
    assert run(
        "finetune", "--config", pipeline / "base.ckpt.config.json",
        "--checkpoint", pipeline / "base.ckpt", "--out", tmp_path / "x.ckpt",
    ) == 1
    assert "pretrain" in capsys.readouterr().err


def test_config_type_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "d"), "seed": "abc"}))
    assert run("gen-synth", "--config", cfg) == 1
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "d"), "seed": True}))
    assert run("gen-synth", "--config", cfg) == 1
    cfg.write_text("[1, 2]")
    assert run("gen-synth", "--config", cfg) == 1
    cfg.write_text("{broken")
    assert run("gen-synth", "--config", cfg) == 1
    assert run("gen-synth", "--config", tmp_path / "missing.json") == 1


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["pretrain"]) == 1  # missing required settings
    capsys.readouterr()


def test_data_errors_exit_2(tmp_path, capsys):
    assert run(
        "eval-wic", "--checkpoint", tmp_path / "missing.ckpt",
        "--dev", tmp_path / "d.tsv", "--test", tmp_path / "t.tsv",
        "--out", tmp_path / "r.json",
    ) == 2
    assert "data error" in capsys.readouterr().err


def test_reruns_are_byte_identical(pipeline, tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    for d in (d1, d2):
        assert run("gen-synth", "--out-dir", d / "data", *GEN_ARGS) == 0
        assert run(
            "pretrain", "--corpus", d / "data" / "corpus.txt", "--out", d / "base.ckpt",
            *TINY_ENCODER, "--epochs", 1, "--batch-size", 32, "--seed", 0,
        ) == 0
        assert run(
            "eval-wic", "--checkpoint", d / "base.ckpt",
            "--dev", d / "data" / "wic_dev.tsv", "--test", d / "data" / "wic_test.tsv",
            "--out", d / "wic.json", "--n-feature-layers", 2,
        ) == 0
    for rel in (
        ("data", "corpus.txt"), ("data", "gold.json"), ("data", "wic_dev.tsv"),
        ("base.ckpt",), ("base.ckpt.loss.csv",), ("wic.json",),
    ):
        a, b = d1.joinpath(*rel), d2.joinpath(*rel)
        assert a.read_bytes() == b.read_bytes(), rel


def test_console_script_help():
    exe = shutil.which("wicrep")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "command" in proc.stdout
