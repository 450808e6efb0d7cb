"""Isotropy score oracles and the embedding-geometry report."""

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wicrep.encoder import encode
from wicrep.errors import ConfigError, DataError
from wicrep.features import LayerSpec
from wicrep.geometry import (
    GeometryParams,
    GeometryReport,
    TokenVectors,
    collect_token_vectors,
    geometry_report,
    intra_sentence_similarity,
    isotropy_protocol,
    isotropy_score,
    layer_labels,
    layer_sweep,
    random_word_similarity,
    write_geometry_csv,
    write_geometry_json,
)
from wicrep.rng import Rng
from wicrep.tokenizer import encode_plain_instance


# -- isotropy score oracles ---------------------------------------------------------

def test_isotropy_of_balanced_axes_is_exactly_zero():
    v = np.array([[1.0, 0, 0, 0], [-1, 0, 0, 0], [0, 1, 0, 0], [0, -1, 0, 0]])
    assert isotropy_score(v) == 0.0


def test_isotropy_pinned_unbalanced_value():
    # Z(e1) = 2e + 1, Z(e2) = e + 2 for the set {e1, e1, e2}
    v = np.array([[1.0, 0], [1, 0], [0, 1]])
    expected = math.log((math.e + 2) / (2 * math.e + 1))
    assert isotropy_score(v) == pytest.approx(expected, abs=1e-12)
    assert abs(isotropy_score(v) - (-0.311)) <= 1e-3


def test_isotropy_include_negated_is_harsher():
    v = np.array([[1.0, 0], [1, 0], [0, 1]])
    plain = isotropy_score(v)
    negated = isotropy_score(v, include_negated=True)
    assert negated <= plain
    assert negated == pytest.approx(math.log((2 / math.e + 1) / (2 * math.e + 1)), abs=1e-12)


random_sets = st.tuples(st.integers(2, 12), st.integers(1, 6)).flatmap(
    lambda nd: arrays(
        np.float64,
        nd,
        elements=st.floats(-3, 3, allow_nan=False, width=16),
    )
)


@settings(max_examples=300, deadline=None)
@given(random_sets)
def test_isotropy_never_positive(v):
    assume(np.linalg.norm(v) > 1e-6)
    assert isotropy_score(v) <= 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_isotropy_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(30, 6))
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert abs(isotropy_score(v) - isotropy_score(v @ q)) <= 1e-8


def test_isotropy_invariant_under_global_negation():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(25, 5))
    assert isotropy_score(v) == isotropy_score(-v)


def test_isotropy_validation():
    with pytest.raises(DataError):
        isotropy_score(np.zeros((3, 4)))       # rank 0
    with pytest.raises(DataError):
        isotropy_score(np.ones((1, 4)))        # one vector
    with pytest.raises(DataError):
        isotropy_score(np.ones(4))             # not 2-d


def test_token_vectors_stacked_empty():
    with pytest.raises(DataError):
        TokenVectors(vectors=[np.zeros((0, 4))], word_ids=[np.zeros(0, int)]).stacked()


# -- collection over a toy model ------------------------------------------------------

def test_collect_token_vectors_counts_and_values(tiny_model):
    sentences = ["w1 w2 w3", "w4 w5"]
    spec = LayerSpec(n_layers=1)  # top layer only
    collected, = collect_token_vectors(tiny_model, sentences, [spec])
    assert [len(v) for v in collected.vectors] == [3, 2]
    # every word is a content token in this vocab; ids match the tokenizer
    inst = encode_plain_instance(sentences[0], tiny_model.vocab)
    np.testing.assert_array_equal(collected.word_ids[0], inst.token_ids[1:4])
    # top-layer vectors equal the encoder's final hidden states at those positions
    states = encode(tiny_model, inst, mode="inference")
    np.testing.assert_allclose(collected.vectors[0], states[-1][1:4], atol=1e-10)


def test_collect_token_vectors_skips_unknown_words(tiny_model):
    collected, = collect_token_vectors(
        tiny_model, ["w1 zzz w2"], [LayerSpec(n_layers=1)]
    )
    assert len(collected.vectors[0]) == 2  # zzz maps to [UNK], excluded


def test_collect_token_vectors_empty_corpus(tiny_model):
    with pytest.raises(DataError):
        collect_token_vectors(tiny_model, [], [LayerSpec()])


def test_isotropy_protocol_deterministic(tiny_model, small_corpus):
    spec = LayerSpec(n_layers=2)
    a = isotropy_protocol(tiny_model, small_corpus, spec, Rng(5), n_sentences=10, n_repetitions=2)
    b = isotropy_protocol(tiny_model, small_corpus, spec, Rng(5), n_sentences=10, n_repetitions=2)
    assert a == b
    assert a <= 0.0


def test_random_word_similarity_bounds_and_errors(tiny_model, small_corpus):
    spec = LayerSpec(n_layers=1)
    mean, var = random_word_similarity(
        tiny_model, small_corpus, spec, Rng(0), n_samples=3, n_words=10
    )
    assert -1.0 <= mean <= 1.0
    assert var >= 0.0
    with pytest.raises(ConfigError):
        random_word_similarity(tiny_model, small_corpus, spec, Rng(0), n_words=1)
    with pytest.raises(DataError):
        # only 20 distinct words exist in the corpus vocabulary
        random_word_similarity(tiny_model, small_corpus, spec, Rng(0), n_words=500)


def test_intra_sentence_similarity_adjusted_is_raw_minus_baseline(tiny_model, small_corpus):
    spec = LayerSpec(n_layers=2)
    raw, adjusted = intra_sentence_similarity(
        tiny_model, small_corpus, spec, Rng(1), n_samples=3, n_words=10
    )
    baseline, _ = random_word_similarity(
        tiny_model, small_corpus, spec, Rng(1), n_samples=3, n_words=10
    )
    assert adjusted == pytest.approx(raw - baseline, abs=1e-12)
    assert -1.0 <= raw <= 1.0


def test_intra_sentence_needs_multiword_sentences(tiny_model):
    with pytest.raises(DataError):
        intra_sentence_similarity(
            tiny_model, ["w1", "w2", "w3"], LayerSpec(), Rng(0), n_samples=1, n_words=2
        )


def test_layer_sweep_preserves_order(tiny_model):
    specs = [LayerSpec(probe_layer=i) for i in range(3)]
    out = layer_sweep(tiny_model, lambda m, s: float(s.probe_layer), specs)
    assert out == [0.0, 1.0, 2.0]


# -- full report -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_params():
    return GeometryParams(
        max_sentences=30, is_sentences=10, is_repetitions=2, rw_samples=2,
        rw_words=10, top_n=2,
    )


def test_layer_labels(tiny_model):
    labels = layer_labels(tiny_model, top_n=2)
    assert [name for name, _ in labels] == ["layer0", "layer1", "layer2", "top2"]
    assert labels[1][1].probe_layer == 1
    assert labels[-1][1].n_layers == 2


def test_geometry_report_rows_and_consistency(tiny_model, small_corpus, small_params):
    report = geometry_report(tiny_model, small_corpus, seed=3, params=small_params)
    assert set(report.rows) == {"layer0", "layer1", "layer2", "top2"}
    for row in report.rows.values():
        assert row["isotropy"] <= 0.0
        assert row["intra_adjusted"] == pytest.approx(
            row["intra_raw"] - row["random_word_mean"], abs=1e-12
        )
    assert report.n_sentences == len(small_corpus)


def test_geometry_report_deterministic(tiny_model, small_corpus, small_params):
    a = geometry_report(tiny_model, small_corpus, seed=3, params=small_params)
    b = geometry_report(tiny_model, small_corpus, seed=3, params=small_params)
    assert a.rows == b.rows
    c = geometry_report(tiny_model, small_corpus, seed=4, params=small_params)
    assert a.rows != c.rows  # sampled metrics move with the seed


def test_geometry_report_subsamples(tiny_model, small_corpus):
    params = GeometryParams(
        max_sentences=12, is_sentences=5, is_repetitions=1, rw_samples=1,
        rw_words=5, top_n=2,
    )
    report = geometry_report(tiny_model, small_corpus, seed=0, params=params)
    assert report.n_sentences == 12


def test_geometry_report_validation_catches_tampering():
    params = GeometryParams()
    report = GeometryReport(seed=0, n_sentences=1, params=params)
    report.rows["layer0"] = {
        "isotropy": 0.5, "random_word_mean": 0.0, "random_word_var": 0.0,
        "intra_raw": 0.1, "intra_adjusted": 0.1,
    }
    with pytest.raises(DataError):
        report.validate()
    report.rows["layer0"]["isotropy"] = -0.5
    report.rows["layer0"]["intra_adjusted"] = 0.9  # breaks raw - baseline
    with pytest.raises(DataError):
        report.validate()


def test_geometry_params_validation():
    with pytest.raises(ConfigError):
        GeometryParams(is_repetitions=0).validate()
    with pytest.raises(ConfigError):
        GeometryParams(rw_words=1).validate()
    GeometryParams().validate()


def test_geometry_json_and_csv_outputs(tiny_model, small_corpus, small_params, tmp_path):
    report = geometry_report(tiny_model, small_corpus, seed=3, params=small_params)
    jpath, cpath = tmp_path / "geom.json", tmp_path / "geom.csv"
    write_geometry_json(jpath, report)
    write_geometry_csv(cpath, report)

    payload = json.loads(jpath.read_text())
    assert payload["seed"] == 3
    assert payload["rows"]["top2"]["isotropy"] == report.rows["top2"]["isotropy"]
    assert payload["params"]["rw_words"] == 10

    with open(cpath, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["layer", "metric", "value", "variance"]
    assert len(rows) == 1 + 4 * len(report.rows)
    by_key = {(layer, metric): value for layer, metric, value, _ in rows[1:]}
    assert float(by_key[("top2", "isotropy")]) == pytest.approx(
        report.rows["top2"]["isotropy"], rel=1e-9
    )
