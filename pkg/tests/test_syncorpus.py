"""Synthetic polysemy corpus generation, pair sampling and the gold sidecar."""

import collections
import json

import pytest

from wicrep.errors import ConfigError, DataError
from wicrep.rng import Rng
from wicrep.syncorpus import (
    CorpusSpec,
    GoldCorpus,
    Sense,
    SenseSpec,
    default_sense_specs,
    gen_corpus,
    gen_wic_pairs,
    gen_wsd_data,
    oracle_wic_accuracy,
    read_gold_json,
    write_gold_json,
)


def small_spec(quota=5, n_sentences=120, overlap=0.0):
    return CorpusSpec(
        sense_specs=default_sense_specs(3, 2, 4, quota),
        n_sentences=n_sentences,
        sentence_len_range=(6, 10),
        n_filler_words=30,
        topic_overlap=overlap,
    )


@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(small_spec(), seed=17)


# -- spec validation ---------------------------------------------------------------

def test_default_sense_specs_shape():
    specs = default_sense_specs(10, 2, 6, 50)
    assert len(specs) == 10
    assert all(len(ss.senses) == 2 for ss in specs)
    assert specs[0].senses[0].sense_id == "amb0.s0"
    assert len(specs[3].senses[1].topical_words) == 6
    assert all(s.min_occurrences == 50 for ss in specs for s in ss.senses)
    all_topical = [w for ss in specs for s in ss.senses for w in s.topical_words]
    assert len(all_topical) == len(set(all_topical))  # globally disjoint


def test_sense_spec_validation():
    t = ("a", "b")
    with pytest.raises(ConfigError):
        SenseSpec("w", (Sense("s0", t),)).validate()  # one sense
    with pytest.raises(ConfigError):
        SenseSpec("w", (Sense("s0", ()), Sense("s1", t))).validate()  # empty topical
    with pytest.raises(ConfigError):
        SenseSpec("w", (Sense("s0", t), Sense("s1", ("b", "c")))).validate()  # overlap
    with pytest.raises(ConfigError):
        SenseSpec("w", (Sense("s0", ("w", "x")), Sense("s1", t))).validate()  # self
    with pytest.raises(ConfigError):
        SenseSpec("w", (Sense("s0", ("x",)), Sense("s0", ("y",)))).validate()  # dup id


def test_corpus_spec_validation():
    good = default_sense_specs(2, 2, 3, 0)
    CorpusSpec(good).validate()
    dup = (good[0], good[0])
    with pytest.raises(ConfigError):
        CorpusSpec(dup).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, sentence_len_range=(2, 5)).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, sentence_len_range=(8, 7)).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, n_filler_words=0).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, topical_rate=1.5).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, topic_overlap=1.0).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(good, n_sentences=0).validate()


# -- corpus generation ---------------------------------------------------------------

def test_round_robin_quotas(corpus):
    counts = collections.Counter((o.word, o.sense_id) for o in corpus.occurrences)
    # 120 sentences over 3 words x 2 senses: exactly 20 each
    assert len(counts) == 6
    assert all(c == 20 for c in counts.values())
    assert len(corpus.sentences) == 120


def test_round_robin_remainder():
    c = gen_corpus(small_spec(quota=0, n_sentences=121), seed=3)
    counts = collections.Counter((o.word, o.sense_id) for o in c.occurrences)
    assert sorted(counts.values()) == [20, 20, 20, 20, 20, 21]


def test_occurrence_spans_cover_the_word(corpus):
    for occ in corpus.occurrences:
        a, b = occ.char_span
        assert corpus.sentences[occ.sentence_index][a:b] == occ.word


def test_sentence_lengths_in_range(corpus):
    for s in corpus.sentences:
        n = len(s.split())
        assert 6 <= n <= 10


def test_each_sentence_contains_its_ambiguous_word_once(corpus):
    for occ in corpus.occurrences:
        words = corpus.sentences[occ.sentence_index].split()
        assert words.count(occ.word) == 1


def test_gen_corpus_deterministic():
    a = gen_corpus(small_spec(), seed=17)
    b = gen_corpus(small_spec(), seed=17)
    assert a.sentences == b.sentences
    assert a.occurrences == b.occurrences
    c = gen_corpus(small_spec(), seed=18)
    assert a.sentences != c.sentences


def test_infeasible_quota_rejected():
    with pytest.raises(DataError):
        gen_corpus(small_spec(quota=50, n_sentences=120), seed=0)


def test_topic_overlap_smoke():
    c = gen_corpus(small_spec(overlap=0.4), seed=5)
    assert len(c.sentences) == 120


# -- pair sampling ---------------------------------------------------------------------

def test_wic_pairs_balanced_and_distinct(corpus):
    pairs = gen_wic_pairs(corpus, 80, Rng(2))
    labels = collections.Counter(p.label for p in pairs)
    assert labels == {"T": 40, "F": 40}
    for p in pairs:
        if p.label == "T":
            assert p.sentence1 != p.sentence2
        a, b = p.span1
        assert p.sentence1[a:b] == p.word
        a, b = p.span2
        assert p.sentence2[a:b] == p.word


def test_wic_labels_match_gold_senses(corpus):
    sense_of = {}
    for occ in corpus.occurrences:
        key = (corpus.sentences[occ.sentence_index], occ.char_span)
        assert sense_of.setdefault(key, occ.sense_id) == occ.sense_id
    pairs = gen_wic_pairs(corpus, 60, Rng(9))
    for p in pairs:
        s1 = sense_of[(p.sentence1, p.span1)]
        s2 = sense_of[(p.sentence2, p.span2)]
        assert p.label == ("T" if s1 == s2 else "F")


def test_wic_pairs_deterministic(corpus):
    assert gen_wic_pairs(corpus, 40, Rng(4)) == gen_wic_pairs(corpus, 40, Rng(4))
    assert gen_wic_pairs(corpus, 40, Rng(4)) != gen_wic_pairs(corpus, 40, Rng(5))


def test_wic_pairs_need_two_occurrences_per_sense():
    c = gen_corpus(small_spec(quota=0, n_sentences=7), seed=0)
    with pytest.raises(DataError):
        gen_wic_pairs(c, 10, Rng(0))


def test_wic_pairs_bad_count(corpus):
    with pytest.raises(ConfigError):
        gen_wic_pairs(corpus, 0, Rng(0))


def test_context_oracle_recovers_labels(corpus):
    pairs = gen_wic_pairs(corpus, 200, Rng(11))
    assert oracle_wic_accuracy(pairs, corpus.spec) >= 0.9


def test_context_oracle_manual_and_errors():
    spec = CorpusSpec(sense_specs=(
        SenseSpec("bank", (Sense("b.0", ("money",)), Sense("b.1", ("river",)))),
    ))
    from wicrep.evaluation import WiCPair

    t_pair = WiCPair("bank", "money bank here", (6, 10), "the money bank", (10, 14), "T")
    f_pair = WiCPair("bank", "money bank", (6, 10), "river bank", (6, 10), "F")
    assert oracle_wic_accuracy([t_pair, f_pair], spec) == 1.0
    wrong = WiCPair("bank", "money bank", (6, 10), "river bank", (6, 10), "T")
    assert oracle_wic_accuracy([wrong], spec) == 0.0
    with pytest.raises(DataError):
        oracle_wic_accuracy([], spec)
    with pytest.raises(DataError):
        oracle_wic_accuracy([WiCPair("other", "a other", (2, 7), "b other", (2, 7), "T")], spec)


# -- one-shot wsd data --------------------------------------------------------------

def test_wsd_holdout_structure(corpus):
    exemplars, test = gen_wsd_data(corpus, Rng(6))
    assert len(exemplars) == 6                      # one per (word, sense)
    assert len({e.sense_id for e in exemplars}) == 6
    assert len(test) == len(corpus.occurrences) - len(exemplars)
    for t in test:
        assert t.gold in t.candidates
        a, b = t.span
        assert t.sentence[a:b] == t.word
    # exactly one occurrence per sense is withheld from the test split
    test_counts = collections.Counter((t.word, t.gold) for t in test)
    gold_counts = collections.Counter((o.word, o.sense_id) for o in corpus.occurrences)
    assert test_counts == {k: v - 1 for k, v in gold_counts.items()}
    # every test instance keeps the full candidate list of its word
    by_word = {t.word: t.candidates for t in test}
    assert all(len(c) == 2 for c in by_word.values())


def test_wsd_deterministic(corpus):
    a = gen_wsd_data(corpus, Rng(8))
    b = gen_wsd_data(corpus, Rng(8))
    assert a == b


# -- gold sidecar ----------------------------------------------------------------------

def test_gold_json_roundtrip(corpus, tmp_path):
    path = tmp_path / "gold.json"
    write_gold_json(path, corpus)
    loaded = read_gold_json(path)
    assert loaded.sentences == corpus.sentences
    assert loaded.occurrences == corpus.occurrences
    assert loaded.spec == corpus.spec


def test_gold_json_rejects_bad_span(corpus, tmp_path):
    path = tmp_path / "gold.json"
    write_gold_json(path, corpus)
    payload = json.loads(path.read_text())
    payload["occurrences"][0]["span"] = [0, 2]
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError):
        read_gold_json(path)


def test_gold_json_rejects_bad_sentence_index(corpus, tmp_path):
    path = tmp_path / "gold.json"
    write_gold_json(path, corpus)
    payload = json.loads(path.read_text())
    payload["occurrences"][0]["sentence_index"] = 10_000
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError):
        read_gold_json(path)


def test_gold_json_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DataError):
        read_gold_json(p)
    p.write_text(json.dumps({"sentences": []}))
    with pytest.raises(DataError):
        read_gold_json(p)
    with pytest.raises(DataError):
        read_gold_json(tmp_path / "absent.json")
