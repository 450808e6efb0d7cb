"""Synthetic polysemy corpora with gold sense labels.

Each ambiguous word has >= 2 senses, each sense a disjoint topical
vocabulary. A sentence contains exactly one ambiguous-word occurrence;
its remaining slots mix that sense's topical words with shared filler
words, so sense is recoverable from context by construction. The
bag-of-topical-words oracle quantifies exactly how recoverable, which
certifies that encoder gains on these benchmarks come from using
context rather than from luck.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import ConfigError, DataError
from .evaluation import WiCPair, WsdExemplar, WsdInstance
from .rng import Rng
from .tokenizer import word_tokenize


@dataclass(frozen=True)
class Sense:
    sense_id: str
    topical_words: tuple[str, ...]
    min_occurrences: int = 0


@dataclass(frozen=True)
class SenseSpec:
    word: str
    senses: tuple[Sense, ...]

    def validate(self) -> None:
        if len(self.senses) < 2:
            raise ConfigError(f"word {self.word!r} needs >= 2 senses")
        seen: set[str] = set()
        for sense in self.senses:
            if not sense.topical_words:
                raise ConfigError(f"sense {sense.sense_id!r} has an empty topical vocabulary")
            overlap = seen & set(sense.topical_words)
            if overlap:
                raise ConfigError(
                    f"word {self.word!r}: topical vocabularies overlap on {sorted(overlap)}"
                )
            seen |= set(sense.topical_words)
        if self.word in seen:
            raise ConfigError(f"ambiguous word {self.word!r} appears in its own topical vocabulary")
        if len({s.sense_id for s in self.senses}) != len(self.senses):
            raise ConfigError(f"word {self.word!r} has duplicate sense ids")


@dataclass
class CorpusSpec:
    sense_specs: tuple[SenseSpec, ...]
    n_sentences: int = 2000
    sentence_len_range: tuple[int, int] = (8, 14)
    n_filler_words: int = 300
    topical_rate: float = 0.75
    topic_overlap: float = 0.0

    def validate(self) -> None:
        if not self.sense_specs:
            raise ConfigError("need at least one ambiguous word")
        for spec in self.sense_specs:
            spec.validate()
        words = [s.word for s in self.sense_specs]
        if len(set(words)) != len(words):
            raise ConfigError("duplicate ambiguous words")
        lo, hi = self.sentence_len_range
        if lo < 3 or hi < lo:
            raise ConfigError(f"sentence length range must satisfy 3 <= lo <= hi, got {lo}..{hi}")
        if self.n_filler_words < 1:
            raise ConfigError("need at least one filler word")
        if not 0.0 <= self.topical_rate <= 1.0:
            raise ConfigError("topical_rate must be in [0, 1]")
        if not 0.0 <= self.topic_overlap < 1.0:
            raise ConfigError("topic_overlap must be in [0, 1)")
        if self.n_sentences < 1:
            raise ConfigError("n_sentences must be >= 1")


@dataclass(frozen=True)
class Occurrence:
    sentence_index: int
    word: str
    sense_id: str
    char_span: tuple[int, int]


@dataclass
class GoldCorpus:
    sentences: list[str]
    occurrences: list[Occurrence]
    spec: CorpusSpec


def default_sense_specs(
    n_words: int = 10, n_senses: int = 2, n_topical: int = 6, quota: int = 50
) -> tuple[SenseSpec, ...]:
    """Globally disjoint topical vocabularies: word ambN, sense ambN.sK."""
    specs = []
    for i in range(n_words):
        senses = tuple(
            Sense(
                sense_id=f"amb{i}.s{j}",
                topical_words=tuple(f"top{i}_{j}_{k}" for k in range(n_topical)),
                min_occurrences=quota,
            )
            for j in range(n_senses)
        )
        specs.append(SenseSpec(word=f"amb{i}", senses=senses))
    return tuple(specs)


def _combos(spec: CorpusSpec) -> list[tuple[str, Sense, tuple[str, ...]]]:
    """(word, sense, other-senses' topical pool) in round-robin order."""
    out = []
    for ss in spec.sense_specs:
        for sense in ss.senses:
            others = tuple(
                w for other in ss.senses if other.sense_id != sense.sense_id
                for w in other.topical_words
            )
            out.append((ss.word, sense, others))
    return out


def gen_corpus(spec: CorpusSpec, seed: int) -> GoldCorpus:
    """Round-robin sense quotas, deterministic per seed."""
    spec.validate()
    combos = _combos(spec)
    m = len(combos)
    base, extra = divmod(spec.n_sentences, m)
    for idx, (word, sense, _) in enumerate(combos):
        count = base + (1 if idx < extra else 0)
        if count < sense.min_occurrences:
            raise DataError(
                f"infeasible quota: word {word!r} sense {sense.sense_id!r} would get "
                f"{count} occurrences of the required {sense.min_occurrences}"
            )
    fillers = [f"fill{i}" for i in range(spec.n_filler_words)]
    lo, hi = spec.sentence_len_range
    rng = Rng(seed).child(0)
    sentences: list[str] = []
    occurrences: list[Occurrence] = []
    for t in range(spec.n_sentences):
        word, sense, others = combos[t % m]
        length = int(rng.integers(lo, hi + 1))
        target_pos = int(rng.integers(0, length))
        words = []
        for slot in range(length):
            if slot == target_pos:
                words.append(word)
            elif float(rng.uniform()) < spec.topical_rate:
                pool = sense.topical_words
                if others and spec.topic_overlap > 0.0 and float(rng.uniform()) < spec.topic_overlap:
                    pool = others
                words.append(pool[int(rng.integers(0, len(pool)))])
            else:
                words.append(fillers[int(rng.integers(0, len(fillers)))])
        sentence = " ".join(words)
        start = sum(len(w) + 1 for w in words[:target_pos])
        occurrences.append(Occurrence(t, word, sense.sense_id, (start, start + len(word))))
        sentences.append(sentence)
    return GoldCorpus(sentences, occurrences, spec)


def _occurrences_by_sense(corpus: GoldCorpus) -> dict[tuple[str, str], list[Occurrence]]:
    index: dict[tuple[str, str], list[Occurrence]] = {}
    for occ in corpus.occurrences:
        index.setdefault((occ.word, occ.sense_id), []).append(occ)
    return index


def _pair_from(corpus: GoldCorpus, word: str, o1: Occurrence, o2: Occurrence, label: str) -> WiCPair:
    return WiCPair(
        word,
        corpus.sentences[o1.sentence_index], o1.char_span,
        corpus.sentences[o2.sentence_index], o2.char_span,
        label,
    )


def gen_wic_pairs(corpus: GoldCorpus, n_pairs: int, rng: Rng) -> list[WiCPair]:
    """Balanced labels (T iff the gold senses match), always distinct sentences."""
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    index = _occurrences_by_sense(corpus)
    for ss in corpus.spec.sense_specs:
        for sense in ss.senses:
            if len(index.get((ss.word, sense.sense_id), [])) < 2:
                raise DataError(
                    f"word {ss.word!r} has fewer than 2 occurrences of sense {sense.sense_id!r}"
                )
    specs = corpus.spec.sense_specs
    pairs: list[WiCPair] = []
    for k in range(n_pairs):
        ss = specs[int(rng.integers(0, len(specs)))]
        if k % 2 == 0:                       # T pair: same sense, two occurrences
            sense = ss.senses[int(rng.integers(0, len(ss.senses)))]
            occs = index[(ss.word, sense.sense_id)]
            for _ in range(64):
                i, j = rng.choice(len(occs), size=2)
                o1, o2 = occs[int(i)], occs[int(j)]
                if corpus.sentences[o1.sentence_index] != corpus.sentences[o2.sentence_index]:
                    break
            else:
                raise DataError(f"cannot draw two distinct sentences for {ss.word!r}")
            pairs.append(_pair_from(corpus, ss.word, o1, o2, "T"))
        else:                                # F pair: two different senses
            si, sj = rng.choice(len(ss.senses), size=2)
            occs1 = index[(ss.word, ss.senses[int(si)].sense_id)]
            occs2 = index[(ss.word, ss.senses[int(sj)].sense_id)]
            o1 = occs1[int(rng.integers(0, len(occs1)))]
            o2 = occs2[int(rng.integers(0, len(occs2)))]
            pairs.append(_pair_from(corpus, ss.word, o1, o2, "F"))
    order = rng.permutation(n_pairs)
    return [pairs[i] for i in order]


def oracle_wic_accuracy(pairs: list[WiCPair], spec: CorpusSpec) -> float:
    """Bag-of-topical-words baseline: predict T iff the contexts share a
    token topical for the pair's word. Certifies label recoverability."""
    if not pairs:
        raise DataError("no pairs to score")
    topical = {
        ss.word: {w for sense in ss.senses for w in sense.topical_words}
        for ss in spec.sense_specs
    }
    correct = 0
    for p in pairs:
        if p.word not in topical:
            raise DataError(f"pair references unknown ambiguous word {p.word!r}")
        t1 = {tok for tok, _, _ in word_tokenize(p.sentence1)}
        t2 = {tok for tok, _, _ in word_tokenize(p.sentence2)}
        predicted = "T" if (t1 & t2 & topical[p.word]) else "F"
        correct += int(predicted == p.label)
    return correct / len(pairs)


def gen_wsd_data(corpus: GoldCorpus, rng: Rng) -> tuple[list[WsdExemplar], list[WsdInstance]]:
    """Hold out one occurrence per (word, sense) as its exemplar."""
    index = _occurrences_by_sense(corpus)
    exemplars: list[WsdExemplar] = []
    test: list[WsdInstance] = []
    for ss in corpus.spec.sense_specs:
        candidates = tuple(sense.sense_id for sense in ss.senses)
        held_out: dict[str, Occurrence] = {}
        for sense in ss.senses:
            occs = index.get((ss.word, sense.sense_id), [])
            if not occs:
                raise DataError(f"sense {sense.sense_id!r} has no occurrence to hold out")
            held_out[sense.sense_id] = occs[int(rng.integers(0, len(occs)))]
            exemplars.append(WsdExemplar(
                sense.sense_id,
                corpus.sentences[held_out[sense.sense_id].sentence_index],
                held_out[sense.sense_id].char_span,
            ))
        for sense in ss.senses:
            for occ in index[(ss.word, sense.sense_id)]:
                if occ is held_out[sense.sense_id]:
                    continue
                test.append(WsdInstance(
                    ss.word, corpus.sentences[occ.sentence_index], occ.char_span,
                    candidates, sense.sense_id,
                ))
    return exemplars, test


# -- gold sidecar -----------------------------------------------------------------

def write_gold_json(path, corpus: GoldCorpus) -> None:
    payload = {
        "sentences": corpus.sentences,
        "occurrences": [
            {
                "sentence_index": o.sentence_index,
                "word": o.word,
                "sense_id": o.sense_id,
                "span": list(o.char_span),
            }
            for o in corpus.occurrences
        ],
        "spec": asdict(corpus.spec),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def read_gold_json(path) -> GoldCorpus:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read gold file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON: {e}") from e
    try:
        spec_raw = payload["spec"]
        spec = CorpusSpec(
            sense_specs=tuple(
                SenseSpec(
                    word=ss["word"],
                    senses=tuple(
                        Sense(s["sense_id"], tuple(s["topical_words"]), s["min_occurrences"])
                        for s in ss["senses"]
                    ),
                )
                for ss in spec_raw["sense_specs"]
            ),
            n_sentences=spec_raw["n_sentences"],
            sentence_len_range=tuple(spec_raw["sentence_len_range"]),
            n_filler_words=spec_raw["n_filler_words"],
            topical_rate=spec_raw["topical_rate"],
            topic_overlap=spec_raw["topic_overlap"],
        )
        occurrences = [
            Occurrence(o["sentence_index"], o["word"], o["sense_id"], tuple(o["span"]))
            for o in payload["occurrences"]
        ]
        corpus = GoldCorpus(list(payload["sentences"]), occurrences, spec)
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed gold file: {e}") from e
    for occ in corpus.occurrences:
        if not 0 <= occ.sentence_index < len(corpus.sentences):
            raise DataError(f"{path}: occurrence references missing sentence {occ.sentence_index}")
        a, b = occ.char_span
        text = corpus.sentences[occ.sentence_index]
        if not (0 <= a < b <= len(text)) or text[a:b] != occ.word:
            raise DataError(f"{path}: span {a}:{b} does not cover {occ.word!r}")
    return corpus
