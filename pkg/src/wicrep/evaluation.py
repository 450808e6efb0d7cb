"""Evaluation protocols for contextual word representations.

Binary word-in-context: cosine similarities thresholded, with the
threshold tuned on a development set by exhaustive midpoint search.
Graded similarity: Spearman rank correlation against gold scores.
One-shot word sense disambiguation: nearest exemplar by cosine.
Template embedding turns a bare word plus a gloss into a context so
definition-style data can be scored with the same machinery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderModel
from .errors import ConfigError, DataError
from .features import LayerSpec, extract_wic_batch, cosine
from .tokenizer import encode_with_target, parse_char_span

LABELS = ("T", "F", "?")


@dataclass(frozen=True)
class WiCPair:
    word: str
    sentence1: str
    span1: tuple[int, int]
    sentence2: str
    span2: tuple[int, int]
    label: str = "?"

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class GradedPair:
    word: str
    sentence1: str
    span1: tuple[int, int]
    sentence2: str
    span2: tuple[int, int]
    score: float


@dataclass(frozen=True)
class WsdExemplar:
    sense_id: str
    context: str
    span: tuple[int, int]


@dataclass(frozen=True)
class WsdInstance:
    word: str
    sentence: str
    span: tuple[int, int]
    candidates: tuple[str, ...]
    gold: str

    def __post_init__(self):
        if self.gold not in self.candidates:
            raise DataError(f"gold sense {self.gold!r} not among candidates {self.candidates}")


@dataclass
class EvalReport:
    task: str
    n_instances: int
    accuracy: float | None = None
    auc: float | None = None
    spearman_rho: float | None = None
    threshold: float | None = None
    per_layer: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name, val, lo, hi in (
            ("accuracy", self.accuracy, 0.0, 1.0),
            ("auc", self.auc, 0.0, 1.0),
            ("spearman_rho", self.spearman_rho, -1.0, 1.0),
        ):
            if val is not None and not lo <= val <= hi:
                raise DataError(f"{name}={val} outside [{lo}, {hi}]")


# -- scalar metrics -------------------------------------------------------------

def _as_bool_labels(labels) -> np.ndarray:
    out = np.asarray(
        [lab if isinstance(lab, (bool, np.bool_)) else lab == "T" for lab in labels],
        dtype=bool,
    )
    return out


def threshold_search(sims, labels) -> tuple[float, float]:
    """Accuracy-maximizing cutoff for the rule: predict T iff sim >= threshold.

    Candidates are midpoints between adjacent sorted similarities plus
    -inf/+inf sentinels; equal-accuracy ties resolve to the smaller
    threshold. Returns (threshold, accuracy on the given set).
    """
    sims = np.asarray(sims, dtype=np.float64)
    y = _as_bool_labels(labels)
    if sims.shape != y.shape or sims.ndim != 1 or len(sims) == 0:
        raise DataError("need equal-length 1-d similarities and labels")
    if y.all() or not y.any():
        raise DataError("threshold search needs both labels present")
    uniq = np.unique(sims)
    candidates = np.concatenate(([-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]))
    best_t, best_acc = None, -1.0
    for t in candidates:
        acc = float(np.mean((sims >= t) == y))
        if acc > best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


def binary_eval(sims, labels, threshold: float) -> float:
    sims = np.asarray(sims, dtype=np.float64)
    y = _as_bool_labels(labels)
    if len(sims) == 0:
        raise DataError("cannot evaluate an empty instance set")
    if sims.shape != y.shape:
        raise DataError("similarities and labels disagree in length")
    return float(np.mean((sims >= threshold) == y))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(sims, labels) -> float:
    """Probability a random T outranks a random F; ties count one half.

    Rank-based Mann-Whitney normalization; exactly equal to brute-force
    pairwise counting.
    """
    sims = np.asarray(sims, dtype=np.float64)
    y = _as_bool_labels(labels)
    if sims.shape != y.shape or len(sims) == 0:
        raise DataError("need equal-length non-empty similarities and labels")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc needs both labels present")
    ranks = _average_ranks(sims)
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def spearman(a, b) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 3:
        raise DataError("spearman needs two equal-length 1-d inputs of size >= 3")
    ra, rb = _average_ranks(a), _average_ranks(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise DataError("rank correlation undefined for constant input")
    return float(da @ db) / denom


# -- model-facing protocols -----------------------------------------------------

def _embed_sides(
    model: EncoderModel, sides: list[tuple[str, tuple[int, int]]], spec: LayerSpec,
    chunk: int = 64,
) -> np.ndarray:
    instances = [encode_with_target(s, span, model.vocab) for s, span in sides]
    out = []
    for i in range(0, len(instances), chunk):
        out.append(extract_wic_batch(model, instances[i : i + chunk], spec).data)
    return np.concatenate(out, axis=0)


def pair_similarities(
    model: EncoderModel, pairs: list, spec: LayerSpec = LayerSpec()
) -> np.ndarray:
    """Cosine between the two target embeddings of each pair."""
    if not pairs:
        raise DataError("no pairs to embed")
    left = _embed_sides(model, [(p.sentence1, p.span1) for p in pairs], spec)
    right = _embed_sides(model, [(p.sentence2, p.span2) for p in pairs], spec)
    return np.array([cosine(u, v) for u, v in zip(left, right)])


def wic_task_eval(
    model: EncoderModel,
    dev: list[WiCPair],
    test: list[WiCPair],
    spec: LayerSpec = LayerSpec(),
) -> EvalReport:
    """Tune the threshold on dev, report accuracy and AUC on test."""
    if any(p.label == "?" for p in dev + test):
        raise DataError("dev and test pairs must carry T/F labels")
    dev_sims = pair_similarities(model, dev, spec)
    threshold, _ = threshold_search(dev_sims, [p.label for p in dev])
    test_sims = pair_similarities(model, test, spec)
    test_labels = [p.label for p in test]
    report = EvalReport(
        task="wic",
        n_instances=len(test),
        accuracy=binary_eval(test_sims, test_labels, threshold),
        auc=auc(test_sims, test_labels),
        threshold=threshold,
    )
    report.validate()
    return report


def graded_sim_eval(
    model: EncoderModel, pairs: list[GradedPair], spec: LayerSpec = LayerSpec()
) -> EvalReport:
    sims = pair_similarities(model, pairs, spec)
    report = EvalReport(
        task="graded-similarity",
        n_instances=len(pairs),
        spearman_rho=spearman(sims, [p.score for p in pairs]),
    )
    report.validate()
    return report


def one_shot_wsd(
    model: EncoderModel,
    exemplars: list[WsdExemplar],
    test: list[WsdInstance],
    spec: LayerSpec = LayerSpec(),
    template: str | None = None,
) -> tuple[float, list[str]]:
    """Nearest-exemplar sense prediction.

    Each candidate sense must have exactly one exemplar. Cosine ties
    resolve to the candidate listed first. With a template, the exemplar
    context column is treated as a gloss and embedded via
    embed_with_template using the test word.
    """
    by_sense: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    for ex in exemplars:
        if ex.sense_id in seen:
            raise DataError(f"sense {ex.sense_id!r} has more than one exemplar")
        seen.add(ex.sense_id)
    if template is None:
        vecs = _embed_sides(model, [(ex.context, ex.span) for ex in exemplars], spec)
        by_sense = {ex.sense_id: v for ex, v in zip(exemplars, vecs)}
    gloss = {ex.sense_id: ex.context for ex in exemplars}
    if not test:
        raise DataError("empty test set")
    test_vecs = _embed_sides(model, [(t.sentence, t.span) for t in test], spec)
    predictions: list[str] = []
    correct = 0
    for inst, vec in zip(test, test_vecs):
        best_sense, best_sim = None, -np.inf
        for sense in inst.candidates:
            if template is not None and sense not in by_sense:
                if sense not in gloss:
                    raise DataError(f"candidate sense {sense!r} has no exemplar")
                by_sense[sense] = embed_with_template(
                    model, inst.word, template, gloss[sense], spec
                )
            if sense not in by_sense:
                raise DataError(f"candidate sense {sense!r} has no exemplar")
            sim = cosine(vec, by_sense[sense])
            if sim > best_sim:
                best_sense, best_sim = sense, sim
        predictions.append(best_sense)
        correct += int(best_sense == inst.gold)
    return correct / len(test), predictions


def embed_with_template(
    model: EncoderModel,
    word: str,
    template: str,
    filler: str,
    spec: LayerSpec = LayerSpec(),
) -> np.ndarray:
    """Embed `word` inside template text with {word} and {filler} slots."""
    if template.count("{word}") != 1 or template.count("{filler}") != 1:
        raise ConfigError("template needs exactly one {word} and one {filler} slot")
    partial = template.replace("{filler}", filler)
    start = partial.index("{word}")
    sentence = partial.replace("{word}", word)
    instance = encode_with_target(sentence, (start, start + len(word)), model.vocab)
    return extract_wic_batch(model, [instance], spec).data[0]


# -- file formats ----------------------------------------------------------------

def _span_str(span: tuple[int, int]) -> str:
    return f"{span[0]}:{span[1]}"


def _check_no_tabs(*fields: str) -> None:
    for f in fields:
        if "\t" in f or "\n" in f:
            raise DataError("fields must not contain tabs or newlines")


def write_wic_pairs(path, pairs: list[WiCPair]) -> None:
    """`word  s1:e1  s2:e2  sentence1  sentence2  label` (tab-separated)."""
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            _check_no_tabs(p.word, p.sentence1, p.sentence2)
            f.write("\t".join([
                p.word, _span_str(p.span1), _span_str(p.span2),
                p.sentence1, p.sentence2, p.label,
            ]) + "\n")


def _read_tsv_rows(path, n_fields: int, what: str):
    try:
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != n_fields:
                    raise DataError(
                        f"{path}:{ln}: expected {n_fields} tab-separated fields "
                        f"for a {what} row, got {len(parts)}"
                    )
                yield ln, parts
    except OSError as e:
        raise DataError(f"cannot read {what} file {path}: {e}") from e


def read_wic_pairs(path) -> list[WiCPair]:
    pairs = []
    for ln, parts in _read_tsv_rows(path, 6, "WiC pair"):
        word, span1, span2, s1, s2, label = parts
        if label not in LABELS:
            raise DataError(f"{path}:{ln}: label must be one of {LABELS}, got {label!r}")
        pairs.append(WiCPair(
            word,
            s1, parse_char_span(span1, where=f"{path}:{ln}"),
            s2, parse_char_span(span2, where=f"{path}:{ln}"),
            label,
        ))
    return pairs


def write_graded_pairs(path, pairs: list[GradedPair]) -> None:
    """Same shape as WiC pairs with a float score in the label column."""
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            _check_no_tabs(p.word, p.sentence1, p.sentence2)
            f.write("\t".join([
                p.word, _span_str(p.span1), _span_str(p.span2),
                p.sentence1, p.sentence2, f"{p.score:.10g}",
            ]) + "\n")


def read_graded_pairs(path) -> list[GradedPair]:
    pairs = []
    for ln, parts in _read_tsv_rows(path, 6, "graded pair"):
        word, span1, span2, s1, s2, score = parts
        try:
            value = float(score)
        except ValueError as e:
            raise DataError(f"{path}:{ln}: score {score!r} is not a number") from e
        if not math.isfinite(value):
            raise DataError(f"{path}:{ln}: score must be finite")
        pairs.append(GradedPair(
            word,
            s1, parse_char_span(span1, where=f"{path}:{ln}"),
            s2, parse_char_span(span2, where=f"{path}:{ln}"),
            value,
        ))
    return pairs


def write_wsd_exemplars(path, exemplars: list[WsdExemplar]) -> None:
    """`sense_id  start:end  context` (tab-separated)."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in exemplars:
            _check_no_tabs(ex.sense_id, ex.context)
            f.write("\t".join([ex.sense_id, _span_str(ex.span), ex.context]) + "\n")


def read_wsd_exemplars(path) -> list[WsdExemplar]:
    out = []
    for ln, parts in _read_tsv_rows(path, 3, "WSD exemplar"):
        sense_id, span, context = parts
        out.append(WsdExemplar(sense_id, context, parse_char_span(span, where=f"{path}:{ln}")))
    return out


def write_wsd_test(path, instances: list[WsdInstance]) -> None:
    """`word  start:end  sentence  candidates,comma,separated  gold`."""
    with open(path, "w", encoding="utf-8") as f:
        for t in instances:
            _check_no_tabs(t.word, t.sentence, t.gold, *t.candidates)
            if any("," in c for c in t.candidates):
                raise DataError("sense ids must not contain commas")
            f.write("\t".join([
                t.word, _span_str(t.span), t.sentence, ",".join(t.candidates), t.gold,
            ]) + "\n")


def read_wsd_test(path) -> list[WsdInstance]:
    out = []
    for ln, parts in _read_tsv_rows(path, 5, "WSD test"):
        word, span, sentence, cands, gold = parts
        candidates = tuple(c for c in cands.split(",") if c)
        if not candidates:
            raise DataError(f"{path}:{ln}: empty candidate list")
        if gold not in candidates:
            raise DataError(f"{path}:{ln}: gold sense {gold!r} not among candidates")
        out.append(WsdInstance(
            word, sentence, parse_char_span(span, where=f"{path}:{ln}"), candidates, gold,
        ))
    return out


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)         # "inf" / "-inf"; thresholds can hit the sentinels
    return value


def write_report(path, report: EvalReport) -> None:
    report.validate()
    payload = {
        "task": report.task,
        "n_instances": report.n_instances,
        "accuracy": report.accuracy,
        "auc": report.auc,
        "spearman_rho": report.spearman_rho,
        "threshold": _json_safe(report.threshold),
        "per_layer": report.per_layer,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n")
