"""Embedding-geometry diagnostics: isotropy, random-word similarity,
intra-sentence similarity, and layer sweeps.

The isotropy score of a vector set V is log(min Z / max Z) where
Z(c) = sum over v of exp(c . v), evaluated at the eigenvectors of V^T V;
0 means perfectly isotropic, more negative means more anisotropic. The
random-word similarity is the mean pairwise cosine over samples of word
vectors (each word = mean of its contextual vectors) and serves as the
anisotropy baseline subtracted from the raw intra-sentence similarity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .encoder import EncoderModel, encode_batch
from .errors import ConfigError, DataError, DegenerateVectorError
from .features import LayerSpec, select_state_indices
from .rng import Rng
from .tokenizer import encode_plain_instance

_RANK_TOL = 1e-10


def isotropy_score(vectors: np.ndarray, include_negated: bool = False) -> float:
    """log(min Z / max Z) over eigenvector candidates of V^T V; always <= 0.

    Candidate directions are the eigenvectors with non-negligible
    eigenvalue, sign-aligned with the data mean so the score is invariant
    under orthogonal rotation of the whole set. include_negated adds the
    negated candidates as well (a strictly harsher approximation of the
    full unit sphere; changes pinned small-case values, so off by default).
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise DataError(f"need a 2-d set of >= 2 vectors, got shape {v.shape}")
    gram = v.T @ v
    gram = (gram + gram.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(gram)
    top = float(eigvals[-1])
    if top <= 0.0:
        raise DataError("isotropy undefined for a rank-0 vector set")
    keep = eigvals > _RANK_TOL * top
    candidates = eigvecs[:, keep][:, ::-1]      # descending eigenvalue order
    mean_dir = v.sum(axis=0)
    signs = np.where(candidates.T @ mean_dir < 0.0, -1.0, 1.0)
    candidates = candidates * signs[None, :]
    if include_negated:
        candidates = np.concatenate([candidates, -candidates], axis=1)
    proj = v @ candidates                        # [n, n_candidates]
    shift = proj.max(axis=0)
    log_z = shift + np.log(np.exp(proj - shift).sum(axis=0))
    return float(log_z.min() - log_z.max())


@dataclass
class TokenVectors:
    """Per-sentence content-token vectors for one layer spec."""

    vectors: list[np.ndarray]                    # each [n_words_i, d]
    word_ids: list[np.ndarray]                   # each [n_words_i]

    def stacked(self) -> np.ndarray:
        usable = [a for a in self.vectors if len(a)]
        if not usable:
            raise DataError("no content tokens collected")
        return np.concatenate(usable, axis=0)


def collect_token_vectors(
    model: EncoderModel,
    sentences: list[str],
    specs: list[LayerSpec],
    chunk: int = 64,
) -> list[TokenVectors]:
    """One inference pass; every content word becomes a one-token span."""
    if not sentences:
        raise DataError("empty corpus")
    out = [TokenVectors([], []) for _ in specs]
    idx_per_spec = [select_state_indices(s, model.config.n_layers) for s in specs]
    instances = [encode_plain_instance(s, model.vocab) for s in sentences]
    for i in range(0, len(instances), chunk):
        batch = instances[i : i + chunk]
        with ad.no_grad():
            states, lengths = encode_batch(model, batch, mode="inference")
        arrs = [s.data for s in states]
        for j, inst in enumerate(batch):
            ids = np.array(inst.token_ids)
            content = np.nonzero(~np.isin(ids, range(5)))[0]
            content = content[content < lengths[j]]
            for k, indices in enumerate(idx_per_spec):
                stack = np.mean([arrs[t][j, content] for t in indices], axis=0)
                out[k].vectors.append(stack if len(content) else np.zeros((0, arrs[0].shape[-1])))
                out[k].word_ids.append(ids[content])
    return out


def isotropy_protocol(
    model: EncoderModel,
    sentences: list[str],
    spec: LayerSpec,
    rng: Rng,
    n_sentences: int = 200,
    n_repetitions: int = 5,
) -> float:
    """Sample sentences, score all their word vectors, average over repetitions."""
    collected = collect_token_vectors(model, sentences, [spec])[0]
    return _isotropy_from_collected(collected, rng, n_sentences, n_repetitions)


def _isotropy_from_collected(
    collected: TokenVectors, rng: Rng, n_sentences: int, n_repetitions: int
) -> float:
    n = len(collected.vectors)
    take = min(n_sentences, n)
    scores = []
    for _ in range(n_repetitions):
        pick = rng.choice(n, size=take)
        vecs = [collected.vectors[i] for i in pick if len(collected.vectors[i])]
        if not vecs:
            raise DataError("sampled sentences contain no content tokens")
        scores.append(isotropy_score(np.concatenate(vecs, axis=0)))
    return float(np.mean(scores))


def _word_means(collected: TokenVectors) -> tuple[np.ndarray, np.ndarray]:
    """Mean contextual vector per word type: (ids [w], means [w, d])."""
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for vecs, ids in zip(collected.vectors, collected.word_ids):
        for v, wid in zip(vecs, ids):
            wid = int(wid)
            if wid in sums:
                sums[wid] = sums[wid] + v
                counts[wid] += 1
            else:
                sums[wid] = v.copy()
                counts[wid] = 1
    ids = np.array(sorted(sums))
    means = np.stack([sums[i] / counts[i] for i in ids]) if len(ids) else np.zeros((0, 1))
    return ids, means


def _mean_pairwise_cosine(vectors: np.ndarray) -> float:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("zero vector in pairwise similarity")
    unit = vectors / norms
    n = len(unit)
    gram = unit @ unit.T
    return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))


def random_word_similarity(
    model: EncoderModel,
    sentences: list[str],
    spec: LayerSpec,
    rng: Rng,
    n_samples: int = 5,
    n_words: int = 200,
) -> tuple[float, float]:
    collected = collect_token_vectors(model, sentences, [spec])[0]
    return _random_word_sim_from_collected(collected, rng, n_samples, n_words)


def _random_word_sim_from_collected(
    collected: TokenVectors, rng: Rng, n_samples: int, n_words: int
) -> tuple[float, float]:
    if n_words < 2:
        raise ConfigError(f"n_words must be >= 2, got {n_words}")
    _, means = _word_means(collected)
    if len(means) < n_words:
        raise DataError(
            f"corpus yields {len(means)} distinct content words; need {n_words}"
        )
    samples = [
        _mean_pairwise_cosine(means[rng.choice(len(means), size=n_words)])
        for _ in range(n_samples)
    ]
    return float(np.mean(samples)), float(np.var(samples))


def intra_sentence_similarity(
    model: EncoderModel,
    sentences: list[str],
    spec: LayerSpec,
    rng: Rng,
    n_samples: int = 5,
    n_words: int = 200,
) -> tuple[float, float]:
    """(raw, adjusted): adjusted subtracts the random-word baseline."""
    collected = collect_token_vectors(model, sentences, [spec])[0]
    raw = _intra_raw_from_collected(collected)
    baseline, _ = _random_word_sim_from_collected(collected, rng, n_samples, n_words)
    return raw, raw - baseline


def _intra_raw_from_collected(collected: TokenVectors) -> float:
    per_sentence = []
    for vecs in collected.vectors:
        if len(vecs) < 2:
            continue
        center = vecs.mean(axis=0)
        c_norm = np.linalg.norm(center)
        norms = np.linalg.norm(vecs, axis=1)
        if c_norm == 0.0 or np.any(norms == 0.0):
            raise DegenerateVectorError("zero vector in intra-sentence similarity")
        per_sentence.append(float(np.mean(vecs @ center / (norms * c_norm))))
    if not per_sentence:
        raise DataError("no sentence with at least 2 content words")
    return float(np.mean(per_sentence))


def layer_sweep(
    model: EncoderModel,
    eval_fn: Callable[[EncoderModel, LayerSpec], float],
    specs: list[LayerSpec],
) -> list[float]:
    """Run the supplied evaluation once per layer spec, preserving order."""
    return [eval_fn(model, spec) for spec in specs]


# -- full report ------------------------------------------------------------------

@dataclass
class GeometryParams:
    max_sentences: int = 1000
    is_sentences: int = 200
    is_repetitions: int = 5
    rw_samples: int = 5
    rw_words: int = 200
    top_n: int = 4

    def validate(self) -> None:
        for name in ("max_sentences", "is_sentences", "is_repetitions", "rw_samples", "top_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.rw_words < 2:
            raise ConfigError("rw_words must be >= 2")


@dataclass
class GeometryReport:
    seed: int
    n_sentences: int
    params: GeometryParams
    rows: dict[str, dict[str, float]] = field(default_factory=dict)

    def validate(self) -> None:
        for layer, row in self.rows.items():
            if row["isotropy"] > 1e-12:
                raise DataError(f"{layer}: isotropy score must be <= 0")
            if not -1.0 <= row["random_word_mean"] <= 1.0:
                raise DataError(f"{layer}: random-word similarity outside [-1, 1]")
            recomputed = row["intra_raw"] - row["random_word_mean"]
            if abs(recomputed - row["intra_adjusted"]) > 1e-12:
                raise DataError(f"{layer}: adjusted similarity inconsistent with raw - baseline")


def layer_labels(model: EncoderModel, top_n: int) -> list[tuple[str, LayerSpec]]:
    pairs = [(f"layer{i}", LayerSpec(probe_layer=i)) for i in range(model.config.n_layers + 1)]
    pairs.append((f"top{top_n}", LayerSpec(n_layers=top_n)))
    return pairs


def geometry_report(
    model: EncoderModel,
    sentences: list[str],
    seed: int,
    params: GeometryParams = GeometryParams(),
) -> GeometryReport:
    params.validate()
    root = Rng(seed)
    if len(sentences) > params.max_sentences:
        pick = root.child(0).choice(len(sentences), size=params.max_sentences)
        sentences = [sentences[i] for i in sorted(pick)]
    labelled = layer_labels(model, params.top_n)
    collections = collect_token_vectors(model, sentences, [s for _, s in labelled])
    report = GeometryReport(seed=seed, n_sentences=len(sentences), params=params)
    for (label, _), collected in zip(labelled, collections):
        layer_rng = root.child(1).child(len(report.rows))
        iso = _isotropy_from_collected(
            collected, layer_rng.child(0), params.is_sentences, params.is_repetitions
        )
        rw_mean, rw_var = _random_word_sim_from_collected(
            collected, layer_rng.child(1), params.rw_samples, params.rw_words
        )
        raw = _intra_raw_from_collected(collected)
        report.rows[label] = {
            "isotropy": iso,
            "random_word_mean": rw_mean,
            "random_word_var": rw_var,
            "intra_raw": raw,
            "intra_adjusted": raw - rw_mean,
        }
    report.validate()
    return report


def write_geometry_json(path, report: GeometryReport) -> None:
    payload = {
        "seed": report.seed,
        "n_sentences": report.n_sentences,
        "params": asdict(report.params),
        "rows": report.rows,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def write_geometry_csv(path, report: GeometryReport) -> None:
    """`layer,metric,value,variance`; variance column only for sampled metrics."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["layer", "metric", "value", "variance"])
        for layer, row in report.rows.items():
            w.writerow([layer, "isotropy", f"{row['isotropy']:.10g}", ""])
            w.writerow([
                layer, "random_word_similarity",
                f"{row['random_word_mean']:.10g}", f"{row['random_word_var']:.10g}",
            ])
            w.writerow([layer, "intra_sentence_raw", f"{row['intra_raw']:.10g}", ""])
            w.writerow([layer, "intra_sentence_adjusted", f"{row['intra_adjusted']:.10g}", ""])
