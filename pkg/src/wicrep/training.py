"""Contrastive fine-tuning of word-in-context features, plus MLM pretraining.

The fine-tuning recipe: duplicate each sentence into a two-view pair with
a shared random target word, mask a random span on each side of the
target in exactly one view per pair, encode both views with dropout
active, and pull the pair's target features together against all other
batch instances with a temperature-scaled contrastive loss whose
denominator contains only negatives (the positive term is excluded,
which makes the optimum value negative rather than zero).

MLM pretraining exists to manufacture a small "base" encoder from
scratch so that fine-tuning has a non-trivial starting point.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderModel, encode_batch, mlm_logits
from .errors import ConfigError, DataError
from .features import LayerSpec, normalize_rows, wic_features_from_states
from .optim import AdamW
from .rng import Rng
from .tokenizer import (
    MASK_ID,
    TokenizedInstance,
    Vocab,
    encode_plain,
    encode_plain_instance,
    word_tokenize,
)

logger = logging.getLogger("wicrep")


@dataclass
class TrainConfig:
    temperature: float = 0.04
    mask_k: int = 10
    dropout: float = 0.4
    lr: float = 2e-5
    epochs: int = 1
    batch_size: int = 200          # instances, i.e. batch_size // 2 pairs
    weight_decay: float = 0.01
    max_sentences: int = 10000
    seed: int = 0
    include_positive_in_denominator: bool = False
    exclude_frequent_targets: bool = True
    frequent_target_fraction: float = 0.01
    n_feature_layers: int = 4

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.frequent_target_fraction < 1.0:
            raise ConfigError(
                f"frequent_target_fraction must be in [0, 1), got {self.frequent_target_fraction}"
            )
        if self.mask_k < 0:
            raise ConfigError(f"mask_k must be >= 0, got {self.mask_k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 4 or self.batch_size % 2 != 0:
            raise ConfigError(f"batch_size must be even and >= 4, got {self.batch_size}")
        if self.max_sentences < 1:
            raise ConfigError(f"max_sentences must be >= 1, got {self.max_sentences}")


@dataclass
class MlmConfig:
    mask_prob: float = 0.15
    lr: float = 1e-3
    epochs: int = 1
    batch_size: int = 64
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigError(f"mask_prob must be in (0, 1), got {self.mask_prob}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class PairExample:
    instance: TokenizedInstance
    pair_id: int


def _eligible_target_positions(
    token_ids: tuple[int, ...], vocab: Vocab, banned_ids: frozenset[int]
) -> list[int]:
    out = []
    for pos, tid in enumerate(token_ids):
        if vocab.is_special(tid) or tid in banned_ids:
            continue
        if not any(ch.isalnum() for ch in vocab.token(tid)):
            continue                       # pure punctuation is not a target
        out.append(pos)
    return out


def frequent_token_ids(sentences: list[str], vocab: Vocab, top_fraction: float = 0.01) -> frozenset[int]:
    """Ids of the most frequent ~top_fraction of content token types."""
    counts: Counter[int] = Counter()
    for s in sentences:
        for tok, _, _ in word_tokenize(s):
            tid = vocab.id(tok)
            if not vocab.is_special(tid):
                counts[tid] += 1
    n_ban = int(len(counts) * top_fraction)
    return frozenset(tid for tid, _ in counts.most_common(n_ban))


def build_pair_dataset(
    sentences: list[str], vocab: Vocab, rng: Rng, cfg: TrainConfig
) -> list[PairExample]:
    """Duplicate each usable sentence into a two-view pair with one random target.

    Sentences are de-duplicated and capped at cfg.max_sentences by random
    sampling. Targets are content tokens (no specials, no pure punctuation);
    optionally the most frequent cfg.frequent_target_fraction of types are
    excluded. Sentences with no eligible target are skipped and counted in
    the log.
    """
    seen: set[str] = set()
    unique = [s for s in sentences if not (s in seen or seen.add(s))]
    if len(unique) > cfg.max_sentences:
        keep = rng.child(0).choice(len(unique), size=cfg.max_sentences)
        unique = [unique[i] for i in sorted(keep)]
    banned = (
        frequent_token_ids(unique, vocab, cfg.frequent_target_fraction)
        if cfg.exclude_frequent_targets
        else frozenset()
    )
    target_rng = rng.child(1)
    dataset: list[PairExample] = []
    skipped = 0
    for pair_id, sent in enumerate(unique):
        ids = tuple(encode_plain(sent, vocab))
        positions = _eligible_target_positions(ids, vocab, banned)
        if not positions:
            skipped += 1
            continue
        pos = positions[int(target_rng.integers(0, len(positions)))]
        words = word_tokenize(sent)
        # token position -> source word index: position pos maps to word pos-1
        # ([CLS] occupies 0 and truncation only drops the tail).
        start, end = words[pos - 1][1], words[pos - 1][2]
        targeted = TokenizedInstance(
            token_ids=ids, span=(pos, pos), text=sent, target_char_span=(start, end),
        )
        dataset.append(PairExample(targeted, pair_id))
        dataset.append(PairExample(targeted, pair_id))
    if skipped:
        logger.info("build_pair_dataset: skipped %d sentences with no eligible target", skipped)
    return dataset


def _side_region(instance: TokenizedInstance, vocab: Vocab, direction: int) -> tuple[int, int]:
    """Contiguous run of maskable tokens adjacent to the target, as [lo, hi].

    Scans outward from the target span until a special token or the
    sequence edge stops the run. Returns lo > hi when the side is empty.
    """
    a, b = instance.span
    ids = instance.token_ids
    if direction < 0:
        hi = a - 1
        lo = hi + 1
        while lo - 1 >= 0 and not vocab.is_special(ids[lo - 1]):
            lo -= 1
        return lo, hi
    lo = b + 1
    hi = lo - 1
    while hi + 1 < len(ids) and not vocab.is_special(ids[hi + 1]):
        hi += 1
    return lo, hi


def apply_span_mask(
    instance: TokenizedInstance, k: int, rng: Rng, vocab: Vocab
) -> TokenizedInstance:
    """Mask one contiguous span of up to k tokens on each side of the target.

    Each side's maskable region is the run of non-special tokens adjacent
    to the target. The masked span has length min(k, region length) and
    its start is uniform over valid placements (left side drawn first).
    The target span and special tokens are never masked; k=0 is identity.
    """
    if k < 0:
        raise ConfigError(f"mask length must be >= 0, got {k}")
    if k == 0:
        return instance
    ids = list(instance.token_ids)
    for direction in (-1, 1):
        lo, hi = _side_region(instance, vocab, direction)
        region_len = hi - lo + 1
        if region_len <= 0:
            continue
        span_len = min(k, region_len)
        start = lo + int(rng.integers(0, region_len - span_len + 1))
        for i in range(start, start + span_len):
            ids[i] = MASK_ID
    return instance.with_ids(tuple(ids))


def partner_indices(n: int) -> np.ndarray:
    """Partner of each anchor when views are interleaved [p0v0, p0v1, p1v0, ...]."""
    if n % 2 != 0:
        raise ConfigError(f"need an even number of views, got {n}")
    return np.arange(n) ^ 1


def infonce_loss(
    features: Tensor,
    pairing: np.ndarray,
    temperature: float,
    include_positive_in_denominator: bool = False,
) -> Tensor:
    """Contrastive loss summed over all 2P anchors.

    Per anchor: -log( exp(cos(anchor, positive)/t) / sum over its
    negatives of exp(cos/t) ). The positive is excluded from the
    denominator unless the canonical-variant flag is set; with only
    negatives below the value can go negative.
    """
    n = features.data.shape[0]
    if n < 4:
        raise ConfigError(f"contrastive batch needs >= 4 views, got {n}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    if (
        pairing.shape != (n,)
        or np.any(pairing == np.arange(n))
        or np.any(pairing[pairing] != np.arange(n))
    ):
        raise ConfigError("pairing must be a fixed-point-free involution over the batch")
    normed = normalize_rows(features)
    sims = ad.mul(ad.matmul(normed, ad.transpose(normed, (1, 0))), 1.0 / temperature)
    mask = np.zeros((n, n))
    mask[np.arange(n), np.arange(n)] = -1e9
    if not include_positive_in_denominator:
        mask[np.arange(n), pairing] = -1e9
    denom = ad.logsumexp(ad.add(sims, Tensor(mask)), axis=-1)
    pos_onehot = np.zeros((n, n))
    pos_onehot[np.arange(n), pairing] = 1.0
    pos = ad.tsum(ad.mul(sims, Tensor(pos_onehot)), axis=-1)
    return ad.tsum(ad.sub(denom, pos))


def _pair_batches(n_pairs: int, pairs_per_batch: int, order: np.ndarray):
    for i in range(0, n_pairs, pairs_per_batch):
        chunk = order[i : i + pairs_per_batch]
        if len(chunk) >= 2:
            yield chunk


def finetune(
    model: EncoderModel, sentences: list[str], cfg: TrainConfig
) -> tuple[EncoderModel, list[float]]:
    """Contrastive fine-tuning pass; returns (updated copy, per-step losses)."""
    cfg.validate()
    model = model.copy()
    model.config.dropout = cfg.dropout
    spec = LayerSpec(n_layers=cfg.n_feature_layers)
    root = Rng(cfg.seed)
    dataset = build_pair_dataset(sentences, model.vocab, root.child(0), cfg)
    if len(dataset) < 4:
        raise DataError(f"pair dataset has {len(dataset) // 2} pairs; need at least 2")
    pairs = [(dataset[i].instance, dataset[i + 1].instance) for i in range(0, len(dataset), 2)]
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    mask_rng, drop_rng = root.child(1), root.child(2)
    shuffle_rng = root.child(3)
    losses: list[float] = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(pairs))
        for chunk in _pair_batches(len(pairs), cfg.batch_size // 2, order):
            views: list[TokenizedInstance] = []
            for j in chunk:
                a, b = pairs[j]
                views.append(apply_span_mask(a, cfg.mask_k, mask_rng, model.vocab))
                views.append(b)
            opt.zero_grad()
            states, _ = encode_batch(model, views, mode="train", rng=drop_rng)
            feats = wic_features_from_states(states, views, spec)
            loss = infonce_loss(
                feats, partner_indices(len(views)), cfg.temperature,
                cfg.include_positive_in_denominator,
            )
            loss.backward()
            opt.step()
            losses.append(loss.item())
    return model, losses


# -- MLM pretraining --------------------------------------------------------------

def _mlm_corrupt(
    instances: list[TokenizedInstance], vocab: Vocab, mask_prob: float, rng: Rng
) -> tuple[list[TokenizedInstance], list[list[tuple[int, int]]]]:
    """BERT-style corruption. Returns corrupted views and per-instance
    (position, original id) prediction targets."""
    content_ids = vocab.content_ids
    out_instances, out_targets = [], []
    for inst in instances:
        positions = [
            i for i, t in enumerate(inst.token_ids) if not vocab.is_special(t)
        ]
        targets: list[tuple[int, int]] = []
        ids = list(inst.token_ids)
        if positions:
            n_sel = max(1, round(mask_prob * len(positions)))
            sel = rng.choice(len(positions), size=n_sel)
            for si in sel:
                pos = positions[int(si)]
                targets.append((pos, ids[pos]))
                u = float(rng.uniform())
                if u < 0.8:
                    ids[pos] = MASK_ID
                elif u < 0.9:
                    ids[pos] = int(content_ids[int(rng.integers(0, len(content_ids)))])
        out_instances.append(inst.with_ids(tuple(ids)))
        out_targets.append(targets)
    return out_instances, out_targets


def _mlm_loss(
    model: EncoderModel,
    views: list[TokenizedInstance],
    targets: list[list[tuple[int, int]]],
    rng: Rng,
    mode: str = "train",
) -> Tensor:
    states, _ = encode_batch(model, views, mode=mode, rng=rng)
    logits = mlm_logits(model, states[-1])
    log_probs = ad.sub(logits, ad.logsumexp(logits, axis=-1, keepdims=True))
    b, t, v = logits.data.shape
    onehot = np.zeros((b, t, v))
    n_sel = 0
    for i, tgt in enumerate(targets):
        for pos, orig in tgt:
            onehot[i, pos, orig] = 1.0
            n_sel += 1
    if n_sel == 0:
        raise DataError("MLM batch selected no prediction targets")
    return ad.mul(ad.tsum(ad.mul(log_probs, Tensor(onehot))), -1.0 / n_sel)


def mlm_pretrain(
    model: EncoderModel, sentences: list[str], cfg: MlmConfig
) -> tuple[EncoderModel, list[float]]:
    """Masked-token pretraining; returns (updated copy, per-step losses)."""
    cfg.validate()
    model = model.copy()
    seen: set[str] = set()
    unique = [s for s in sentences if not (s in seen or seen.add(s))]
    instances = [encode_plain_instance(s, model.vocab) for s in unique]
    if not instances:
        raise DataError("MLM corpus is empty")
    root = Rng(cfg.seed)
    corrupt_rng, drop_rng, shuffle_rng = root.child(0), root.child(1), root.child(2)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses: list[float] = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(instances))
        for i in range(0, len(instances), cfg.batch_size):
            batch = [instances[j] for j in order[i : i + cfg.batch_size]]
            views, targets = _mlm_corrupt(batch, model.vocab, cfg.mask_prob, corrupt_rng)
            if not any(targets):
                continue
            opt.zero_grad()
            loss = _mlm_loss(model, views, targets, drop_rng)
            loss.backward()
            opt.step()
            losses.append(loss.item())
    return model, losses


def mlm_accuracy(
    model: EncoderModel, sentences: list[str], mask_prob: float = 0.15, seed: int = 0
) -> float:
    """Top-1 masked-token accuracy under a fresh corruption draw."""
    instances = [encode_plain_instance(s, model.vocab) for s in sentences]
    rng = Rng(seed).child(0)
    views, targets = _mlm_corrupt(instances, model.vocab, mask_prob, rng)
    correct = total = 0
    with ad.no_grad():
        for i in range(0, len(views), 64):
            chunk, chunk_t = views[i : i + 64], targets[i : i + 64]
            states, _ = encode_batch(model, chunk, mode="inference")
            logits = mlm_logits(model, states[-1]).data
            for j, tgt in enumerate(chunk_t):
                for pos, orig in tgt:
                    total += 1
                    correct += int(np.argmax(logits[j, pos]) == orig)
    if total == 0:
        raise DataError("no prediction targets sampled")
    return correct / total


def write_loss_csv(path, losses: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, f"{loss:.10g}"])
