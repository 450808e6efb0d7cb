"""Target-word feature extraction shared by training and evaluation.

The word-in-context vector for a tokenized instance is the mean over the
top n encoder layers of the mean over the target-span token states. The
same function backs the contrastive loss (differentiably, over a batch)
and all downstream evaluations, so train-time and inference-time
representations can only differ through dropout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderModel, encode_batch
from .errors import ConfigError, DataError, DegenerateVectorError
from .rng import Rng
from .tokenizer import TokenizedInstance

logger = logging.getLogger("wicrep")


@dataclass(frozen=True)
class LayerSpec:
    """Which encoder states feed the feature.

    n_layers: how many of the topmost transformer layers to average.
    include_embedding: also admit the embedding output (state 0) to the
        pool the top-n are drawn from.
    probe_layer: if set, use exactly this state index (0 = embedding
        output, 1..L = transformer layers) and ignore the other fields.
    """

    n_layers: int = 4
    include_embedding: bool = False
    probe_layer: int | None = None

    def validate(self) -> None:
        if self.probe_layer is None and self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")


def select_state_indices(spec: LayerSpec, n_encoder_layers: int) -> list[int]:
    """Indices into the L+1 state list that the feature averages over."""
    spec.validate()
    if spec.probe_layer is not None:
        if not 0 <= spec.probe_layer <= n_encoder_layers:
            raise ConfigError(
                f"probe_layer={spec.probe_layer} outside 0..{n_encoder_layers}"
            )
        return [spec.probe_layer]
    pool = list(range(0 if spec.include_embedding else 1, n_encoder_layers + 1))
    if spec.n_layers > len(pool):
        logger.warning(
            "layer spec asks for top %d of %d available states; clamping",
            spec.n_layers, len(pool),
        )
    return pool[-min(spec.n_layers, len(pool)):]


def _span_weights(instances: list[TokenizedInstance], tmax: int) -> np.ndarray:
    w = np.zeros((len(instances), tmax, 1))
    for i, inst in enumerate(instances):
        a, b = inst.span
        w[i, a : b + 1, 0] = 1.0 / (b - a + 1)
    return w


def wic_features_from_states(
    states: list[Tensor], instances: list[TokenizedInstance], spec: LayerSpec
) -> Tensor:
    """Differentiable [B, d] feature matrix from batch encoder states."""
    idx = select_state_indices(spec, len(states) - 1)
    w = Tensor(_span_weights(instances, states[0].data.shape[1]))
    acc = None
    for i in idx:
        span_mean = ad.tsum(ad.mul(states[i], w), axis=1)
        acc = span_mean if acc is None else ad.add(acc, span_mean)
    return ad.mul(acc, 1.0 / len(idx))


def extract_wic_batch(
    model: EncoderModel,
    instances: list[TokenizedInstance],
    spec: LayerSpec = LayerSpec(),
    mode: str = "inference",
    rng: Rng | None = None,
) -> Tensor:
    if mode == "inference":
        with ad.no_grad():
            states, _ = encode_batch(model, instances, mode=mode, rng=rng)
            return wic_features_from_states(states, instances, spec)
    states, _ = encode_batch(model, instances, mode=mode, rng=rng)
    return wic_features_from_states(states, instances, spec)


def extract_wic(
    model: EncoderModel,
    instance: TokenizedInstance,
    spec: LayerSpec = LayerSpec(),
    mode: str = "inference",
    rng: Rng | None = None,
) -> np.ndarray:
    return extract_wic_batch(model, [instance], spec, mode, rng).data[0]


def normalize_rows(features: Tensor) -> Tensor:
    """Unit-normalize each row; zero rows are rejected, not silently kept."""
    norms_sq = ad.tsum(ad.mul(features, features), axis=-1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise DegenerateVectorError("cannot normalize a zero vector")
    return ad.div(features, ad.sqrt(norms_sq))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


# -- embedding dump -------------------------------------------------------------

def write_embeddings(path, records: list[dict]) -> None:
    """One JSON object per line: {"text", "target" ("a:b" chars), "vector"}."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            row = {
                "text": rec["text"],
                "target": rec["target"],
                "vector": [float(x) for x in rec["vector"]],
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_embeddings(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: not valid JSON: {e}") from e
            if not isinstance(row, dict) or not {"text", "target", "vector"} <= row.keys():
                raise DataError(f"{path}:{lineno}: missing text/target/vector fields")
            vec = row["vector"]
            if not isinstance(vec, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec
            ):
                raise DataError(f"{path}:{lineno}: vector must be a list of numbers")
            records.append({
                "text": row["text"],
                "target": row["target"],
                "vector": np.asarray(vec, dtype=np.float64),
            })
    return records
