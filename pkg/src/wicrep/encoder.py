"""Small post-layer-norm transformer encoder exposing all layer states.

Dropout is applied in train mode at the standard sites (embedding sum,
attention probabilities, attention output, FFN output), drawing masks
from an explicitly passed Rng, which makes two-view augmentation noise
reproducible. Inference mode is a pure function of (parameters, input).

Checkpoints are a single self-describing file: a JSON header line with
the architecture config, vocab, vocab hash and format version, followed
by the named parameter arrays as little-endian float32 in declared
order. Save/load round-trips bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .rng import Rng
from .tokenizer import MAX_SEQ_LEN, PAD_ID, TokenizedInstance, Vocab

CHECKPOINT_FORMAT_VERSION = 1
ATTN_MASK_NEG = -1e9


@dataclass
class EncoderConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    dropout: float = 0.1
    vocab_size: int = 0
    max_positions: int = MAX_SEQ_LEN + 2

    def validate(self) -> None:
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} must be positive and divisible by n_heads={self.n_heads}"
            )
        if self.d_ffn < 1:
            raise ConfigError(f"d_ffn must be >= 1, got {self.d_ffn}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be set before model construction")
        if self.max_positions < 3:
            raise ConfigError("max_positions too small for [CLS] x [SEP]")


def parameter_names(cfg: EncoderConfig) -> list[str]:
    """Declared checkpoint order of all parameter arrays."""
    names = ["tok_emb", "pos_emb", "emb_ln_g", "emb_ln_b"]
    for i in range(cfg.n_layers):
        names += [
            f"l{i}.wq", f"l{i}.bq", f"l{i}.wk", f"l{i}.bk",
            f"l{i}.wv", f"l{i}.bv", f"l{i}.wo", f"l{i}.bo",
            f"l{i}.attn_ln_g", f"l{i}.attn_ln_b",
            f"l{i}.w1", f"l{i}.b1", f"l{i}.w2", f"l{i}.b2",
            f"l{i}.ffn_ln_g", f"l{i}.ffn_ln_b",
        ]
    names.append("mlm_bias")
    return names


def parameter_shape(name: str, cfg: EncoderConfig) -> tuple[int, ...]:
    d, f, v, p = cfg.d_model, cfg.d_ffn, cfg.vocab_size, cfg.max_positions
    base = name.split(".")[-1]
    return {
        "tok_emb": (v, d), "pos_emb": (p, d),
        "emb_ln_g": (d,), "emb_ln_b": (d,),
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "attn_ln_g": (d,), "attn_ln_b": (d,),
        "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        "ffn_ln_g": (d,), "ffn_ln_b": (d,),
        "mlm_bias": (v,),
    }[base]


def parameter_count(cfg: EncoderConfig) -> int:
    return sum(math.prod(parameter_shape(n, cfg)) for n in parameter_names(cfg))


class EncoderModel:
    """Parameters plus config and the vocabulary they were built against."""

    def __init__(self, config: EncoderConfig, vocab: Vocab, params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def copy(self) -> "EncoderModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return EncoderModel(EncoderConfig(**asdict(self.config)), self.vocab, params)


def init_model(config: EncoderConfig, vocab: Vocab, seed: int) -> EncoderModel:
    """Deterministic init: weights N(0, 0.02^2), biases 0, layer-norm (1, 0)."""
    config = EncoderConfig(**{**asdict(config), "vocab_size": len(vocab)})
    config.validate()
    rng = Rng(seed).child(0)
    params: dict[str, Tensor] = {}
    for name in parameter_names(config):
        shape = parameter_shape(name, config)
        base = name.split(".")[-1]
        if base.startswith("b") or base.endswith("_b") or base == "mlm_bias":
            data = np.zeros(shape)
        elif base.endswith("_g"):
            data = np.ones(shape)
        else:
            data = rng.normal(size=shape, std=0.02)
        params[name] = Tensor(data, requires_grad=True)
    return EncoderModel(config, vocab, params)


def _validate_instances(model: EncoderModel, instances: list[TokenizedInstance]) -> None:
    cfg = model.config
    for inst in instances:
        if len(inst.token_ids) > cfg.max_positions:
            raise DataError(
                f"input of {len(inst.token_ids)} tokens exceeds max_positions={cfg.max_positions}"
            )
        if max(inst.token_ids) >= cfg.vocab_size:
            raise DataError("token id outside the model vocabulary")


def encode_batch(
    model: EncoderModel,
    instances: list[TokenizedInstance],
    mode: str = "inference",
    rng: Rng | None = None,
) -> tuple[list[Tensor], np.ndarray]:
    """Forward pass over a padded batch.

    Returns (states, lengths): L+1 state tensors of shape [B, T, d]
    (embedding output first, then each layer), and per-instance lengths.
    Padded key positions are masked out of the attention softmax, so
    real-token states match an unpadded forward bit for bit.
    """
    if mode not in ("train", "inference"):
        raise ConfigError(f"mode must be 'train' or 'inference', got {mode!r}")
    train = mode == "train"
    if train and rng is None:
        raise ConfigError("train mode requires an rng for dropout")
    _validate_instances(model, instances)

    cfg, p = model.config, model.params
    lengths = np.array([len(inst.token_ids) for inst in instances], dtype=np.int64)
    tmax = int(lengths.max())
    ids = np.full((len(instances), tmax), PAD_ID, dtype=np.int64)
    for i, inst in enumerate(instances):
        ids[i, : lengths[i]] = inst.token_ids

    valid = (np.arange(tmax)[None, :] < lengths[:, None]).astype(np.float64)
    attn_bias = Tensor(((1.0 - valid) * ATTN_MASK_NEG)[:, None, None, :])

    drop = cfg.dropout
    h = cfg.n_heads
    dh = cfg.d_model // h
    scale = 1.0 / math.sqrt(dh)
    b, t = ids.shape

    x = ad.add(ad.embedding(p["tok_emb"], ids), ad.embedding(p["pos_emb"], np.arange(t)))
    x = ad.layer_norm(x, p["emb_ln_g"], p["emb_ln_b"])
    x = ad.dropout(x, drop, rng, train)
    states = [x]
    for i in range(cfg.n_layers):
        l = f"l{i}"
        q = ad.add(ad.matmul(x, p[f"{l}.wq"]), p[f"{l}.bq"])
        k = ad.add(ad.matmul(x, p[f"{l}.wk"]), p[f"{l}.bk"])
        v = ad.add(ad.matmul(x, p[f"{l}.wv"]), p[f"{l}.bv"])
        q = ad.transpose(ad.reshape(q, (b, t, h, dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (b, t, h, dh)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(v, (b, t, h, dh)), (0, 2, 1, 3))
        scores = ad.add(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale), attn_bias)
        probs = ad.softmax(scores, axis=-1)
        probs = ad.dropout(probs, drop, rng, train)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, t, cfg.d_model))
        attn_out = ad.add(ad.matmul(ctx, p[f"{l}.wo"]), p[f"{l}.bo"])
        attn_out = ad.dropout(attn_out, drop, rng, train)
        x = ad.layer_norm(ad.add(x, attn_out), p[f"{l}.attn_ln_g"], p[f"{l}.attn_ln_b"])
        ffn = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, p[f"{l}.w1"]), p[f"{l}.b1"])),
                               p[f"{l}.w2"]), p[f"{l}.b2"])
        ffn = ad.dropout(ffn, drop, rng, train)
        x = ad.layer_norm(ad.add(x, ffn), p[f"{l}.ffn_ln_g"], p[f"{l}.ffn_ln_b"])
        states.append(x)
    return states, lengths


def encode(
    model: EncoderModel,
    instance: TokenizedInstance,
    mode: str = "inference",
    rng: Rng | None = None,
) -> list[np.ndarray]:
    """Layer states for a single instance: L+1 arrays of shape [T, d]."""
    if mode == "inference":
        with ad.no_grad():
            states, _ = encode_batch(model, [instance], mode, rng)
    else:
        states, _ = encode_batch(model, [instance], mode, rng)
    return [s.data[0] for s in states]


def mlm_logits(model: EncoderModel, top_state: Tensor) -> Tensor:
    """Vocabulary logits from the top layer; output embedding tied to tok_emb."""
    p = model.params
    return ad.add(ad.matmul(top_state, ad.transpose(p["tok_emb"], (1, 0))), p["mlm_bias"])


# -- checkpoint serialization ---------------------------------------------------

def save_checkpoint(model: EncoderModel, path) -> None:
    names = parameter_names(model.config)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "wicrep-encoder",
        "config": asdict(model.config),
        "vocab": model.vocab.id_to_token,
        "vocab_hash": model.vocab.content_hash(),
        "params": [{"name": n, "shape": list(parameter_shape(n, model.config))} for n in names],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        f.write(b"\n")
        for n in names:
            f.write(np.ascontiguousarray(model.params[n].data, dtype="<f4").tobytes())


def load_checkpoint(path) -> EncoderModel:
    try:
        with open(path, "rb") as f:
            header_line = f.readline()
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"malformed checkpoint header in {path}: {e}") from e
    if header.get("kind") != "wicrep-encoder":
        raise DataError(f"{path} is not an encoder checkpoint")
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {header.get('format_version')}")
    cfg = EncoderConfig(**header["config"])
    cfg.validate()
    vocab = Vocab(header["vocab"][5:])
    if vocab.id_to_token != header["vocab"]:
        raise DataError("checkpoint vocab does not start with the standard special tokens")
    if vocab.content_hash() != header["vocab_hash"]:
        raise DataError("checkpoint vocab hash mismatch")
    if cfg.vocab_size != len(vocab):
        raise DataError(
            f"config vocab_size={cfg.vocab_size} disagrees with stored vocab of {len(vocab)}"
        )
    params: dict[str, Tensor] = {}
    offset = 0
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if shape != parameter_shape(name, cfg):
            raise DataError(f"checkpoint parameter {name} has unexpected shape {shape}")
        nbytes = 4 * math.prod(shape)
        if offset + nbytes > len(blob):
            raise DataError(f"checkpoint truncated in parameter {name}")
        arr = np.frombuffer(blob, dtype="<f4", count=math.prod(shape), offset=offset)
        params[name] = Tensor(arr.astype(np.float64).reshape(shape), requires_grad=True)
        offset += nbytes
    if offset != len(blob):
        raise DataError("checkpoint has trailing bytes after the declared parameters")
    if set(n["name"] for n in header["params"]) != set(parameter_names(cfg)):
        raise DataError("checkpoint parameter list does not match the architecture")
    return EncoderModel(cfg, vocab, params)
