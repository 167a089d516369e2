"""Model assembly: shared encoder, per-task attention, per-task classifiers.

The same code path serves the joint two-task network and the single-task
baselines; a baseline is just the network with one head and one loss term.
Checkpoints are a bit-exact binary format embedding the config, the label
vocabularies, and the token vocabulary so a saved model is self-contained.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attnpool, encoder
from .attnpool import task_attention
from .encoder import EncoderConfig, encode_batch
from .preprocess import RESERVED_TOKENS, TokenSequence, Vocabulary, stack_sequences
from .tensor import (
    Tensor,
    add,
    concat_last,
    cross_entropy_from_logits,
    init_parameters,
    matmul,
    scale,
    tanh,
)

MODE_MTL = "mtl"
MODE_COUNTRY = "country"
MODE_PROVINCE = "province"
MODES = (MODE_MTL, MODE_COUNTRY, MODE_PROVINCE)

CHECKPOINT_MAGIC = b"MTLD"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or inconsistent with its config."""


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    n_countries: int = 2
    n_provinces: int = 2
    hidden_size: int = 0  # 0 resolves to encoder.d_model
    mode: str = MODE_MTL
    loss_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.hidden_size == 0:
            self.hidden_size = self.encoder.d_model
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be positive")
        if self.has_country and self.n_countries < 2:
            raise ValueError("n_countries must be >= 2 when the country head exists")
        if self.has_province and self.n_provinces < 2:
            raise ValueError("n_provinces must be >= 2 when the province head exists")
        w_c, w_p = self.loss_weights
        if w_c < 0 or w_p < 0:
            raise ValueError("loss_weights must be nonnegative")
        self.loss_weights = (float(w_c), float(w_p))

    @property
    def has_country(self) -> bool:
        return self.mode in (MODE_MTL, MODE_COUNTRY)

    @property
    def has_province(self) -> bool:
        return self.mode in (MODE_MTL, MODE_PROVINCE)

    def tasks(self) -> list[tuple[str, int]]:
        out = []
        if self.has_country:
            out.append(("country", self.n_countries))
        if self.has_province:
            out.append(("province", self.n_provinces))
        return out


@dataclass
class LossReport:
    """Per-task and combined losses as 64-bit floats."""

    country: float
    province: float
    total: float


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    d = config.encoder.d_model
    specs = encoder.param_specs(config.encoder)
    for task, classes in config.tasks():
        specs.extend(attnpool.param_specs(d, config.encoder.l_max, task))
        specs.append((f"{task}_cls.w1", (2 * d, config.hidden_size), "normal"))
        specs.append((f"{task}_cls.b1", (config.hidden_size,), "zeros"))
        specs.append((f"{task}_cls.w2", (config.hidden_size, classes), "normal"))
        specs.append((f"{task}_cls.b2", (classes,), "zeros"))
    return specs


def init_model_params(config: ModelConfig, global_seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Name-seeded init; parameters shared between modes start bitwise equal."""
    return init_parameters(param_specs(config), global_seed, dtype)


class MtlModel:
    """Encoder + per-task attention pooling + per-task two-layer classifiers."""

    def __init__(
        self,
        config: ModelConfig,
        global_seed: int = 0,
        dtype=np.float32,
        params: dict[str, Tensor] | None = None,
    ):
        self.config = config
        self.global_seed = global_seed
        self.params = params if params is not None else init_model_params(config, global_seed, dtype)

    def forward(
        self,
        seqs: Sequence[TokenSequence],
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor | None, Tensor | None]:
        """Return (country logits, province logits); absent heads yield None."""
        enc = encode_batch(seqs, self.params, self.config.encoder, train_mode, rng)
        _, mask = stack_sequences(seqs)
        logits: dict[str, Tensor] = {}
        for task, _ in self.config.tasks():
            att = task_attention(
                enc.h, mask, self.params[f"{task}_attn.w_a"], self.params[f"{task}_attn.w_alpha"]
            )
            z = concat_last(enc.pooled, att.v)
            hidden = tanh(add(matmul(z, self.params[f"{task}_cls.w1"]), self.params[f"{task}_cls.b1"]))
            logits[task] = add(
                matmul(hidden, self.params[f"{task}_cls.w2"]), self.params[f"{task}_cls.b2"]
            )
        return logits.get("country"), logits.get("province")


def compute_loss(
    logits_country: Tensor | None,
    logits_province: Tensor | None,
    labels_country: np.ndarray | None,
    labels_province: np.ndarray | None,
    config: ModelConfig,
) -> tuple[Tensor, LossReport]:
    """Weighted sum of per-task mean cross-entropies.

    Returns the differentiable total plus a float report; a missing head
    contributes exactly zero to both.
    """
    w_c, w_p = config.loss_weights
    total: Tensor | None = None
    loss_c = 0.0
    loss_p = 0.0
    if config.has_country:
        if logits_country is None or labels_country is None:
            raise ValueError("country head present but logits or labels missing")
        ce = cross_entropy_from_logits(logits_country, labels_country)
        loss_c = ce.item()
        total = scale(ce, w_c)
    if config.has_province:
        if logits_province is None or labels_province is None:
            raise ValueError("province head present but logits or labels missing")
        ce = cross_entropy_from_logits(logits_province, labels_province)
        loss_p = ce.item()
        term = scale(ce, w_p)
        total = term if total is None else add(total, term)
    assert total is not None
    return total, LossReport(country=loss_c, province=loss_p, total=w_c * loss_c + w_p * loss_p)


def predict(logits: Tensor | np.ndarray) -> np.ndarray:
    """Argmax class ids per row; ties resolve to the lowest index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(arr, axis=-1)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: MtlModel
    country_labels: list[str]
    province_labels: list[str]
    vocab: Vocabulary


def _config_document(
    config: ModelConfig,
    country_labels: Sequence[str],
    province_labels: Sequence[str],
    vocab: Vocabulary,
) -> bytes:
    doc = {
        "model": {
            "mode": config.mode,
            "n_countries": config.n_countries,
            "n_provinces": config.n_provinces,
            "hidden_size": config.hidden_size,
            "loss_weights": list(config.loss_weights),
            "encoder": {
                "d_model": config.encoder.d_model,
                "n_layers": config.encoder.n_layers,
                "n_heads": config.encoder.n_heads,
                "d_ff": config.encoder.d_ff,
                "l_max": config.encoder.l_max,
                "vocab_size": config.encoder.vocab_size,
                "dropout_rate": config.encoder.dropout_rate,
            },
        },
        "country_labels": list(country_labels),
        "province_labels": list(province_labels),
        "vocab": list(vocab.id_to_token),
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def save_checkpoint(
    path: str | Path,
    model: MtlModel,
    country_labels: Sequence[str],
    province_labels: Sequence[str],
    vocab: Vocabulary,
) -> None:
    """Write magic, version, config document, then parameters sorted by name."""
    doc = _config_document(model.config, country_labels, province_labels, vocab)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(doc)))
        f.write(doc)
        for name in sorted(model.params):
            data = model.params[name].data
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint truncated")
    return buf


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Rebuild a model; any corruption or shape mismatch raises CheckpointError."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (doc_len,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            doc = json.loads(_read_exact(f, doc_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("corrupt config document") from exc
        try:
            m = doc["model"]
            config = ModelConfig(
                encoder=EncoderConfig(**m["encoder"]),
                n_countries=m["n_countries"],
                n_provinces=m["n_provinces"],
                hidden_size=m["hidden_size"],
                mode=m["mode"],
                loss_weights=tuple(m["loss_weights"]),
            )
            country_labels = list(doc["country_labels"])
            province_labels = list(doc["province_labels"])
            tokens = list(doc["vocab"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid config document: {exc}") from exc
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise CheckpointError("vocabulary must start with the reserved tokens")
        if len(tokens) != config.encoder.vocab_size:
            raise CheckpointError(
                f"vocabulary size {len(tokens)} does not match config {config.encoder.vocab_size}"
            )
        params: dict[str, Tensor] = {}
        expected = {name: shape for name, shape, _ in param_specs(config)}
        for _ in range(len(expected)):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
            if name not in expected:
                raise CheckpointError(f"unexpected parameter {name!r}")
            if tuple(shape) != expected[name]:
                raise CheckpointError(
                    f"parameter {name!r} has shape {tuple(shape)}, config expects {expected[name]}"
                )
            params[name] = Tensor(data.astype(np.float32), requires_grad=True)
        if f.read(1):
            raise CheckpointError("trailing bytes after last parameter")
    if set(params) != set(expected):
        raise CheckpointError("checkpoint is missing parameters")
    vocab = Vocabulary(
        token_to_id={tok: i + 3 for i, tok in enumerate(tokens[3:])},
        id_to_token=tokens,
        min_frequency=1,
        max_size=len(tokens),
    )
    model = MtlModel(config, params=params)
    return Checkpoint(model=model, country_labels=country_labels, province_labels=province_labels, vocab=vocab)
