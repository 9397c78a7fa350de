"""Time-series transformer for single-step forecasting.

The architecture maps a window of T observations with d features each to
one predicted scalar: a learned linear embedding into model_dim, optional
sinusoidal position features, one or more blocks of multi-head

self-attention followed by LayerNorm and a position-wise feed-forward
network, then a linear readout of the last time step.

Two forward paths exist and are kept bitwise identical: the plain array
functions here (used for inference and evaluation) and the taped path in
:func:`build_forward` (used for training and gradient checks). Both call
the same kernels in the same order.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor
from .autodiff import Tape, Var
from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    ConfigError,
    DimensionError,
    NumericError,
)
from .fileio import atomic_write_bytes, crc64
from .tensor import RngState

__all__ = [
    "ModelConfig",
    "ModelParams",
    "AttentionRecord",
    "init_params",
    "positional_encoding",
    "embed",
    "attention_head",
    "multi_head",
    "layer_norm",
    "ffn",
    "forward",
    "build_forward",
    "param_items",
    "save_params",
    "load_params",
    "write_attention_csvs",
]

LAYER_NORM_EPS = 1e-5


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``ffn_hidden`` defaults to 4x the model dimension when left unset.
    ``use_residual`` is off by default: the base block is plain
    FFN(LayerNorm(attention_out)) with no skip connections.
    """

    window_len: int
    input_dim: int
    model_dim: int = 32
    n_heads: int = 2
    ffn_hidden: int | None = None
    n_blocks: int = 1
    use_positional_encoding: bool = True
    use_residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.ffn_hidden is None:
            self.ffn_hidden = 4 * self.model_dim
        if self.window_len < 1:
            raise ConfigError(f"window_len must be >= 1, got {self.window_len}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.model_dim < 1:
            raise ConfigError(f"model_dim must be >= 1, got {self.model_dim}")
        if self.n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.model_dim % self.n_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.ffn_hidden < 1:
            raise ConfigError(f"ffn_hidden must be >= 1, got {self.ffn_hidden}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


@dataclass
class HeadParams:
    w_q: np.ndarray  # head_dim x model_dim
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class BlockParams:
    heads: list[HeadParams]
    w_o: np.ndarray       # model_dim x model_dim
    ln_gain: np.ndarray   # model_dim
    ln_bias: np.ndarray
    ffn_w1: np.ndarray    # ffn_hidden x model_dim
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray    # model_dim x ffn_hidden
    ffn_b2: np.ndarray


@dataclass
class ModelParams:
    """All learnable weights, grouped by block and head."""

    w_e: np.ndarray       # model_dim x input_dim
    b_e: np.ndarray       # model_dim
    blocks: list[BlockParams]
    w_y: np.ndarray       # 1 x model_dim
    b_y: np.ndarray       # length-1 vector


@dataclass
class AttentionRecord:
    """Softmax weights of one head in one block: entry [t, t'] is how much
    time step t attends to time step t'."""

    block: int
    head: int
    weights: np.ndarray  # T x T


def param_items(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Flat (name, array) view in the canonical order.

    This order defines the checkpoint layout, the optimizer state layout,
    and the initialization draw order: w_e, b_e, then per block and head the
    q/k/v projections, then the block's output projection, LayerNorm affine
    and FFN weights, and finally the readout.
    """
    items = [("w_e", params.w_e), ("b_e", params.b_e)]
    for b, block in enumerate(params.blocks):
        for h, head in enumerate(block.heads):
            items.append((f"block{b}.head{h}.w_q", head.w_q))
            items.append((f"block{b}.head{h}.w_k", head.w_k))
            items.append((f"block{b}.head{h}.w_v", head.w_v))
        items.append((f"block{b}.w_o", block.w_o))
        items.append((f"block{b}.ln_gain", block.ln_gain))
        items.append((f"block{b}.ln_bias", block.ln_bias))
        items.append((f"block{b}.ffn_w1", block.ffn_w1))
        items.append((f"block{b}.ffn_b1", block.ffn_b1))
        items.append((f"block{b}.ffn_w2", block.ffn_w2))
        items.append((f"block{b}.ffn_b2", block.ffn_b2))
    items.append(("w_y", params.w_y))
    items.append(("b_y", params.b_y))
    return items


def init_params(config: ModelConfig) -> ModelParams:
    """Xavier-uniform matrices, zero biases, identity LayerNorm affine.

    Deterministic given ``config.seed``; matrices are drawn in canonical
    parameter order from one generator.
    """
    rng = RngState(config.seed)
    dp, d, hd = config.model_dim, config.input_dim, config.head_dim
    w_e = tensor.xavier_init(dp, d, rng)
    b_e = np.zeros(dp)
    blocks = []
    for _ in range(config.n_blocks):
        heads = [
            HeadParams(
                w_q=tensor.xavier_init(hd, dp, rng),
                w_k=tensor.xavier_init(hd, dp, rng),
                w_v=tensor.xavier_init(hd, dp, rng),
            )
            for _ in range(config.n_heads)
        ]
        blocks.append(
            BlockParams(
                heads=heads,
                w_o=tensor.xavier_init(dp, dp, rng),
                ln_gain=np.ones(dp),
                ln_bias=np.zeros(dp),
                ffn_w1=tensor.xavier_init(config.ffn_hidden, dp, rng),
                ffn_b1=np.zeros(config.ffn_hidden),
                ffn_w2=tensor.xavier_init(dp, config.ffn_hidden, rng),
                ffn_b2=np.zeros(dp),
            )
        )
    w_y = tensor.xavier_init(1, dp, rng)
    b_y = np.zeros(1)
    return ModelParams(w_e=w_e, b_e=b_e, blocks=blocks, w_y=w_y, b_y=b_y)


def zero_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters (LayerNorm gain included); useful as a null model."""
    params = init_params(config)
    for _, arr in param_items(params):
        arr[...] = 0.0
    return params


# ---------------------------------------------------------------------------
# plain array operations
# ---------------------------------------------------------------------------


def embed(x: np.ndarray, w_e: np.ndarray, b_e: np.ndarray) -> np.ndarray:
    """Per-step linear embedding: row t of the result is w_e @ x_t + b_e."""
    return tensor.add(tensor.matmul(x, w_e.T), b_e)


def positional_encoding(window_len: int, model_dim: int) -> np.ndarray:
    """Sinusoidal position features.

    Entry (t, 2i) is sin(t / 10000^(2i/model_dim)) and entry (t, 2i+1) is
    cos of the same angle, with t counted from 0 inside the window. An odd
    trailing column gets the sin branch.
    """
    if window_len < 1 or model_dim < 1:
        raise DimensionError(
            f"positional_encoding: extents must be >= 1, got {window_len}x{model_dim}"
        )
    steps = np.arange(window_len, dtype=np.float64)
    pe = np.zeros((window_len, model_dim))
    for i in range((model_dim + 1) // 2):
        angles = steps / (10000.0 ** (2.0 * i / model_dim))
        pe[:, 2 * i] = np.sin(angles)
        if 2 * i + 1 < model_dim:
            pe[:, 2 * i + 1] = np.cos(angles)
    return pe


def attention_head(
    h: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One self-attention head over all T time steps (no causal mask).

    Scores are scaled by 1/sqrt(model_dim), the full width of ``h``, not
    by the per-head width. Returns (weighted values [T x head_dim],
    softmax weights [T x T]).
    """
    q = tensor.matmul(h, w_q.T)
    k = tensor.matmul(h, w_k.T)
    v = tensor.matmul(h, w_v.T)
    inv_scale = 1.0 / math.sqrt(h.shape[1])
    weights = tensor.softmax_rows(inv_scale * tensor.matmul(q, k.T))
    return tensor.matmul(weights, v), weights


def multi_head(
    h: np.ndarray,
    heads: list[HeadParams],
    w_o: np.ndarray,
    block: int = 0,
) -> tuple[np.ndarray, list[AttentionRecord]]:
    """Run every head, concatenate their outputs, and mix with w_o."""
    outputs = []
    records = []
    for i, head in enumerate(heads):
        out, weights = attention_head(h, head.w_q, head.w_k, head.w_v)
        outputs.append(out)
        records.append(AttentionRecord(block=block, head=i, weights=weights))
    return tensor.matmul(tensor.concat_cols(outputs), w_o), records


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYER_NORM_EPS
) -> np.ndarray:
    """Row-wise LayerNorm with learned affine; population variance."""
    return tensor.layer_norm_rows(x, gain, bias, eps)[0]


def ffn(
    x: np.ndarray,
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
) -> np.ndarray:
    """Position-wise two-layer network: ReLU(x w1^T + b1) w2^T + b2."""
    hidden = np.maximum(tensor.add(tensor.matmul(x, w1.T), b1), 0.0)
    return tensor.add(tensor.matmul(hidden, w2.T), b2)


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values first appeared at stage: {stage}")


def forward(
    x: np.ndarray, params: ModelParams, config: ModelConfig
) -> tuple[float, list[AttentionRecord]]:
    """Predict the next value from one window.

    ``x`` must be [window_len x input_dim]. Returns the scalar prediction
    and the attention weights of every block and head. Raises
    NumericError naming the first stage that produced a non-finite value.
    """
    x = tensor.as_tensor(x)
    expected = (config.window_len, config.input_dim)
    if x.shape != expected:
        raise DimensionError(f"forward: input shape {x.shape}, expected {expected}")
    h = embed(x, params.w_e, params.b_e)
    _check_finite(h, "embedding")
    if config.use_positional_encoding:
        h = tensor.add(h, positional_encoding(config.window_len, config.model_dim))
        _check_finite(h, "positional encoding")
    records: list[AttentionRecord] = []
    for b, block in enumerate(params.blocks):
        attended, recs = multi_head(h, block.heads, block.w_o, block=b)
        records.extend(recs)
        if config.use_residual:
            attended = tensor.add(attended, h)
        _check_finite(attended, f"block {b} attention")
        normed = layer_norm(attended, block.ln_gain, block.ln_bias)
        _check_finite(normed, f"block {b} layer norm")
        transformed = ffn(normed, block.ffn_w1, block.ffn_b1, block.ffn_w2, block.ffn_b2)
        if config.use_residual:
            h = tensor.add(transformed, normed)
        else:
            h = transformed
        _check_finite(h, f"block {b} ffn")
    last = h[config.window_len - 1 : config.window_len, :]
    y = tensor.add(tensor.matmul(last, params.w_y.T), params.b_y)
    _check_finite(y, "readout")
    return float(y[0, 0]), records


# ---------------------------------------------------------------------------
# taped forward (training / gradient checking)
# ---------------------------------------------------------------------------


def make_param_vars(tape: Tape, params: ModelParams) -> dict[str, Var]:
    """Wrap every parameter as a grad-requiring leaf on ``tape``."""
    return {name: tape.leaf(arr, requires_grad=True) for name, arr in param_items(params)}


def build_forward(
    tape: Tape,
    x: Var,
    leaves: dict[str, Var],
    config: ModelConfig,
) -> tuple[Var, list[AttentionRecord]]:
    """Record the full forward pass on ``tape``; mirrors :func:`forward`."""
    h = tape.add(tape.matmul(x, leaves["w_e"], transpose_b=True), leaves["b_e"])
    if config.use_positional_encoding:
        pe = tape.leaf(positional_encoding(config.window_len, config.model_dim))
        h = tape.add(h, pe)
    inv_scale = 1.0 / math.sqrt(config.model_dim)
    records: list[AttentionRecord] = []
    for b in range(config.n_blocks):
        head_outputs = []
        for i in range(config.n_heads):
            prefix = f"block{b}.head{i}"
            q = tape.matmul(h, leaves[f"{prefix}.w_q"], transpose_b=True)
            k = tape.matmul(h, leaves[f"{prefix}.w_k"], transpose_b=True)
            v = tape.matmul(h, leaves[f"{prefix}.w_v"], transpose_b=True)
            weights = tape.softmax_rows(tape.scale(tape.matmul(q, k, transpose_b=True), inv_scale))
            records.append(AttentionRecord(block=b, head=i, weights=weights.value))
            head_outputs.append(tape.matmul(weights, v))
        attended = tape.matmul(tape.concat_cols(head_outputs), leaves[f"block{b}.w_o"])
        if config.use_residual:
            attended = tape.add(attended, h)
        normed = tape.layer_norm(
            attended, leaves[f"block{b}.ln_gain"], leaves[f"block{b}.ln_bias"], LAYER_NORM_EPS
        )
        hidden = tape.relu(
            tape.add(tape.matmul(normed, leaves[f"block{b}.ffn_w1"], transpose_b=True),
                     leaves[f"block{b}.ffn_b1"])
        )
        transformed = tape.add(
            tape.matmul(hidden, leaves[f"block{b}.ffn_w2"], transpose_b=True),
            leaves[f"block{b}.ffn_b2"],
        )
        if config.use_residual:
            h = tape.add(transformed, normed)
        else:
            h = transformed
    last = tape.take_row(h, config.window_len - 1)
    y = tape.add(tape.matmul(last, leaves["w_y"], transpose_b=True), leaves["b_y"])
    return y, records


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TSTM"
CHECKPOINT_VERSION = 1

_CONFIG_KEYS = (
    "window_len",
    "input_dim",
    "model_dim",
    "n_heads",
    "ffn_hidden",
    "n_blocks",
    "use_positional_encoding",
    "use_residual",
    "seed",
)


def _config_block(config: ModelConfig, extra: dict[str, str]) -> bytes:
    lines = []
    for key in _CONFIG_KEYS:
        value = getattr(config, key)
        if isinstance(value, bool):
            value = int(value)
        lines.append(f"{key}={value}")
    for key in sorted(extra):
        if key in _CONFIG_KEYS:
            raise ConfigError(f"extra checkpoint key {key!r} collides with a config key")
        value = extra[key]
        if "=" in key or "\n" in key or "\n" in value:
            raise ConfigError(f"extra checkpoint entry {key!r} must be '='- and newline-free")
        lines.append(f"{key}={value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(block: bytes) -> tuple[ModelConfig, dict[str, str]]:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(block.decode("utf-8").splitlines(), start=1):
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"config line {lineno} is not key=value: {line!r}")
        fields[key] = value
    missing = [k for k in _CONFIG_KEYS if k not in fields]
    if missing:
        raise CheckpointFormatError(f"config block missing keys: {', '.join(missing)}")
    config = ModelConfig(
        window_len=int(fields["window_len"]),
        input_dim=int(fields["input_dim"]),
        model_dim=int(fields["model_dim"]),
        n_heads=int(fields["n_heads"]),
        ffn_hidden=int(fields["ffn_hidden"]),
        n_blocks=int(fields["n_blocks"]),
        use_positional_encoding=bool(int(fields["use_positional_encoding"])),
        use_residual=bool(int(fields["use_residual"])),
        seed=int(fields["seed"]),
    )
    extra = {k: v for k, v in fields.items() if k not in _CONFIG_KEYS}
    return config, extra


def save_params(
    params: ModelParams,
    config: ModelConfig,
    path: str,
    extra: dict[str, str] | None = None,
) -> None:
    """Write a checkpoint; see README for the byte layout.

    The write is atomic: a temporary file is renamed into place, so a
    crashed run never leaves a partial checkpoint behind.
    """
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += bytes([CHECKPOINT_VERSION])
    block = _config_block(config, extra or {})
    payload += struct.pack("<I", len(block))
    payload += block
    for name, arr in param_items(params):
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    payload += struct.pack("<Q", crc64(bytes(payload)))
    atomic_write_bytes(path, bytes(payload))


def load_params(path: str) -> tuple[ModelParams, ModelConfig, dict[str, str]]:
    """Read a checkpoint back; the round trip is bit exact.

    Raises CheckpointFormatError for bad magic, unsupported version, or a
    truncated file, and CheckpointChecksumError when the trailing CRC does
    not match.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    header = len(CHECKPOINT_MAGIC) + 1 + 4
    if len(raw) < header + 8:
        raise CheckpointFormatError(f"file too short to be a checkpoint ({len(raw)} bytes)")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic bytes {raw[:4]!r}")
    if raw[4] != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {raw[4]}")
    (block_len,) = struct.unpack_from("<I", raw, 5)
    if len(raw) < header + block_len + 8:
        raise CheckpointFormatError("truncated config block")

    stored_crc = struct.unpack_from("<Q", raw, len(raw) - 8)[0]
    if crc64(raw[:-8]) != stored_crc:
        raise CheckpointChecksumError("checksum mismatch, file is corrupted")

    try:
        config, extra = _parse_config_block(raw[header : header + block_len])
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"config block is not valid UTF-8: {exc}") from exc

    template = zero_params(config)
    offset = header + block_len
    body_end = len(raw) - 8
    for name, arr in param_items(template):
        nbytes = arr.size * 8
        if offset + nbytes > body_end:
            raise CheckpointFormatError(f"truncated parameter data at {name}")
        values = np.frombuffer(raw, dtype="<f8", count=arr.size, offset=offset)
        arr[...] = values.reshape(arr.shape)
        offset += nbytes
    if offset != body_end:
        raise CheckpointFormatError(
            f"{body_end - offset} unexpected trailing parameter bytes"
        )
    return template, config, extra


def write_attention_csvs(records: list[AttentionRecord], out_dir: str) -> list[str]:
    """One CSV per (block, head): header t0..t{T-1}, weights at 17 digits."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for rec in records:
        t = rec.weights.shape[0]
        lines = [",".join(f"t{j}" for j in range(t))]
        for row in rec.weights:
            lines.append(",".join(f"{v:.17g}" for v in row))
        path = os.path.join(out_dir, f"attention_block{rec.block}_head{rec.head}.csv")
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
        paths.append(path)
    return paths
