"""ViT-1D masked autoencoder over channel-by-time token grids.

Tokens are 20-minute single-channel patches. The encoder sees only tokens
whose full-mask bit is unset (token dropout); the decoder sees the complete
sequence with a learned mask token substituted at every full-mask position and
reconstructs all tokens; the loss scores only artificially-masked tokens that
were originally observed.

Positional information is additive at both encoder and decoder inputs:
dims [0, h/2) carry a learned per-channel embedding, dims [h/2, h-8) a fixed
sinusoidal encoding of the time-patch index, and the last 8 dims sin/cos pairs
of four cyclic wall-clock quantities (minute-of-hour, hour-of-day,
day-of-week, day-of-year) scaled to [0, 2pi).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .masking import MaskPlan, expand_tokens, patchify

LN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """Encoder called with zero kept tokens."""


class SampleSkipped(Exception):
    """Window contributes no loss tokens; caller should drop it."""


@dataclass(frozen=True)
class ModelConfig:
    enc_hidden: int
    enc_mlp: int
    enc_heads: int
    enc_layers: int
    dec_hidden: int
    dec_mlp: int
    dec_heads: int
    dec_layers: int
    n_channels: int
    window_minutes: int
    patch_len: int = 20
    size_tag: str = "custom"

    def __post_init__(self):
        for side in ("enc", "dec"):
            h = getattr(self, f"{side}_hidden")
            heads = getattr(self, f"{side}_heads")
            if h % 2:
                raise ConfigError(f"{side} hidden {h} must be even")
            if h // 2 < 8:
                raise ConfigError(
                    f"{side} hidden {h} too small: hidden/2 must be >= 8 to "
                    f"fit the cyclic datetime dims")
            if h % heads:
                raise ConfigError(f"{side} hidden {h} not divisible by "
                                  f"{heads} heads")
        if self.patch_len < 1 or self.window_minutes % self.patch_len:
            raise ConfigError(
                f"window {self.window_minutes} not divisible by patch "
                f"{self.patch_len}")
        if self.n_channels < 1:
            raise ConfigError("need at least one channel")

    @property
    def n_patches(self) -> int:
        return self.window_minutes // self.patch_len

    @property
    def n_tokens(self) -> int:
        return self.n_channels * self.n_patches


_PRESETS = {
    "xxs": (64, 256, 1, 2, 48, 192, 1, 1),
    "xs": (128, 512, 2, 4, 96, 384, 2, 1),
    "s": (256, 1024, 4, 8, 192, 768, 4, 2),
    "b": (768, 3072, 12, 12, 512, 2048, 16, 8),
    "desk": (64, 256, 2, 2, 32, 128, 2, 1),
    "nano": (16, 64, 1, 1, 16, 64, 1, 1),
}


def preset(tag: str, n_channels: int, window_minutes: int) -> ModelConfig:
    if tag not in _PRESETS:
        raise ConfigError(f"unknown model size '{tag}'; "
                          f"choose from {sorted(_PRESETS)}")
    e_h, e_m, e_hd, e_l, d_h, d_m, d_hd, d_l = _PRESETS[tag]
    return ModelConfig(e_h, e_m, e_hd, e_l, d_h, d_m, d_hd, d_l,
                       n_channels=n_channels, window_minutes=window_minutes,
                       size_tag=tag)


def preset_tags():
    return sorted(_PRESETS)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    p: dict[str, np.ndarray] = {}

    def w(name, *shape):
        p[name] = rng.normal(0.0, 0.02, shape)

    def zeros(name, *shape):
        p[name] = np.zeros(shape)

    def ones(name, *shape):
        p[name] = np.ones(shape)

    L = config.patch_len
    w("embed.w", L, config.enc_hidden)
    zeros("embed.b", config.enc_hidden)
    w("enc.chan", config.n_channels, config.enc_hidden // 2)
    for side, layers, h, m in (("enc", config.enc_layers, config.enc_hidden, config.enc_mlp),
                               ("dec", config.dec_layers, config.dec_hidden, config.dec_mlp)):
        for i in range(layers):
            pre = f"{side}.{i}"
            ones(f"{pre}.ln1.g", h)
            zeros(f"{pre}.ln1.b", h)
            w(f"{pre}.attn.wqkv", h, 3 * h)
            zeros(f"{pre}.attn.bqkv", 3 * h)
            w(f"{pre}.attn.wo", h, h)
            zeros(f"{pre}.attn.bo", h)
            ones(f"{pre}.ln2.g", h)
            zeros(f"{pre}.ln2.b", h)
            w(f"{pre}.mlp.w1", h, m)
            zeros(f"{pre}.mlp.b1", m)
            w(f"{pre}.mlp.w2", m, h)
            zeros(f"{pre}.mlp.b2", h)
        ones(f"{side}.out_ln.g", h)
        zeros(f"{side}.out_ln.b", h)
    w("adapter.w", config.enc_hidden, config.dec_hidden)
    zeros("adapter.b", config.dec_hidden)
    w("mask_token", config.dec_hidden)
    w("dec.chan", config.n_channels, config.dec_hidden // 2)
    w("head.w", config.dec_hidden, L)
    zeros("head.b", L)
    return {k: ad.Tensor(v, requires_grad=True) for k, v in p.items()}


def param_census(params: dict[str, ad.Tensor]) -> int:
    return int(sum(t.data.size for t in params.values()))


# ---------------------------------------------------------------------------
# positional encodings


def sinusoid_table(n_pos: int, dims: int) -> np.ndarray:
    """Standard transformer sinusoidal table, shape (n_pos, dims)."""
    out = np.zeros((n_pos, dims))
    if dims == 0:
        return out
    pos = np.arange(n_pos)[:, None].astype(np.float64)
    i = np.arange(0, dims, 2).astype(np.float64)
    div = np.power(10000.0, i / dims)
    out[:, 0::2] = np.sin(pos / div)
    cos_part = np.cos(pos / div)
    out[:, 1::2] = cos_part[:, : out[:, 1::2].shape[1]]
    return out


def datetime_encoding(dt_frac: np.ndarray) -> np.ndarray:
    """(P, 4) cyclic fractions -> (P, 8) sin/cos pairs, angle = 2*pi*frac."""
    ang = 2.0 * np.pi * np.asarray(dt_frac, dtype=np.float64)
    out = np.empty((ang.shape[0], 8))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def positional_encoding(params, config: ModelConfig, side: str,
                        chan_ids: np.ndarray, time_ids: np.ndarray,
                        dt_frac: np.ndarray) -> ad.Tensor:
    """(T, hidden) additive positional tensor for the given token coords."""
    h = config.enc_hidden if side == "enc" else config.dec_hidden
    learned = ad.gather_rows(params[f"{side}.chan"], chan_ids)
    sin_dims = h - 8 - h // 2
    sin_table = sinusoid_table(config.n_patches, sin_dims)
    dt8 = datetime_encoding(dt_frac)
    const = np.concatenate([sin_table[time_ids], dt8[time_ids]], axis=1)
    return ad.concat_cols([learned, ad.Tensor(const)])


# ---------------------------------------------------------------------------
# transformer blocks


def _affine_ln(x, params, name):
    y = ad.layernorm(x, LN_EPS)
    return ad.add(ad.mul(y, params[f"{name}.g"]), params[f"{name}.b"])


def _attention(x, params, prefix, heads):
    h = x.shape[1]
    dh = h // heads
    scale = 1.0 / np.sqrt(dh)
    qkv = ad.add(ad.matmul(x, params[f"{prefix}.wqkv"]), params[f"{prefix}.bqkv"])
    outs = []
    for j in range(heads):
        q = ad.slice_cols(qkv, j * dh, (j + 1) * dh)
        k = ad.slice_cols(qkv, h + j * dh, h + (j + 1) * dh)
        v = ad.slice_cols(qkv, 2 * h + j * dh, 2 * h + (j + 1) * dh)
        scores = ad.mul(ad.matmul(q, ad.transpose(k)), scale)
        attn = ad.softmax_rows(scores)
        outs.append(ad.matmul(attn, v))
    o = outs[0] if len(outs) == 1 else ad.concat_cols(outs)
    return ad.add(ad.matmul(o, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _block(x, params, prefix, heads):
    a = _attention(_affine_ln(x, params, f"{prefix}.ln1"), params,
                   f"{prefix}.attn", heads)
    x = ad.add(x, a)
    m = _affine_ln(x, params, f"{prefix}.ln2")
    m = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(m, params[f"{prefix}.mlp.w1"]),
                                        params[f"{prefix}.mlp.b1"])),
                         params[f"{prefix}.mlp.w2"]),
               params[f"{prefix}.mlp.b2"])
    return ad.add(x, m)


def _stack(x, params, side, layers, heads):
    for i in range(layers):
        x = _block(x, params, f"{side}.{i}", heads)
    return _affine_ln(x, params, f"{side}.out_ln")


# ---------------------------------------------------------------------------
# encode / reconstruct


def encode(params, config: ModelConfig, token_values: np.ndarray,
           chan_ids: np.ndarray, time_ids: np.ndarray,
           dt_frac: np.ndarray) -> ad.Tensor:
    """Latents for the kept tokens. `token_values` is (K, patch_len) of
    standardized minutes; coords give each token's channel and time index."""
    if token_values.ndim != 2 or token_values.shape[0] == 0:
        raise DegenerateInputError(
            f"encoder needs at least one kept token, got shape "
            f"{token_values.shape}")
    x = ad.add(ad.matmul(ad.Tensor(token_values), params["embed.w"]),
               params["embed.b"])
    pos = positional_encoding(params, config, "enc", chan_ids, time_ids, dt_frac)
    x = ad.add(x, pos)
    return _stack(x, params, "enc", config.enc_layers, config.enc_heads)


def _forward_tokens(params, config: ModelConfig, tokens: np.ndarray,
                    full: np.ndarray, dt_frac: np.ndarray):
    """Shared encode/decode body. `tokens` is (T, L), `full` a flat (T,) bool
    of positions hidden from the encoder. Returns (preds Tensor (T, L), kept
    indices)."""
    T = config.n_tokens
    P = config.n_patches
    kept = np.flatnonzero(~full)
    masked = np.flatnonzero(full)
    chan_ids = np.arange(T) // P
    time_ids = np.arange(T) % P

    if kept.size:
        lat = encode(params, config, tokens[kept], chan_ids[kept],
                     time_ids[kept], dt_frac)
        lat = ad.add(ad.matmul(lat, params["adapter.w"]), params["adapter.b"])
        seq = ad.scatter_rows(T, kept, lat)
        if masked.size:
            seq = ad.add(seq, ad.scatter_rows(
                T, masked, ad.repeat_row(params["mask_token"], masked.size)))
    else:
        seq = ad.repeat_row(params["mask_token"], T)
    pos = positional_encoding(params, config, "dec", chan_ids, time_ids, dt_frac)
    x = ad.add(seq, pos)
    x = _stack(x, params, "dec", config.dec_layers, config.dec_heads)
    preds = ad.add(ad.matmul(x, params["head.w"]), params["head.b"])
    return preds, kept


def _check_window(config: ModelConfig, values: np.ndarray, mask_shape) -> None:
    C, W = values.shape
    if (C, W) != (config.n_channels, config.window_minutes):
        raise ConfigError(
            f"window shape {(C, W)} does not match config "
            f"{(config.n_channels, config.window_minutes)}")
    if mask_shape != (C, config.n_patches):
        raise ConfigError(
            f"token mask shape {mask_shape} != {(C, config.n_patches)}")


@dataclass
class ReconOutput:
    pred: np.ndarray        # (C, W) reconstructed standardized values
    loss: ad.Tensor         # scalar masked MSE
    n_loss_tokens: int
    kept: np.ndarray        # flat indices of tokens the encoder saw


def reconstruct(params, config: ModelConfig, values: np.ndarray,
                plan: MaskPlan, dt_frac: np.ndarray) -> ReconOutput:
    """Full AIM forward pass on one window: encoder over kept tokens, decoder
    over the complete sequence with mask tokens substituted, masked MSE over
    loss-mask minutes."""
    _check_window(config, values, plan.shape)
    C, W = values.shape
    P, T = config.n_patches, config.n_tokens

    loss_tok = plan.loss.reshape(-1)
    if not loss_tok.any():
        raise SampleSkipped("no artificially masked, originally observed tokens")

    tokens = patchify(values, config.patch_len).reshape(T, config.patch_len)
    preds, kept = _forward_tokens(params, config, tokens,
                                  plan.full.reshape(-1), dt_frac)
    minute_mask = expand_tokens(plan.loss, config.patch_len).reshape(
        T, config.patch_len)
    loss = ad.mse_masked(preds, tokens, minute_mask)
    return ReconOutput(
        pred=preds.data.reshape(C, P, config.patch_len).reshape(C, W),
        loss=loss, n_loss_tokens=int(loss_tok.sum()), kept=kept,
    )


def predict(params, config: ModelConfig, values: np.ndarray,
            full_tokens: np.ndarray, dt_frac: np.ndarray) -> np.ndarray:
    """Reconstruct a window given a token-level visibility mask, without
    computing any loss. Used by the generative evaluation and daily-metric
    recovery, where scoring happens at minute level outside the model."""
    _check_window(config, values, full_tokens.shape)
    C, W = values.shape
    P, T = config.n_patches, config.n_tokens
    tokens = patchify(values, config.patch_len).reshape(T, config.patch_len)
    preds, _ = _forward_tokens(params, config, tokens,
                               full_tokens.reshape(-1), dt_frac)
    return preds.data.reshape(C, P, config.patch_len).reshape(C, W)


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"SFMC"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: ModelConfig, params: dict[str, ad.Tensor]) -> None:
    out = bytearray()
    out += _CKPT_MAGIC
    out += struct.pack("<H", _CKPT_VERSION)
    tag = config.size_tag.encode()
    out += struct.pack("<H", len(tag))
    out += tag
    out += struct.pack("<10I", config.enc_hidden, config.enc_mlp,
                       config.enc_heads, config.enc_layers, config.dec_hidden,
                       config.dec_mlp, config.dec_heads, config.dec_layers,
                       config.n_channels, config.window_minutes)
    out += struct.pack("<I", config.patch_len)
    out += struct.pack("<I", len(params))
    for name in sorted(params):
        nb = name.encode()
        out += struct.pack("<H", len(nb))
        out += nb
        arr = params[name].data
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, ad.Tensor]]:
    buf = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(
                f"truncated checkpoint at byte {off} in {path}")
        b = buf[off:off + n]
        off += n
        return b

    if take(4) != _CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint")
    (version,) = struct.unpack("<H", take(2))
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (tag_len,) = struct.unpack("<H", take(2))
    tag = take(tag_len).decode()
    dims = struct.unpack("<10I", take(40))
    (patch_len,) = struct.unpack("<I", take(4))
    config = ModelConfig(*dims[:8], n_channels=dims[8], window_minutes=dims[9],
                         patch_len=patch_len, size_tag=tag)
    (n_params,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(count * 8), dtype="<f8").astype(np.float64)
        params[name] = ad.Tensor(arr.reshape(shape), requires_grad=True)
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes in {path}")
    return config, params
