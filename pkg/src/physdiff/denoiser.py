"""Noise-prediction networks with optional FiLM or cross-attention conditioning.

Two backbones share one interface, ``net(x_t, t, O)``:

* ``mlp``: vectors of shape (N, d); residual blocks of width ``hidden``.
* ``conv2d``: fields of shape (N, C, H, W); a small U-shaped encoder/decoder
  with two 2x downsamples and skip concatenation.

Inside each block the order is linear/conv -> +time -> norm -> condition ->
SiLU.  Conditioning is either FiLM, ``(1 + gamma) * h + beta`` with the
generator's last layer zero-initialized, or multi-head cross-attention from
the block's features (queries) to condition tokens (keys/values).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import MLP, ChannelLayerNorm, Conv2d, LayerNorm, Linear, Module

COND_KINDS = ("none", "film", "attention")
BACKBONES = ("mlp", "conv2d")


@dataclass
class DenoiserConfig:
    backbone: str = "mlp"
    data_shape: tuple = (2,)
    cond_kind: str = "none"
    cond_dim: int = 0
    token_width: int = 0  # 0 -> the whole condition is one token
    hidden: int = 128
    depth: int = 3
    channels: tuple = (16, 32, 64)
    time_dim: int = 128
    heads: int = 4
    film_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        self.data_shape = tuple(int(d) for d in self.data_shape)
        self.channels = tuple(int(c) for c in self.channels)
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.cond_kind not in COND_KINDS:
            raise ValueError(f"cond_kind must be one of {COND_KINDS}, got {self.cond_kind!r}")
        if self.cond_kind != "none" and self.cond_dim < 1:
            raise ValueError("conditional network needs cond_dim >= 1")
        if self.backbone == "mlp" and len(self.data_shape) != 1:
            raise ValueError(f"mlp backbone expects 1-D samples, got {self.data_shape}")
        if self.backbone == "conv2d":
            if len(self.data_shape) != 3 or len(self.channels) != 3:
                raise ValueError("conv2d backbone expects (C, H, W) samples and 3 channel widths")
            if self.data_shape[1] % 4 or self.data_shape[2] % 4:
                raise ValueError("conv2d backbone needs H and W divisible by 4")
        tw = self.token_width or self.cond_dim
        if self.cond_kind == "attention" and self.cond_dim % tw:
            raise ValueError(f"cond_dim {self.cond_dim} not divisible by token_width {tw}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_features(t, dim: int) -> np.ndarray:
    """[sin(t w_k), cos(t w_k)] with w_k geometric from 1 down to 1/10000."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TimeEmbedding(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.mlp = MLP([dim, dim, dim], rng)

    def forward(self, t) -> Tensor:
        return self.mlp(Tensor(sinusoidal_features(t, self.dim)))


def embed_time(t, dim: int, embedding: TimeEmbedding | None = None) -> Tensor:
    """Sinusoidal features passed through ``embedding`` when given."""
    if embedding is None:
        return Tensor(sinusoidal_features(t, dim))
    return embedding(t)


def film_modulate(h, gamma, beta) -> Tensor:
    """(1 + gamma) * h + beta.

    gamma/beta of shape (N, C) are broadcast over every axis of h after the
    channel axis; otherwise they must broadcast to h directly.
    """
    h, gamma, beta = ag.as_tensor(h), ag.as_tensor(gamma), ag.as_tensor(beta)
    if gamma.shape != beta.shape:
        raise ShapeError(f"film: gamma {gamma.shape} and beta {beta.shape} differ")
    if h.ndim > 2 and gamma.ndim == 2 and gamma.shape[1] == h.shape[1] \
            and gamma.shape[0] in (1, h.shape[0]):
        extra = (1,) * (h.ndim - 2)
        gamma = gamma.reshape(gamma.shape + extra)
        beta = beta.reshape(beta.shape + extra)
    else:
        try:
            ok = np.broadcast_shapes(gamma.shape, h.shape) == h.shape
        except ValueError:
            ok = False
        if not ok:
            raise ShapeError(f"film: gamma/beta {gamma.shape} do not match features {h.shape}")
    return (gamma + 1.0) * h + beta


class FiLMGenerator(Module):
    """Maps the flattened condition to one (gamma, beta) pair per modulated block."""

    def __init__(self, cond_dim: int, widths: list[int], hidden: int, rng):
        self.widths = list(widths)
        self.mlp = MLP([cond_dim, hidden, hidden, 2 * sum(widths)], rng, zero_last=True)

    def forward(self, cond: Tensor) -> list[tuple[Tensor, Tensor]]:
        out = self.mlp(cond.reshape(cond.shape[0], -1))
        pairs, k = [], 0
        for w in self.widths:
            pairs.append((out[:, k:k + w], out[:, k + w:k + 2 * w]))
            k += 2 * w
        return pairs


class CrossAttention(Module):
    """Multi-head scaled dot-product attention from feature tokens to condition tokens."""

    def __init__(self, dim_q: int, dim_kv: int, heads: int, rng):
        self.heads = heads
        self.head_dim = max(dim_q // heads, 1)
        inner = self.heads * self.head_dim
        self.q = Linear(dim_q, inner, rng)
        self.k = Linear(dim_kv, inner, rng)
        self.v = Linear(dim_kv, inner, rng)
        self.out = Linear(inner, dim_q, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        n, length, _ = x.shape
        return x.reshape(n, length, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, h_tokens: Tensor, cond_tokens: Tensor) -> Tensor:
        if cond_tokens.ndim != 3 or cond_tokens.shape[1] == 0:
            raise ShapeError(f"cross_attend: need a nonempty (N, L, D) token set, got {cond_tokens.shape}")
        if h_tokens.ndim != 3 or h_tokens.shape[0] != cond_tokens.shape[0]:
            raise ShapeError(f"cross_attend: token batches {h_tokens.shape} vs {cond_tokens.shape}")
        n, lq, _ = h_tokens.shape
        q = self._split(self.q(h_tokens))
        k = self._split(self.k(cond_tokens))
        v = self._split(self.v(cond_tokens))
        scores = ag.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(self.head_dim))
        weights = ag.softmax(scores)
        self.last_weights = weights.data
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(n, lq, self.heads * self.head_dim)
        return h_tokens + self.out(mixed)


def cross_attend(block: CrossAttention, h_tokens: Tensor, cond_tokens: Tensor) -> Tensor:
    return block(h_tokens, cond_tokens)


class ConditionTokens(Module):
    """Reshape the condition into tokens and project each to the embedding width."""

    def __init__(self, cond_dim: int, token_width: int, dim: int, rng):
        self.token_width = token_width or cond_dim
        self.proj = Linear(self.token_width, dim, rng)

    def forward(self, cond: Tensor) -> Tensor:
        n = cond.shape[0]
        return self.proj(cond.reshape(n, -1, self.token_width))


class _Conditioner:
    """Applies the configured conditioning to a block's normalized features."""

    @staticmethod
    def apply(kind, h, i, film_params, attn_blocks, tokens):
        if kind == "film":
            gamma, beta = film_params[i]
            return film_modulate(h, gamma, beta)
        if kind == "attention":
            if h.ndim == 2:
                return attn_blocks[i](h.reshape(h.shape[0], 1, h.shape[1]), tokens).reshape(h.shape)
            n, c, hh, ww = h.shape
            seq = h.reshape(n, c, hh * ww).transpose(0, 2, 1)
            seq = attn_blocks[i](seq, tokens)
            return seq.transpose(0, 2, 1).reshape(n, c, hh, ww)
        return h


class DenoiserNet(Module):
    def __init__(self, config: DenoiserConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.time = TimeEmbedding(config.time_dim, rng)
        widths = self._block_widths()
        if config.backbone == "mlp":
            self._build_mlp(rng)
        else:
            self._build_conv(rng)
        kind = config.cond_kind
        if kind == "film":
            self.film = FiLMGenerator(config.cond_dim, widths, config.film_hidden, rng)
        elif kind == "attention":
            self.tokens = ConditionTokens(config.cond_dim, config.token_width, config.time_dim, rng)
            self.attn = [CrossAttention(w, config.time_dim, config.heads, rng) for w in widths]

    def _block_widths(self) -> list[int]:
        c = self.config
        if c.backbone == "mlp":
            return [c.hidden] * c.depth
        c1, c2, c3 = c.channels
        return [c1, c2, c3, c2, c1]

    def _build_mlp(self, rng):
        c = self.config
        d = c.data_shape[0]
        self.inp = Linear(d, c.hidden, rng)
        self.lin = [Linear(c.hidden, c.hidden, rng) for _ in range(c.depth)]
        self.tproj = [Linear(c.time_dim, c.hidden, rng) for _ in range(c.depth)]
        self.norm = [LayerNorm(c.hidden) for _ in range(c.depth)]
        self.outp = Linear(c.hidden, d, rng)

    def _build_conv(self, rng):
        c = self.config
        cin = c.data_shape[0]
        c1, c2, c3 = c.channels
        # (in, out) per block: enc1, enc2, bottleneck, dec2, dec1
        io = [(c1, c1), (c1, c2), (c2, c3), (c3 + c2, c2), (c2 + c1, c1)]
        self.stem = Conv2d(cin, c1, 3, rng)
        self.conv_a = [Conv2d(a, b, 3, rng) for a, b in io]
        self.conv_b = [Conv2d(b, b, 3, rng) for _, b in io]
        self.skip = [Conv2d(a, b, 1, rng) for a, b in io]
        self.tproj = [Linear(c.time_dim, b, rng) for _, b in io]
        self.norm = [ChannelLayerNorm(b) for _, b in io]
        self.head = Conv2d(c1, cin, 3, rng)

    # -- forward ---------------------------------------------------------

    def _conditioning(self, cond):
        kind = self.config.cond_kind
        if kind == "none":
            if cond is not None:
                raise ValueError("unconditional network received a condition")
            return None, None
        if cond is None:
            raise ValueError(f"{kind} network requires a condition O")
        cond = ag.as_tensor(cond)
        if cond.ndim == 1:
            cond = cond.reshape(1, -1)
        if int(np.prod(cond.shape[1:])) != self.config.cond_dim:
            raise ShapeError(f"condition shape {cond.shape} does not match cond_dim {self.config.cond_dim}")
        if kind == "film":
            return self.film(cond), None
        return None, self.tokens(cond.reshape(cond.shape[0], -1))

    def forward(self, x_t, t, cond=None) -> Tensor:
        x_t = ag.as_tensor(x_t)
        c = self.config
        if tuple(x_t.shape[1:]) != c.data_shape:
            raise ShapeError(f"denoiser: input shape {x_t.shape} does not match data shape {c.data_shape}")
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        temb = self.time(t)
        film_params, tokens = self._conditioning(cond)
        if film_params is not None and film_params[0][0].shape[0] not in (1, n):
            raise ShapeError("condition batch does not match sample batch")
        if c.backbone == "mlp":
            return self._forward_mlp(x_t, temb, film_params, tokens)
        return self._forward_conv(x_t, temb, film_params, tokens)

    def _forward_mlp(self, x, temb, film_params, tokens):
        kind = self.config.cond_kind
        attn = getattr(self, "attn", None)
        h = self.inp(x)
        act_t = ag.silu(temb)
        for i in range(self.config.depth):
            z = self.lin[i](h) + self.tproj[i](act_t)
            z = self.norm[i](z)
            z = _Conditioner.apply(kind, z, i, film_params, attn, tokens)
            h = h + ag.silu(z)
        return self.outp(h)

    def _block(self, i, x, act_t, film_params, tokens):
        kind = self.config.cond_kind
        z = self.conv_a[i](x)
        tp = self.tproj[i](act_t)
        z = z + tp.reshape(tp.shape[0], tp.shape[1], 1, 1)
        z = self.norm[i](z)
        z = _Conditioner.apply(kind, z, i, film_params, getattr(self, "attn", None), tokens)
        z = self.conv_b[i](ag.silu(z))
        return self.skip[i](x) + z

    def _forward_conv(self, x, temb, film_params, tokens):
        act_t = ag.silu(temb)
        h0 = self.stem(x)
        e1 = self._block(0, h0, act_t, film_params, tokens)
        e2 = self._block(1, ag.avg_pool2d(e1), act_t, film_params, tokens)
        mid = self._block(2, ag.avg_pool2d(e2), act_t, film_params, tokens)
        d2 = self._block(3, ag.concat([ag.upsample_nearest2d(mid), e2], axis=1), act_t,
                         film_params, tokens)
        d1 = self._block(4, ag.concat([ag.upsample_nearest2d(d2), e1], axis=1), act_t,
                         film_params, tokens)
        return self.head(ag.silu(d1))


def predict_noise(net: DenoiserNet, x_t, t, cond=None) -> Tensor:
    """Predicted noise with the shape of ``x_t``."""
    return net(x_t, t, cond)


def build_denoiser(**kwargs) -> DenoiserNet:
    return DenoiserNet(DenoiserConfig(**kwargs))


@dataclass
class OracleNoiseNet:
    """Returns the exact noise consistent with a fixed clean sample ``x0``.

    For any x_t and t, eps = (x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t); every
    DDIM inversion through this net recovers ``x0`` exactly.
    """

    x0: np.ndarray
    alpha_bar: np.ndarray
    calls: list = field(default_factory=list)

    def __call__(self, x_t, t, cond=None):
        x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t)
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,)).astype(int)
        self.calls.append(t.copy())
        ab = self.alpha_bar[t].reshape((-1,) + (1,) * (x.ndim - 1))
        eps = (x - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)
        return Tensor(eps)
