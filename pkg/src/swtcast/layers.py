"""Neural building blocks: LSTM cell, Time2Vec, attention and encoder blocks.

Functional forms (``lstm_step``, ``time2vec``, ``attention_head``,
``multi_head_attention``, ``encoder_block``) take their weights explicitly.
The :class:`Module` subclasses own Glorot-initialized weights and call them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ShapeError

__all__ = [
    "Module",
    "glorot_uniform",
    "Dense",
    "Conv1D",
    "LstmParams",
    "lstm_step",
    "LSTM",
    "Time2VecParams",
    "time2vec",
    "Time2Vec",
    "AttentionConfig",
    "AttentionWeights",
    "attention_head",
    "multi_head_attention",
    "EncoderWeights",
    "encoder_block",
    "EncoderBlock",
]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Parameter container; trainable tensors are discovered by attribute walk."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif hasattr(value, "__dataclass_fields__"):
        for f in fields(value):
            yield from _walk(getattr(value, f.name), f"{name}.{f.name}")


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, activation=None):
        self.weight = glorot_uniform(rng, (in_features, out_features), in_features, out_features)
        self.bias = _zeros(out_features)
        self.activation = activation

    def __call__(self, x):
        out = ad.affine(x, self.weight, self.bias)
        return out if self.activation is None else self.activation(out)


class Conv1D(Module):
    """Channels-last stride-1 convolution, ``same`` padding by default."""

    def __init__(self, in_channels, out_channels, width, rng, activation=ad.relu, padding="same"):
        self.kernel = glorot_uniform(
            rng, (width, in_channels, out_channels), width * in_channels, width * out_channels
        )
        self.bias = _zeros(out_channels)
        self.activation = activation
        self.padding = padding

    def __call__(self, x):
        out = ad.conv1d(x, self.kernel, self.bias, padding=self.padding)
        return out if self.activation is None else self.activation(out)


# ---------------------------------------------------------------- LSTM


@dataclass
class LstmParams:
    """Input weights ``W_q`` (hidden, input), recurrent ``U_q`` (hidden, hidden), biases ``b_q``."""

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    U_i: Tensor
    U_f: Tensor
    U_o: Tensor
    U_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    def __post_init__(self):
        hidden, inputs = self.W_i.shape
        for q in "ifoc":
            w, u, b = getattr(self, f"W_{q}"), getattr(self, f"U_{q}"), getattr(self, f"b_{q}")
            if w.shape != (hidden, inputs) or u.shape != (hidden, hidden) or b.shape != (hidden,):
                raise ShapeError(
                    f"gate {q}: W {w.shape}, U {u.shape}, b {b.shape} inconsistent with "
                    f"hidden={hidden}, input={inputs}"
                )

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmParams":
        kw = {}
        for q in "ifoc":
            kw[f"W_{q}"] = glorot_uniform(rng, (hidden_size, input_size), input_size, hidden_size)
        for q in "ifoc":
            kw[f"U_{q}"] = glorot_uniform(rng, (hidden_size, hidden_size), hidden_size, hidden_size)
        for q in "ifoc":
            kw[f"b_{q}"] = _ones(hidden_size) if q == "f" else _zeros(hidden_size)
        return cls(**kw)


def lstm_step(x_t, h_prev, c_prev, params: LstmParams):
    """One LSTM cell update; returns ``(h_t, c_t)``.

    ``x_t`` is (..., input); ``h_prev`` and ``c_prev`` are (..., hidden).
    """
    x_t, h_prev, c_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    if x_t.shape[-1] != params.input_size:
        raise ShapeError(f"lstm_step: input width {x_t.shape[-1]} != {params.input_size}")
    if h_prev.shape[-1] != params.hidden_size or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_step: state shapes h {h_prev.shape}, c {c_prev.shape} "
            f"incompatible with hidden={params.hidden_size}"
        )

    def pre(q):
        W, U, b = getattr(params, f"W_{q}"), getattr(params, f"U_{q}"), getattr(params, f"b_{q}")
        return ad.matmul(x_t, W.T) + ad.matmul(h_prev, U.T) + b

    i_t = ad.sigmoid(pre("i"))
    f_t = ad.sigmoid(pre("f"))
    o_t = ad.sigmoid(pre("o"))
    c_tilde = ad.tanh(pre("c"))
    c_t = f_t * c_prev + i_t * c_tilde
    h_t = o_t * ad.tanh(c_t)
    return h_t, c_t


class LSTM(Module):
    """Unrolled LSTM over (batch, time, input); starts from zero state.

    The four gates are evaluated with one fused matrix product per step;
    the result is identical to iterating :func:`lstm_step`.
    """

    def __init__(self, input_size: int, hidden_size: int, rng, return_sequences: bool = True):
        self.params = LstmParams.init(input_size, hidden_size, rng)
        self.return_sequences = return_sequences

    def __call__(self, x):
        x = ad.as_tensor(x)
        p = self.params
        H = p.hidden_size
        if x.ndim != 3 or x.shape[-1] != p.input_size:
            raise ShapeError(f"LSTM expects (batch, time, {p.input_size}), got {x.shape}")
        W = ad.concatenate([p.W_i, p.W_f, p.W_o, p.W_c], axis=0).T
        U = ad.concatenate([p.U_i, p.U_f, p.U_o, p.U_c], axis=0).T
        b = ad.concatenate([p.b_i, p.b_f, p.b_o, p.b_c], axis=0)
        xw = ad.matmul(x, W) + b
        batch, steps = x.shape[0], x.shape[1]
        h = Tensor(np.zeros((batch, H)))
        c = Tensor(np.zeros((batch, H)))
        outputs = []
        for t in range(steps):
            z = xw[:, t, :] + ad.matmul(h, U)
            i_t = ad.sigmoid(z[:, :H])
            f_t = ad.sigmoid(z[:, H : 2 * H])
            o_t = ad.sigmoid(z[:, 2 * H : 3 * H])
            g_t = ad.tanh(z[:, 3 * H :])
            c = f_t * c + i_t * g_t
            h = o_t * ad.tanh(c)
            outputs.append(h)
        return ad.stack(outputs, axis=1) if self.return_sequences else h


# ---------------------------------------------------------------- Time2Vec


@dataclass
class Time2VecParams:
    """Frequencies ``omega`` and phases ``phi``, each of length ``k + 1``."""

    omega: Tensor
    phi: Tensor

    def __post_init__(self):
        if self.omega.shape != self.phi.shape or self.omega.ndim != 1 or self.omega.shape[0] < 2:
            raise ShapeError(f"Time2Vec needs omega/phi of equal length >= 2, got {self.omega.shape}/{self.phi.shape}")

    @property
    def k(self) -> int:
        return self.omega.shape[0] - 1

    @classmethod
    def init(cls, k: int, rng: np.random.Generator) -> "Time2VecParams":
        return cls(glorot_uniform(rng, (k + 1,), 1, k + 1), glorot_uniform(rng, (k + 1,), 1, k + 1))


def time2vec(tau, params: Time2VecParams) -> Tensor:
    """Element 0 is ``omega_0*tau + phi_0``; elements 1..k are ``sin(omega_i*tau + phi_i)``.

    ``tau`` may be a scalar (returns ``(k+1,)``) or a 1-D array of time
    indices (returns ``(len(tau), k+1)``).
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    scalar = tau_arr.ndim == 0
    tau_col = Tensor(tau_arr.reshape(-1, 1))
    z = tau_col * params.omega + params.phi
    out = ad.concatenate([z[:, :1], ad.sin(z[:, 1:])], axis=-1)
    return out.reshape(params.k + 1) if scalar else out


class Time2Vec(Module):
    def __init__(self, k: int, rng):
        self.params = Time2VecParams.init(k, rng)

    def __call__(self, tau):
        return time2vec(tau, self.params)


# ---------------------------------------------------------------- attention


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 8
    model_dim: int = 256

    def __post_init__(self):
        if self.heads < 1 or self.model_dim < 1:
            raise ConfigurationError(f"heads and model_dim must be positive, got {self.heads}, {self.model_dim}")
        if self.model_dim % self.heads:
            raise ConfigurationError(
                f"model_dim {self.model_dim} is not divisible by {self.heads} heads"
            )

    @property
    def d_k(self) -> int:
        return self.model_dim // self.heads


def attention_head(Q, K, V, return_weights: bool = False):
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d_k)) V`` on the last two axes."""
    Q, K, V = ad.as_tensor(Q), ad.as_tensor(K), ad.as_tensor(V)
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"attention: query dim {Q.shape} and key dim {K.shape} differ")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention: key length {K.shape} and value length {V.shape} differ")
    d_k = Q.shape[-1]
    axes = tuple(range(K.ndim - 2)) + (K.ndim - 1, K.ndim - 2)
    scores = ad.matmul(Q, ad.transpose(K, axes)) / math.sqrt(d_k)
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, V)
    return (out, weights) if return_weights else out


@dataclass
class AttentionWeights:
    W_q: Tensor
    b_q: Tensor
    W_k: Tensor
    b_k: Tensor
    W_v: Tensor
    b_v: Tensor
    W_o: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, cfg: AttentionConfig, rng) -> "AttentionWeights":
        d = cfg.model_dim
        kw = {}
        for q in "qkvo":
            kw[f"W_{q}"] = glorot_uniform(rng, (d, d), d, d)
            kw[f"b_{q}"] = _zeros(d)
        return cls(**kw)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def multi_head_attention(x, cfg: AttentionConfig, weights: AttentionWeights, return_weights=False):
    """Self-attention with ``cfg.heads`` heads; heads are concatenated and projected by ``W_o``."""
    x = ad.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != cfg.model_dim:
        raise ShapeError(f"multi-head attention expects (batch, time, {cfg.model_dim}), got {x.shape}")
    b, t, d = x.shape
    q = _split_heads(ad.affine(x, weights.W_q, weights.b_q), cfg.heads)
    k = _split_heads(ad.affine(x, weights.W_k, weights.b_k), cfg.heads)
    v = _split_heads(ad.affine(x, weights.W_v, weights.b_v), cfg.heads)
    heads, attn = attention_head(q, k, v, return_weights=True)
    merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (b, t, d))
    out = ad.affine(merged, weights.W_o, weights.b_o)
    return (out, attn) if return_weights else out


@dataclass
class EncoderWeights:
    attention: AttentionWeights
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ff1_W: Tensor
    ff1_b: Tensor
    ff2_W: Tensor
    ff2_b: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def init(cls, cfg: AttentionConfig, ff_dim: int, rng) -> "EncoderWeights":
        d = cfg.model_dim
        return cls(
            attention=AttentionWeights.init(cfg, rng),
            ln1_gamma=_ones(d),
            ln1_beta=_zeros(d),
            ff1_W=glorot_uniform(rng, (d, ff_dim), d, ff_dim),
            ff1_b=_zeros(ff_dim),
            ff2_W=glorot_uniform(rng, (ff_dim, d), ff_dim, d),
            ff2_b=_zeros(d),
            ln2_gamma=_ones(d),
            ln2_beta=_zeros(d),
        )


def encoder_block(x, cfg: AttentionConfig, weights: EncoderWeights, rng=None, rate: float = 0.1):
    """Post-norm encoder block.

    attention -> dropout -> add & norm -> ReLU feedforward -> linear -> dropout -> add & norm.
    Pass ``rng`` to draw dropout masks (training); ``None`` runs inference.
    """
    x = ad.as_tensor(x)
    attn = multi_head_attention(x, cfg, weights.attention)
    attn = ad.dropout(attn, rate, rng)
    x1 = ad.layer_norm(x + attn, weights.ln1_gamma, weights.ln1_beta)
    ff = ad.relu(ad.affine(x1, weights.ff1_W, weights.ff1_b))
    ff = ad.affine(ff, weights.ff2_W, weights.ff2_b)
    ff = ad.dropout(ff, rate, rng)
    return ad.layer_norm(x1 + ff, weights.ln2_gamma, weights.ln2_beta)


class EncoderBlock(Module):
    def __init__(self, cfg: AttentionConfig, ff_dim: int, rng, rate: float = 0.1):
        self.cfg = cfg
        self.rate = rate
        self.weights = EncoderWeights.init(cfg, ff_dim, rng)

    def __call__(self, x, rng=None):
        return encoder_block(x, self.cfg, self.weights, rng=rng, rate=self.rate)
