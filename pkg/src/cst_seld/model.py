"""
The CST-former network.

Three ConvBlocks encode the 7-channel input into ``(B, C, T', F')``. Each
CST block applies a local perception unit, the configured attention
sublayers (channel attention over unfolded local embeddings, spectral and
temporal attention) and an inverted residual feed-forward network. A
fully-connected head maps every output frame to ``N_cls * N_T * 3`` tanh
values (multi-ACCDOA).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from cst_seld import functional as F
from cst_seld.config import ModelConfig
from cst_seld.enums import AttentionDomain, Precision
from cst_seld.errors import ConfigurationError, DataError
from cst_seld.features import FeatureTensor
from cst_seld.functional import BatchNormState
from cst_seld.tensor import Tensor, get_default_precision

logger = logging.getLogger(__name__)

IRFFN_EXPANSION = 4

_DOMAIN_KEY = {
    AttentionDomain.CHANNEL: "attn_c",
    AttentionDomain.SPECTRAL: "attn_s",
    AttentionDomain.TEMPORAL: "attn_t",
}


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------


@dataclass
class Parameters:
    """
    Named weights of a CST-former plus batch-norm running statistics.

    Attributes
    ----------
    tensors : dict of str to Tensor
        Trainable tensors, in creation order.
    bn_states : dict of str to BatchNormState
        Running statistics keyed by the batch-norm prefix
        (``"encoder.0.bn"``, ``"blocks.1.irffn.bn2"``, ...).
    """

    tensors: dict[str, Tensor] = field(default_factory=dict)
    bn_states: dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ConfigurationError(f"Unknown parameter '{name}'.") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def trainable(self) -> list[Tensor]:
        return list(self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    @property
    def num_values(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> Parameters:
        """Deep copy: new arrays for every tensor and running statistic."""
        return Parameters(
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.items()},
            {
                k: BatchNormState(s.running_mean.copy(), s.running_var.copy())
                for k, s in self.bn_states.items()
            },
        )

    def detached(self) -> Parameters:
        """Gradient-free view for inference; running statistics are shared."""
        return Parameters(
            {k: Tensor(t.data) for k, t in self.items()},
            self.bn_states,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        """Every stored array by name, running statistics included."""
        out = {k: t.data for k, t in self.items()}
        for k, s in self.bn_states.items():
            out[f"{k}.running_mean"] = s.running_mean
            out[f"{k}.running_var"] = s.running_var
        return out


def head_dim(embed: int, heads: int) -> int:
    """Per-head width ``ceil(D / H)``."""
    return -(-embed // heads)


def attention_embed_dim(cfg: ModelConfig, domain: AttentionDomain, block: int) -> int:
    if domain is AttentionDomain.CHANNEL:
        pt, pf = cfg.ule_kernels[block]
        return pt * pf
    return cfg.channels


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every trainable tensor, in initialisation order."""
    c = cfg.channels
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = cfg.in_channels
    for i in range(3):
        shapes[f"encoder.{i}.conv.weight"] = (c, c_in, 3, 3)
        shapes[f"encoder.{i}.conv.bias"] = (c,)
        shapes[f"encoder.{i}.bn.gamma"] = (c,)
        shapes[f"encoder.{i}.bn.beta"] = (c,)
        c_in = c

    hidden = IRFFN_EXPANSION * c
    for b in range(cfg.n_cst):
        p = f"blocks.{b}"
        shapes[f"{p}.lpu.weight"] = (c, 3, 3)
        for domain in cfg.attention_order:
            d = attention_embed_dim(cfg, domain, b)
            inner = cfg.heads * head_dim(d, cfg.heads)
            a = f"{p}.{_DOMAIN_KEY[domain]}"
            for name in ("w_q", "w_k", "w_v"):
                shapes[f"{a}.{name}"] = (d, inner)
            shapes[f"{a}.w_o"] = (inner, d)
            shapes[f"{a}.ln.gamma"] = (c,)
            shapes[f"{a}.ln.beta"] = (c,)
        r = f"{p}.irffn"
        shapes[f"{r}.ln.gamma"] = (c,)
        shapes[f"{r}.ln.beta"] = (c,)
        shapes[f"{r}.expand.weight"] = (hidden, c)
        shapes[f"{r}.expand.bias"] = (hidden,)
        shapes[f"{r}.bn1.gamma"] = (hidden,)
        shapes[f"{r}.bn1.beta"] = (hidden,)
        shapes[f"{r}.dw.weight"] = (hidden, 3, 3)
        shapes[f"{r}.bn2.gamma"] = (hidden,)
        shapes[f"{r}.bn2.beta"] = (hidden,)
        shapes[f"{r}.project.weight"] = (c, hidden)
        shapes[f"{r}.project.bias"] = (c,)
        shapes[f"{r}.bn3.gamma"] = (c,)
        shapes[f"{r}.bn3.beta"] = (c,)

    _, f_out = cfg.encoder_shape()
    shapes["head.fc1.weight"] = (f_out * c, cfg.fc_hidden)
    shapes["head.fc1.bias"] = (cfg.fc_hidden,)
    shapes["head.fc2.weight"] = (cfg.fc_hidden, cfg.output_dim)
    shapes["head.fc2.bias"] = (cfg.output_dim,)
    return shapes


def batch_norm_channels(cfg: ModelConfig) -> dict[str, int]:
    """Channel count of every batch-norm layer, keyed by prefix."""
    c = cfg.channels
    out = {f"encoder.{i}.bn": c for i in range(3)}
    for b in range(cfg.n_cst):
        r = f"blocks.{b}.irffn"
        out[f"{r}.bn1"] = IRFFN_EXPANSION * c
        out[f"{r}.bn2"] = IRFFN_EXPANSION * c
        out[f"{r}.bn3"] = c
    return out


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith("conv.weight"):
        return shape[1] * shape[2] * shape[3]
    if name.endswith(("lpu.weight", "dw.weight")):
        return shape[1] * shape[2]
    if name.endswith(("expand.weight", "project.weight")):
        return shape[1]
    return shape[0]


def init_parameters(
    cfg: ModelConfig, seed: int = 0, precision: Optional[Precision] = None
) -> Parameters:
    """
    Initialise a CST-former.

    Weights are He-uniform on the fan-in (``U(-sqrt(6/fan_in), sqrt(6/fan_in))``),
    biases and norm offsets are zero, norm scales are one.

    Parameters
    ----------
    cfg : ModelConfig
        Architecture.
    seed : int, default 0
        Seed of the initialisation generator.
    precision : Precision, optional
        Defaults to the current default tensor precision.
    """
    dtype = (precision or get_default_precision()).dtype
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(("bias", "beta")):
            data = np.zeros(shape)
        elif name.endswith("gamma"):
            data = np.ones(shape)
        else:
            limit = math.sqrt(6.0 / _fan_in(name, shape))
            data = rng.uniform(-limit, limit, size=shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    states = {k: BatchNormState.fresh(n, dtype) for k, n in batch_norm_channels(cfg).items()}
    n_values = sum(t.size for t in tensors.values())
    logger.debug("Initialised %d tensors (%d values)", len(tensors), n_values)
    return Parameters(tensors, states)


# ----------------------------------------------------------------------
# attention-map capture
# ----------------------------------------------------------------------


@dataclass
class AttentionMapBundle:
    """
    Attention maps captured during a forward pass.

    Attributes
    ----------
    maps : dict
        ``(block, domain) -> array (N, H, L, L)``. Channel attention has
        ``N = B * T'/P_T * F'/P_F`` and ``L = C``; spectral ``N = B * T'``,
        ``L = F'``; temporal ``N = B * F'``, ``L = T'``.
    channel_grids : dict
        ``block -> (B, T'/P_T, F'/P_F)`` for unpacking channel maps.
    """

    maps: dict[tuple[int, AttentionDomain], np.ndarray] = field(default_factory=dict)
    channel_grids: dict[int, tuple[int, int, int]] = field(default_factory=dict)

    def channel_attention(self, block: int = -1) -> tuple[np.ndarray, tuple[int, int, int]]:
        """Channel maps and grid of ``block`` (default: the last block)."""
        blocks = sorted(self.channel_grids)
        if not blocks:
            raise ConfigurationError("No channel attention was recorded.")
        key = blocks[block]
        return self.maps[(key, AttentionDomain.CHANNEL)], self.channel_grids[key]

    def max_row_error(self) -> float:
        """Largest deviation of any attention row sum from one."""
        return max(float(np.max(np.abs(m.sum(axis=-1) - 1.0))) for m in self.maps.values())


@dataclass
class _Context:
    train: bool
    rng: Optional[np.random.Generator]
    dropout: float
    bundle: Optional[AttentionMapBundle] = None

    def drop(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.dropout, self.rng, self.train)


# ----------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------


def _bn(x: Tensor, params: Parameters, prefix: str, ctx: _Context) -> Tensor:
    return F.batch_norm(
        x,
        params[f"{prefix}.gamma"],
        params[f"{prefix}.beta"],
        params.bn_states[prefix],
        ctx.train,
    )


def _ln_channels(x: Tensor, params: Parameters, prefix: str) -> Tensor:
    return F.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], axis=1)


def conv_encoder(x: Tensor, cfg: ModelConfig, params: Parameters, ctx: _Context) -> Tensor:
    """
    Three ConvBlocks: 3x3 conv, batch norm, ReLU, max-pool, dropout.

    ``(B, 7, T, 64) -> (B, C, T', F')`` with the pooling profile's kernels.
    """
    for i, kernel in enumerate(cfg.pooling.conv_kernels()):
        p = f"encoder.{i}"
        x = F.conv2d(x, params[f"{p}.conv.weight"])
        x = F.channel_bias(x, params[f"{p}.conv.bias"])
        x = _bn(x, params, f"{p}.bn", ctx)
        x = F.relu(x)
        x = F.max_pool2d(x, kernel)
        x = ctx.drop(x)
    return x


def lpu(z: Tensor, weight: Tensor) -> Tensor:
    """Local perception unit: ``z + DWConv3x3(z)``."""
    return z + F.depthwise_conv2d(z, weight)


def multi_head_attention(
    seq: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    heads: int,
) -> tuple[Tensor, np.ndarray]:
    """
    Scaled dot-product self-attention over ``(N, L, D)`` sequences.

    Projections map D to ``H * D_h`` and back; no biases.

    Returns
    -------
    out : Tensor
        Shape ``(N, L, D)``.
    attention : np.ndarray
        Maps of shape ``(N, H, L, L)``; rows sum to one.
    """
    n, length, _ = seq.shape
    inner = w_q.shape[1]
    dh = inner // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(n, length, heads, dh).permute(0, 2, 1, 3)

    q = split(seq @ w_q)
    k = split(seq @ w_k)
    v = split(seq @ w_v)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = F.softmax_last(scores)
    heads_out = (attn @ v).permute(0, 2, 1, 3).reshape(n, length, inner)
    return heads_out @ w_o, attn.data


def _attention_params(params: Parameters, prefix: str) -> tuple[Tensor, ...]:
    return tuple(params[f"{prefix}.{n}"] for n in ("w_q", "w_k", "w_v", "w_o"))


def channel_attention_ule(
    z: Tensor,
    kernel: tuple[int, int],
    params: Parameters,
    prefix: str,
    heads: int,
    ctx: _Context,
    block: int = 0,
) -> Tensor:
    """
    Channel attention over unfolded local embeddings.

    The T-F plane is cut into ``P_T x P_F`` patches; each patch position
    becomes a batch item whose sequence is the C channels and whose
    embedding is the ``P_T * P_F`` local bins. The result is folded back,
    added to the input, passed through dropout and layer-normalised over C.
    """
    b, c, t, f = z.shape
    pt, pf = kernel
    d = pt * pf
    nt, nf = t // pt, f // pf
    u = F.unfold(z, pt, pf)
    seq = u.reshape(b, c, d, nt, nf).permute(0, 3, 4, 1, 2).reshape(b * nt * nf, c, d)
    out, attn = multi_head_attention(seq, *_attention_params(params, prefix), heads)
    restored = out.reshape(b, nt, nf, c, d).permute(0, 3, 4, 1, 2).reshape(b, c * d, nt, nf)
    folded = F.fold(restored, pt, pf)
    if ctx.bundle is not None:
        ctx.bundle.maps[(block, AttentionDomain.CHANNEL)] = attn
        ctx.bundle.channel_grids[block] = (b, nt, nf)
    return _ln_channels(z + ctx.drop(folded), params, f"{prefix}.ln")


def axis_attention(
    z: Tensor,
    domain: AttentionDomain,
    params: Parameters,
    prefix: str,
    heads: int,
    ctx: _Context,
    block: int = 0,
) -> Tensor:
    """
    Spectral or temporal attention with C as the embedding.

    Spectral attention attends over F' (T' folded into the batch);
    temporal attention attends over T' (F' folded into the batch).
    """
    b, c, t, f = z.shape
    match domain:
        case AttentionDomain.SPECTRAL:
            seq = z.permute(0, 2, 3, 1).reshape(b * t, f, c)
        case AttentionDomain.TEMPORAL:
            seq = z.permute(0, 3, 2, 1).reshape(b * f, t, c)
        case _:
            raise ConfigurationError(f"axis_attention does not handle domain {domain}.")
    out, attn = multi_head_attention(seq, *_attention_params(params, prefix), heads)
    if domain is AttentionDomain.SPECTRAL:
        restored = out.reshape(b, t, f, c).permute(0, 3, 1, 2)
    else:
        restored = out.reshape(b, f, t, c).permute(0, 3, 2, 1)
    if ctx.bundle is not None:
        ctx.bundle.maps[(block, domain)] = attn
    return _ln_channels(z + ctx.drop(restored), params, f"{prefix}.ln")


def irffn(z: Tensor, params: Parameters, prefix: str, ctx: _Context) -> Tensor:
    """
    Inverted residual feed-forward network.

    LN, 1x1 expansion to 4C, GeLU, BN; depthwise 3x3 with a residual at 4C,
    GeLU, BN; 1x1 projection to C, BN; residual with the module input.
    """
    y = _ln_channels(z, params, f"{prefix}.ln")
    e = F.pointwise_conv(y, params[f"{prefix}.expand.weight"])
    e = F.channel_bias(e, params[f"{prefix}.expand.bias"])
    e = _bn(F.gelu(e), params, f"{prefix}.bn1", ctx)
    h = e + F.depthwise_conv2d(e, params[f"{prefix}.dw.weight"])
    h = _bn(F.gelu(h), params, f"{prefix}.bn2", ctx)
    out = F.pointwise_conv(h, params[f"{prefix}.project.weight"])
    out = F.channel_bias(out, params[f"{prefix}.project.bias"])
    out = _bn(out, params, f"{prefix}.bn3", ctx)
    return z + out


def cst_block(z: Tensor, cfg: ModelConfig, params: Parameters, block: int, ctx: _Context) -> Tensor:
    p = f"blocks.{block}"
    z = lpu(z, params[f"{p}.lpu.weight"])
    for domain in cfg.attention_order:
        prefix = f"{p}.{_DOMAIN_KEY[domain]}"
        if domain is AttentionDomain.CHANNEL:
            z = channel_attention_ule(
                z, cfg.ule_kernels[block], params, prefix, cfg.heads, ctx, block
            )
        else:
            z = axis_attention(z, domain, params, prefix, cfg.heads, ctx, block)
    return irffn(z, params, f"{p}.irffn", ctx)


def fc_head(z: Tensor, cfg: ModelConfig, params: Parameters, ctx: _Context) -> Tensor:
    """``(B, C, T', F') -> (B, T_out, N_cls * N_T * 3)`` with tanh output."""
    b, c, t, f = z.shape
    x = z.permute(0, 2, 1, 3).reshape(b, t, c * f)
    x = F.avg_pool2d(x, (cfg.pooling.head_time_pool(), 1))
    x = ctx.drop(F.linear(x, params["head.fc1.weight"], params["head.fc1.bias"]))
    x = F.linear(x, params["head.fc2.weight"], params["head.fc2.bias"])
    return F.tanh(x)


# ----------------------------------------------------------------------
# forward
# ----------------------------------------------------------------------


def as_batch(x: Tensor | FeatureTensor | np.ndarray, dtype: np.dtype) -> Tensor:
    """Turn ``(7, T, F)`` or ``(B, 7, T, F)`` input into a batched tensor."""
    if isinstance(x, FeatureTensor):
        x = x.data
    if isinstance(x, Tensor):
        return x if x.ndim == 4 else x.reshape(1, *x.shape)
    data = np.asarray(x)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise DataError(f"Model input needs shape (B, 7, T, F); got {data.shape}.")
    return Tensor(data.astype(dtype, copy=False))


def _forward(
    x: Tensor | FeatureTensor | np.ndarray,
    cfg: ModelConfig,
    params: Parameters,
    train: bool,
    rng: Optional[np.random.Generator],
    bundle: Optional[AttentionMapBundle],
) -> Tensor:
    xb = as_batch(x, params.dtype)
    if xb.shape[1] != cfg.in_channels or xb.shape[3] != cfg.mel_bands:
        raise DataError(
            f"Input shape {xb.shape} does not match the model "
            f"({cfg.in_channels} channels, {cfg.mel_bands} bands)."
        )
    cfg.validate(xb.shape[2])
    ctx = _Context(train=train, rng=rng, dropout=cfg.dropout, bundle=bundle)
    z = conv_encoder(xb, cfg, params, ctx)
    for block in range(cfg.n_cst):
        z = cst_block(z, cfg, params, block, ctx)
    return fc_head(z, cfg, params, ctx)


def forward(
    x: Tensor | FeatureTensor | np.ndarray,
    cfg: ModelConfig,
    params: Parameters,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Run the CST-former.

    Parameters
    ----------
    x : Tensor, FeatureTensor or np.ndarray
        ``(7, T, 64)`` or ``(B, 7, T, 64)`` features.
    cfg : ModelConfig
        Architecture; validated against T.
    params : Parameters
        Weights and running statistics.
    train : bool, default False
        Batch statistics and dropout when True.
    rng : numpy.random.Generator, optional
        Dropout generator (train mode).

    Returns
    -------
    Tensor
        ``(B, T/5, N_cls * N_T * 3)``, componentwise in [-1, 1].

    Raises
    ------
    ConfigurationError
        If T is incompatible with the pooling or ULE kernels.
    DataError
        If the channel or band extents do not match the model.
    """
    return _forward(x, cfg, params, train, rng, None)


def forward_with_attention(
    x: Tensor | FeatureTensor | np.ndarray,
    cfg: ModelConfig,
    params: Parameters,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, AttentionMapBundle]:
    """``forward`` that also returns every attention map."""
    bundle = AttentionMapBundle()
    out = _forward(x, cfg, params, train, rng, bundle)
    return out, bundle


def to_multi_accdoa(output: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Reshape ``(..., T, N_cls*N_T*3)`` to ``(..., T, N_cls, N_T, 3)``."""
    output = np.asarray(output)
    return output.reshape(*output.shape[:-1], cfg.n_classes, cfg.n_tracks, cfg.doa_dim)


def make_predictor(params: Parameters, cfg: ModelConfig):
    """
    Evaluation-mode predictor ``features (B, 7, T, F) -> (B, T/5, N_cls, N_T, 3)``.

    Uses a detached copy of the weights so no graph is recorded.
    """
    frozen = params.detached()

    def predict(features: np.ndarray) -> np.ndarray:
        out = forward(features, cfg, frozen, train=False)
        return to_multi_accdoa(out.data, cfg)

    return predict
