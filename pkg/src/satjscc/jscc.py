"""Residual encoder/decoder with optional channel-conditioned attention.

Encoder: [residual block (f, s_i) -> attention?] x num_blocks -> conv(c)
-> PReLU -> power normalization. The c output maps are paired into complex
symbols: the first c/2 maps are real parts, the last c/2 imaginary parts,
so ``k = H' * W' * c / 2``.

Decoder mirrors it: conv-transpose(c -> f) -> [residual transpose block ->
attention?] x num_blocks (strides reversed) -> conv-transpose(f -> bands) ->
PReLU.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .channel import ChannelLayer, ChannelRealization
from .fading import ChannelState, LooParams
from .nn import (Concat, Conv2D, ConvTranspose2D, Dense, GlobalAvgPool, Layer, PowerNormalize,
                 PReLU, ReLU, Sigmoid, assign_params, load_checkpoint, same_padding,
                 save_checkpoint)


class ConfigError(ValueError):
    pass


class ContextError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    input_shape: tuple[int, int, int] = (3, 16, 16)
    num_blocks: int = 4
    filters: int = 16
    kernel: int = 3
    strides: tuple[int, ...] = (2, 2, 1, 1)
    channel_filters_c: int = 16
    power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "strides", tuple(int(v) for v in self.strides))
        self.validate()

    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (bands, H, W), got {self.input_shape}")
        if min(self.num_blocks, self.filters, self.kernel, self.channel_filters_c) < 1:
            raise ConfigError("block count, filters, kernel and c must be positive")
        if len(self.strides) != self.num_blocks or min(self.strides) < 1:
            raise ConfigError(f"need {self.num_blocks} positive strides, got {self.strides}")
        if self.channel_filters_c % 2:
            raise ConfigError("c must be even to pair maps into complex symbols")
        if self.power <= 0:
            raise ConfigError("power must be positive")
        _, h, w = self.input_shape
        for s in self.strides:
            if h % s or w % s:
                raise ConfigError(f"stride {s} does not divide spatial size {h}x{w}; "
                                  "the decoder could not restore the input shape")
            h, w = same_padding(h, self.kernel, s)[0], same_padding(w, self.kernel, s)[0]
        ratio = self.compression_ratio
        if not 0 < ratio < 1:
            raise ConfigError(f"compression ratio {ratio:.4f} outside (0, 1)")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        _, h, w = self.input_shape
        for s in self.strides:
            h, w = -(-h // s), -(-w // s)
        return self.channel_filters_c, h, w

    @property
    def symbol_count(self) -> int:
        c, h, w = self.latent_shape
        return h * w * c // 2

    @property
    def source_dim(self) -> int:
        b, h, w = self.input_shape
        return b * h * w

    @property
    def compression_ratio(self) -> float:
        return self.symbol_count / self.source_dim

    @classmethod
    def for_ratio(cls, ratio: float, **kwargs) -> "ArchitectureConfig":
        """Pick the even ``c`` whose compression ratio is closest to ``ratio``."""
        probe = cls(**{**kwargs, "channel_filters_c": 2})
        _, h, w = probe.latent_shape
        c = 2 * max(1, round(ratio * probe.source_dim / (h * w)))
        return replace(probe, channel_filters_c=c)

    @classmethod
    def paper_scale(cls, **kwargs) -> "ArchitectureConfig":
        """256 filters, 4 blocks, 12-band 120x120 patches. Used for parameter
        accounting only; it is far too large to train with this toolkit."""
        base = dict(input_shape=(12, 120, 120), num_blocks=4, filters=256, kernel=3,
                    strides=(2, 2, 1, 1), channel_filters_c=32)
        base.update(kwargs)
        return cls(**base)


@dataclass(frozen=True)
class AttentionConfig:
    enabled: bool = False
    hidden_dim: int | None = None
    snr_range_db: tuple[float, float] = (30.0, 45.0)
    use_loo: bool = False
    alpha_range_db: tuple[float, float] = (-25.0, 0.0)
    psi_range_db: tuple[float, float] = (0.0, 8.0)
    mp_range_db: tuple[float, float] = (-30.0, -10.0)

    def __post_init__(self):
        for name in ("snr_range_db", "alpha_range_db", "psi_range_db", "mp_range_db"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ConfigError(f"{name} must be increasing")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")

    @property
    def context_dim(self) -> int:
        return 4 + (3 if self.use_loo else 0)

    def hidden_for(self, channels: int) -> int:
        return self.hidden_dim if self.hidden_dim is not None else max(channels // 16, 4)


@dataclass(frozen=True)
class ChannelContext:
    snr_db: float
    state: ChannelState
    loo: LooParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "state", ChannelState.parse(self.state))


def _unit(value, bounds):
    lo, hi = bounds
    return min(max((value - lo) / (hi - lo), 0.0), 1.0)


def context_vector(ctx: ChannelContext, cfg: AttentionConfig) -> np.ndarray:
    """Normalized attention input: [snr, one-hot(state), (alpha, psi, mp)]."""
    vec = [_unit(ctx.snr_db, cfg.snr_range_db)]
    one_hot = [0.0, 0.0, 0.0]
    one_hot[int(ctx.state)] = 1.0
    vec += one_hot
    if cfg.use_loo:
        if ctx.loo is None:
            raise ContextError("attention config uses Loo parameters but the context has none")
        vec += [_unit(ctx.loo.alpha_db, cfg.alpha_range_db), _unit(ctx.loo.psi_db, cfg.psi_range_db),
                _unit(ctx.loo.mp_db, cfg.mp_range_db)]
    return np.array(vec)


def context_matrix(contexts: Sequence[ChannelContext], cfg: AttentionConfig) -> np.ndarray:
    return np.stack([context_vector(c, cfg) for c in contexts])


class ResidualBlock(Layer):
    """conv(f, k, s) -> PReLU -> conv(f, k, 1), plus a skip path (1x1 conv
    with stride s when the shape changes, identity otherwise), summed and
    passed through PReLU. ``transpose=True`` swaps every convolution for its
    transposed counterpart (upsampling by s)."""

    def __init__(self, in_channels, filters, stride=1, kernel=3, transpose=False, rng=None,
                 dtype=np.float32):
        conv = ConvTranspose2D if transpose else Conv2D
        self.conv1 = conv(in_channels, filters, kernel, stride, rng, dtype)
        self.act1 = PReLU(filters, dtype=dtype)
        self.conv2 = conv(filters, filters, kernel, 1, rng, dtype)
        self.skip = conv(in_channels, filters, 1, stride, rng, dtype) \
            if (in_channels != filters or stride != 1) else None
        self.act_out = PReLU(filters, dtype=dtype)

    def forward(self, x):
        main = self.conv2.forward(self.act1.forward(self.conv1.forward(x)))
        shortcut = self.skip.forward(x) if self.skip is not None else x
        return self.act_out.forward(main + shortcut)

    def backward(self, grad):
        g = self.act_out.backward(grad)
        dx = self.conv1.backward(self.act1.backward(self.conv2.backward(g)))
        return dx + (self.skip.backward(g) if self.skip is not None else g)


class AttentionModule(Layer):
    """Channel-conditioned feature rescaling.

    GAP(features) ++ context -> Dense(hidden) -> ReLU -> Dense(channels) ->
    Sigmoid gives one factor per channel, which multiplies the features.
    The context is set with :meth:`set_context` and treated as a constant.
    """

    def __init__(self, channels, context_dim, hidden, rng=None, dtype=np.float32):
        self.pool = GlobalAvgPool()
        self.concat = Concat()
        self.fc1 = Dense(channels + context_dim, hidden, rng, dtype)
        self.relu = ReLU()
        self.fc2 = Dense(hidden, channels, rng, dtype)
        self.gate = Sigmoid()
        self._context = None
        self._context_dim = context_dim

    def set_context(self, context: np.ndarray):
        self._context = context

    def scales(self, x):
        if self._context is None:
            raise ContextError("attention module needs a channel context")
        ctx = np.asarray(self._context, dtype=x.dtype)
        if ctx.shape != (x.shape[0], self._context_dim):
            raise ContextError(f"context shape {ctx.shape} != ({x.shape[0]}, {self._context_dim})")
        pooled = self.pool.forward(x)
        hidden = self.relu.forward(self.fc1.forward(self.concat.forward(pooled, ctx)))
        return self.gate.forward(self.fc2.forward(hidden))

    def forward(self, x):
        s = self.scales(x)
        self._x, self._s = x, s
        return x * s[:, :, None, None]

    def backward(self, grad):
        x, s = self._x, self._s
        ds = np.sum(grad * x, axis=(2, 3))
        d_concat = self.fc1.backward(self.relu.backward(self.fc2.backward(self.gate.backward(ds))))
        d_pooled, _ = self.concat.backward(d_concat)
        return grad * s[:, :, None, None] + self.pool.backward(d_pooled)


class Encoder(Layer):
    def __init__(self, arch: ArchitectureConfig, attention: AttentionConfig, rng, dtype=np.float32):
        bands = arch.input_shape[0]
        self.blocks = []
        self.attention = []
        channels = bands
        for stride in arch.strides:
            self.blocks.append(ResidualBlock(channels, arch.filters, stride, arch.kernel, False, rng, dtype))
            channels = arch.filters
            if attention.enabled:
                self.attention.append(AttentionModule(channels, attention.context_dim,
                                                      attention.hidden_for(channels), rng, dtype))
        self.head = Conv2D(arch.filters, arch.channel_filters_c, arch.kernel, 1, rng, dtype)
        self.head_act = PReLU(arch.channel_filters_c, dtype=dtype)
        self.normalize = PowerNormalize(arch.power)

    def set_context(self, context):
        for module in self.attention:
            module.set_context(context)

    def forward(self, x):
        for i, block in enumerate(self.blocks):
            x = block.forward(x)
            if self.attention:
                x = self.attention[i].forward(x)
        x = self.normalize.forward(self.head_act.forward(self.head.forward(x)))
        self._latent_shape = x.shape
        b = x.shape[0]
        return x.reshape(b, 2, -1)

    def backward(self, grad):
        g = grad.reshape(self._latent_shape)
        g = self.head.backward(self.head_act.backward(self.normalize.backward(g)))
        for i in reversed(range(len(self.blocks))):
            if self.attention:
                g = self.attention[i].backward(g)
            g = self.blocks[i].backward(g)
        return g


class Decoder(Layer):
    def __init__(self, arch: ArchitectureConfig, attention: AttentionConfig, rng, dtype=np.float32):
        self._latent = arch.latent_shape
        self.entry = ConvTranspose2D(arch.channel_filters_c, arch.filters, arch.kernel, 1, rng, dtype)
        self.blocks = []
        self.attention = []
        for stride in reversed(arch.strides):
            self.blocks.append(ResidualBlock(arch.filters, arch.filters, stride, arch.kernel, True, rng, dtype))
            if attention.enabled:
                self.attention.append(AttentionModule(arch.filters, attention.context_dim,
                                                      attention.hidden_for(arch.filters), rng, dtype))
        self.exit = ConvTranspose2D(arch.filters, arch.input_shape[0], arch.kernel, 1, rng, dtype)
        self.exit_act = PReLU(arch.input_shape[0], dtype=dtype)

    def set_context(self, context):
        for module in self.attention:
            module.set_context(context)

    def forward(self, pairs):
        b = pairs.shape[0]
        x = self.entry.forward(pairs.reshape((b,) + self._latent))
        for i, block in enumerate(self.blocks):
            x = block.forward(x)
            if self.attention:
                x = self.attention[i].forward(x)
        return self.exit_act.forward(self.exit.forward(x))

    def backward(self, grad):
        g = self.exit.backward(self.exit_act.backward(grad))
        for i in reversed(range(len(self.blocks))):
            if self.attention:
                g = self.attention[i].backward(g)
            g = self.blocks[i].backward(g)
        g = self.entry.backward(g)
        return g.reshape(g.shape[0], 2, -1)


def pairs_to_complex(pairs: np.ndarray) -> np.ndarray:
    return pairs[:, 0].astype(np.float64) + 1j * pairs[:, 1].astype(np.float64)


def complex_to_pairs(z: np.ndarray, dtype=np.float32) -> np.ndarray:
    z = np.atleast_2d(z)
    return np.stack([z.real, z.imag], axis=1).astype(dtype)


class JsccPipeline(Layer):
    """encoder -> channel layer -> decoder as one differentiable fragment."""

    def __init__(self, encoder: Encoder, channel: ChannelLayer, decoder: Decoder):
        self.encoder = encoder
        self.channel = channel
        self.decoder = decoder

    def forward(self, x):
        return self.decoder.forward(self.channel.forward(self.encoder.forward(x)))

    def backward(self, grad):
        return self.encoder.backward(self.channel.backward(self.decoder.backward(grad)))


@dataclass
class ParameterReport:
    total: int
    encoder: int
    decoder: int
    attention: int

    @property
    def attention_ratio(self) -> float:
        return self.attention / self.total if self.total else 0.0


class JsccModel:
    """Encoder/decoder parameter bundle plus its configuration."""

    def __init__(self, arch: ArchitectureConfig, attention: AttentionConfig | None = None,
                 seed: int = 0, dtype=np.float32, metadata: dict | None = None):
        self.arch = arch
        self.attention = attention or AttentionConfig()
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.metadata = dict(metadata or {})
        rng = np.random.default_rng(self.seed)
        self.encoder = Encoder(arch, self.attention, rng, self.dtype)
        self.decoder = Decoder(arch, self.attention, rng, self.dtype)
        self.channel = ChannelLayer()
        self.pipeline = JsccPipeline(self.encoder, self.channel, self.decoder)

    @property
    def adaptive(self) -> bool:
        return self.attention.enabled

    @property
    def kind(self) -> str:
        return "adaptive" if self.adaptive else "baseline"

    def named_params(self):
        yield from self.encoder.named_params("encoder.")
        yield from self.decoder.named_params("decoder.")

    def params(self):
        return [p for _, p in self.named_params()]

    def set_context(self, contexts):
        """Accepts a (B, m) matrix, a sequence of ChannelContext, or None."""
        if not self.adaptive:
            return
        if contexts is None:
            raise ContextError("adaptive model requires a channel context")
        if not isinstance(contexts, np.ndarray):
            contexts = context_matrix(list(contexts), self.attention)
        self.encoder.set_context(contexts)
        self.decoder.set_context(contexts)

    def _batch_contexts(self, ctx, batch):
        if ctx is None or isinstance(ctx, np.ndarray):
            return ctx
        if isinstance(ctx, ChannelContext):
            return [ctx] * batch
        return list(ctx)

    def _images(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.arch.input_shape:
            raise ConfigError(f"image shape {x.shape[1:]} != {self.arch.input_shape}")
        return x

    def encode(self, x, ctx=None) -> np.ndarray:
        """Images (B, bands, H, W) -> complex symbols (B, k)."""
        x = self._images(x)
        self.set_context(self._batch_contexts(ctx, x.shape[0]))
        return pairs_to_complex(self.encoder.forward(x))

    def decode(self, z_hat, ctx=None, clamp: bool = True) -> np.ndarray:
        pairs = complex_to_pairs(z_hat, self.dtype)
        self.set_context(self._batch_contexts(ctx, pairs.shape[0]))
        out = self.decoder.forward(pairs)
        return np.clip(out, 0.0, 1.0) if clamp else out

    def forward_train(self, x, ctx, realization: ChannelRealization) -> np.ndarray:
        x = self._images(x)
        self.set_context(self._batch_contexts(ctx, x.shape[0]))
        self.channel.set_realization(realization)
        return self.pipeline.forward(x)

    def backward(self, grad):
        return self.pipeline.backward(grad)

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def parameter_report(self) -> ParameterReport:
        return parameter_report(self)

    # -- persistence -------------------------------------------------------
    def header(self) -> dict:
        return {
            "kind": "jscc-model",
            "architecture": asdict(self.arch),
            "attention": asdict(self.attention),
            "seed": self.seed,
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        save_checkpoint(path, _Params(self), self.header())

    @classmethod
    def load(cls, path) -> "JsccModel":
        header, arrays = load_checkpoint(path)
        if header.get("kind") != "jscc-model":
            raise ConfigError("checkpoint does not hold a JSCC model")
        model = cls(ArchitectureConfig(**header["architecture"]),
                    AttentionConfig(**header["attention"]), seed=header["seed"],
                    metadata=header.get("metadata"))
        assign_params(_Params(model), arrays)
        return model

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, p in self.named_params():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(p.value).tobytes())
        return digest.hexdigest()


class _Params(Layer):
    """Adapter exposing a model's parameters through the Layer protocol."""

    def __init__(self, model: JsccModel):
        self._model = model

    def named_params(self, prefix: str = ""):
        return self._model.named_params()


def build_model(arch: ArchitectureConfig, attention: AttentionConfig | None = None,
                seed: int = 0, dtype=np.float32) -> JsccModel:
    return JsccModel(arch, attention, seed, dtype)


def parameter_report(model: JsccModel) -> ParameterReport:
    enc = model.encoder.num_params()
    dec = model.decoder.num_params()
    att = sum(m.num_params() for m in model.encoder.attention + model.decoder.attention)
    return ParameterReport(total=enc + dec, encoder=enc, decoder=dec, attention=att)


def count_parameters(arch: ArchitectureConfig, attention: AttentionConfig) -> ParameterReport:
    """Closed-form parameter count (no weight allocation), usable at paper scale."""
    k, f, bands, c = arch.kernel, arch.filters, arch.input_shape[0], arch.channel_filters_c

    def conv(cin, cout, kern):
        return cin * cout * kern * kern + cout

    def block(cin, stride):
        n = conv(cin, f, k) + f + conv(f, f, k) + f
        if cin != f or stride != 1:
            n += conv(cin, f, 1)
        return n

    def attn(ch):
        if not attention.enabled:
            return 0
        hid = attention.hidden_for(ch)
        return (ch + attention.context_dim) * hid + hid + hid * ch + ch

    att_total = 0
    enc = 0
    cin = bands
    for s in arch.strides:
        enc += block(cin, s) + attn(f)
        att_total += attn(f)
        cin = f
    enc += conv(f, c, k) + c
    dec = conv(c, f, k)
    for s in reversed(arch.strides):
        dec += block(f, s) + attn(f)
        att_total += attn(f)
    dec += conv(f, bands, k) + bands
    return ParameterReport(total=enc + dec, encoder=enc, decoder=dec, attention=att_total)
