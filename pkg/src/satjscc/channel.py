"""The channel law ``z_hat = z * h + n`` and its non-trainable network layer.

Noise convention: ``sigma**2 = P_sig / (2 * 10**(SNR/10))`` is the variance
of *each* of the real and imaginary noise components, so the total complex
noise power is ``2 sigma**2 = P_sig * 10**(-SNR/10)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fading import LooParams, sample_loo
from .linkbudget import noise_sigma_squared
from .nn.core import Layer, ShapeError

PER_SYMBOL = "per-symbol"
BLOCK = "block"
MODES = (PER_SYMBOL, BLOCK)


@dataclass(frozen=True)
class ChannelRealization:
    """Fixed channel draw. ``gains`` broadcasts against the symbols (length
    ``k`` per symbol, or length 1 for block fading); ``noise`` is the drawn
    complex noise vector with the symbols' shape."""

    gains: np.ndarray
    noise: np.ndarray
    noise_sigma: float | np.ndarray

    def apply(self, z: np.ndarray) -> np.ndarray:
        return z * self.gains + self.noise


def draw_realization(k: int, state_params: LooParams, snr_db: float, rng: np.random.Generator,
                     mode: str = PER_SYMBOL, signal_power: float = 1.0,
                     random_phase: bool = False) -> ChannelRealization:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if k <= 0:
        raise ValueError("symbol count must be positive")
    gains = sample_loo(state_params, k if mode == PER_SYMBOL else 1, rng, random_phase=random_phase)
    sigma = math.sqrt(noise_sigma_squared(snr_db, signal_power))
    g = rng.standard_normal((2, k))
    noise = sigma * (g[0] + 1j * g[1])
    return ChannelRealization(gains, noise, sigma)


def transmit(z: np.ndarray, state_params: LooParams, snr_db: float, mode: str = PER_SYMBOL,
             rng: np.random.Generator | None = None, signal_power: float = 1.0,
             random_phase: bool = False) -> tuple[np.ndarray, ChannelRealization]:
    """Pass one complex symbol vector through a fresh channel draw.

    The input is not modified.
    """
    z = np.asarray(z)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("z must be a non-empty 1-D symbol vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("z has non-finite entries")
    rng = rng if rng is not None else np.random.default_rng()
    realization = draw_realization(z.size, state_params, snr_db, rng, mode, signal_power, random_phase)
    return realization.apply(z), realization


def draw_batch(k: int, params: Sequence[LooParams], snrs_db: Sequence[float],
               rng: np.random.Generator, mode: str = PER_SYMBOL, signal_power: float = 1.0,
               random_phase: bool = False) -> ChannelRealization:
    """One independent realization per batch item, stacked to (B, k)."""
    draws = [draw_realization(k, p, s, rng, mode, signal_power, random_phase)
             for p, s in zip(params, snrs_db, strict=True)]
    return ChannelRealization(
        gains=np.stack([d.gains for d in draws]),
        noise=np.stack([d.noise for d in draws]),
        noise_sigma=np.array([d.noise_sigma for d in draws]),
    )


def identity_realization(batch: int, k: int) -> ChannelRealization:
    return ChannelRealization(np.ones((batch, 1), complex), np.zeros((batch, k), complex), 0.0)


class ChannelLayer(Layer):
    """Applies a fixed realization to real symbol pairs of shape (B, 2, k).

    ``x[:, 0]`` are real parts, ``x[:, 1]`` imaginary parts. The backward
    pass treats gains and noise as constants and multiplies the incoming
    gradient by ``conj(h)``.
    """

    def __init__(self, realization: ChannelRealization | None = None):
        self._realization = realization

    def set_realization(self, realization: ChannelRealization):
        self._realization = realization

    def forward(self, x):
        if self._realization is None:
            raise RuntimeError("channel layer has no realization")
        if x.ndim != 3 or x.shape[1] != 2:
            raise ShapeError(f"channel layer expects (B, 2, k), got {x.shape}")
        r = self._realization
        try:
            gains = np.broadcast_to(r.gains, (x.shape[0], x.shape[2]))
            noise = np.broadcast_to(r.noise, (x.shape[0], x.shape[2]))
        except ValueError:
            raise ShapeError(f"realization shapes {r.gains.shape}/{r.noise.shape} "
                             f"do not match symbols {x.shape}") from None
        self._hr = gains.real.astype(x.dtype)
        self._hi = gains.imag.astype(x.dtype)
        zr, zi = x[:, 0], x[:, 1]
        out_r = self._hr * zr - self._hi * zi + noise.real.astype(x.dtype)
        out_i = self._hi * zr + self._hr * zi + noise.imag.astype(x.dtype)
        return np.stack([out_r, out_i], axis=1)

    def backward(self, grad):
        gr, gi = grad[:, 0], grad[:, 1]
        return np.stack([self._hr * gr + self._hi * gi, -self._hi * gr + self._hr * gi], axis=1)
