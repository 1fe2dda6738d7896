import math

import numpy as np

MAX_PIXEL = 1.0
# sentinel reported when the reconstruction is exact
PSNR_EXACT = math.inf


def mse(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def psnr_from_mse(value: float, max_pixel: float = MAX_PIXEL) -> float:
    if value < 0:
        raise ValueError("mse must be non-negative")
    if value == 0:
        return PSNR_EXACT
    return 10.0 * math.log10(max_pixel * max_pixel / value)


def psnr(x, x_hat, max_pixel: float = MAX_PIXEL) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    return psnr_from_mse(mse(x, x_hat), max_pixel)
