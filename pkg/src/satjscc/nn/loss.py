import numpy as np


def mse_loss(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of per-sample squared error norms, and its gradient w.r.t. ``x_hat``.

    ``x`` and ``x_hat`` are (N, ...) arrays; the loss is
    ``(1/N) * sum_i ||x_i - x_hat_i||^2``.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x_hat - x
    n = x.shape[0]
    return float(np.sum(diff * diff) / n), (2.0 / n) * diff
