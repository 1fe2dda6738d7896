"""Central finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Layer


class GradientCheckError(AssertionError):
    pass


@dataclass
class GradientReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    per_tensor: dict[str, float] = field(default_factory=dict)
    coordinates: int = 0

    def __str__(self):
        where = f"{self.worst[0]}{list(self.worst[1])}" if self.worst else "-"
        return (f"max relative error {self.max_rel_error:.3e} over {self.coordinates} "
                f"coordinates (worst at {where})")


def relative_error(analytic, numeric, floor):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(fragment: Layer, inputs, tolerance: float = 1e-5, step: float = 1e-5,
                   seed: int = 0, floor: float = 1e-7, check_inputs: bool = True,
                   raise_on_failure: bool = True) -> GradientReport:
    """Compare ``fragment.backward`` with central differences.

    The scalar objective is ``sum(w * fragment.forward(*inputs))`` with fixed
    random weights ``w``.  Every input coordinate and every parameter
    coordinate is perturbed by ``+-step``; the default sits near the
    cube root of float64 epsilon, where truncation and round-off error of a
    central difference balance.  Per-coordinate relative error is
    ``|a - n| / max(|a|, |n|, floor)``.  All arrays should be float64.
    """
    single = not isinstance(inputs, (tuple, list))
    inputs = [inputs] if single else [np.array(x, copy=True) for x in inputs]
    if single:
        inputs[0] = np.array(inputs[0], copy=True)
    rng = np.random.default_rng(seed)

    out = fragment.forward(*inputs)
    weights = rng.standard_normal(out.shape)

    def objective():
        return float(np.sum(weights * fragment.forward(*inputs)))

    named = list(fragment.named_params())
    for _, p in named:
        p.zero_grad()
    fragment.forward(*inputs)
    grads_in = fragment.backward(weights)
    if not isinstance(grads_in, (tuple, list)):
        grads_in = [grads_in]
    analytic = {f"input{i}": np.asarray(g) for i, g in enumerate(grads_in)} if check_inputs else {}
    targets = {f"input{i}": x for i, x in enumerate(inputs)} if check_inputs else {}
    for name, p in named:
        analytic[name] = p.grad.copy()
        targets[name] = p.value

    report = GradientReport(0.0, None)
    for name, array in targets.items():
        numeric = np.zeros_like(array, dtype=float)
        for idx in np.ndindex(array.shape):
            orig = array[idx]
            array[idx] = orig + step
            f_plus = objective()
            array[idx] = orig - step
            f_minus = objective()
            array[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2 * step)
        err = relative_error(analytic[name], numeric, floor)
        report.coordinates += array.size
        if err.size:
            worst = float(err.max())
            report.per_tensor[name] = worst
            if worst >= report.max_rel_error:
                report.max_rel_error = worst
                report.worst = (name, tuple(int(i) for i in np.unravel_index(int(err.argmax()), err.shape)))
    if raise_on_failure and report.max_rel_error > tolerance:
        raise GradientCheckError(str(report))
    return report
