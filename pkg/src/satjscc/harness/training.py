"""Training driver: encoder -> channel -> decoder under the batch MSE loss."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..channel import draw_batch
from ..jscc import ArchitectureConfig, AttentionConfig, JsccModel, context_matrix
from ..nn import Adam, mse_loss
from ..seeding import make_rng
from .config import ChannelSetup, Condition, ExperimentPlan
from .data import Dataset
from .metrics import psnr_from_mse

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    train_mse: float
    val_mse: float
    val_psnr: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    initial_val_mse: float = math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f.name for f in EpochRecord.__dataclass_fields__.values()])
        for r in self.records:
            writer.writerow([r.epoch, f"{r.learning_rate:.6g}", f"{r.train_loss:.9g}",
                             f"{r.train_mse:.9g}", f"{r.val_mse:.9g}", f"{r.val_psnr:.6f}"])
        return buf.getvalue()


@dataclass(frozen=True)
class TrainingJob:
    """What to train: a model shape, the conditions its channel draws come
    from (one for a per-condition model, a grid for an adaptive one) and a
    seed."""

    arch: ArchitectureConfig
    attention: AttentionConfig
    conditions: tuple[Condition, ...]
    seed: int = 0


def baseline_job(arch, attention, condition: Condition, seed: int) -> TrainingJob:
    return TrainingJob(arch, attention, (condition,), seed)


def adaptive_job(arch, attention, setup: ChannelSetup, environment: str, plan: ExperimentPlan,
                 seed: int) -> TrainingJob:
    grid = tuple(setup.condition(environment, elev, state)
                 for elev in plan.elevations for state in plan.states)
    return TrainingJob(arch, attention, grid, seed)


def _validation_mse(model: JsccModel, images, job: TrainingJob, setup: ChannelSetup,
                    contexts, batch_size: int) -> float:
    rng = make_rng(job.seed, "validation")
    k = model.arch.symbol_count
    total, count = 0.0, 0
    for start in range(0, len(images), batch_size):
        x = images[start:start + batch_size]
        picks = [(start + i) % len(job.conditions) for i in range(len(x))]
        conds = [job.conditions[p] for p in picks]
        real = draw_batch(k, [c.loo for c in conds], [c.snr_db for c in conds], rng,
                          setup.mode, model.arch.power, setup.random_phase)
        ctx = contexts[picks] if contexts is not None else None
        x_hat = np.clip(model.forward_train(x, ctx, real), 0.0, 1.0)
        total += float(np.sum((x_hat.astype(np.float64) - x) ** 2))
        count += x.size
    return total / count


def train(job: TrainingJob, plan: ExperimentPlan, dataset: Dataset, setup: ChannelSetup,
          dtype=np.float32) -> tuple[JsccModel, TrainingLog]:
    """Fit a model with Adam, a fresh channel draw per sample per step, and
    early stopping on validation MSE. The best-validation weights are kept."""
    train_x = dataset.subset("train")
    val_x = dataset.subset("val")
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("dataset needs non-empty train and val splits")
    if tuple(train_x.shape[1:]) != job.arch.input_shape:
        raise ValueError(f"dataset shape {train_x.shape[1:]} != model input {job.arch.input_shape}")
    model = JsccModel(job.arch, job.attention, seed=job.seed, dtype=dtype)
    contexts = context_matrix([c.context() for c in job.conditions], job.attention) \
        if job.attention.enabled else None
    data_rng = make_rng(job.seed, "batches")
    chan_rng = make_rng(job.seed, "channel")
    cond_rng = make_rng(job.seed, "conditions")
    opt = Adam(model.params(), learning_rate=plan.learning_rate)
    k = job.arch.symbol_count
    pixels = int(np.prod(job.arch.input_shape))

    log_ = TrainingLog()
    best = math.inf
    best_values = None
    stale = 0
    log_.initial_val_mse = _validation_mse(model, val_x, job, setup, contexts, plan.batch_size)
    for epoch in range(plan.epochs):
        opt.learning_rate = plan.learning_rate_at(epoch)
        order = data_rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), plan.batch_size):
            x = train_x[order[start:start + plan.batch_size]]
            picks = cond_rng.integers(len(job.conditions), size=len(x))
            conds = [job.conditions[p] for p in picks]
            real = draw_batch(k, [c.loo for c in conds], [c.snr_db for c in conds], chan_rng,
                              setup.mode, job.arch.power, setup.random_phase)
            ctx = contexts[picks] if contexts is not None else None
            opt.zero_grad()
            x_hat = model.forward_train(x, ctx, real)
            loss, grad = mse_loss(x, x_hat)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            model.backward(grad)
            opt.step()
            losses.append(loss * len(x))
        train_loss = sum(losses) / len(order)
        val = _validation_mse(model, val_x, job, setup, contexts, plan.batch_size)
        log_.records.append(EpochRecord(epoch, opt.learning_rate, train_loss, train_loss / pixels,
                                        val, psnr_from_mse(val)))
        if val < best:
            best, stale, log_.best_epoch = val, 0, epoch
            best_values = [p.value.copy() for p in model.params()]
        else:
            stale += 1
            if stale >= plan.patience:
                log_.stopped_early = True
                break
    if best_values is None:
        raise DivergenceError("validation MSE was never finite")
    for p, v in zip(model.params(), best_values):
        p.value = v
    model.metadata.update({
        "kind": model.kind,
        "epochs_run": len(log_.records),
        "best_epoch": log_.best_epoch,
        "dataset": dataset.fingerprint()[:16],
        "conditions": [dict(asdict(c), state=c.state.label, loo=asdict(c.loo)) for c in job.conditions],
    })
    log.info("trained %s model (seed %d): best val PSNR %.2f dB at epoch %d",
             model.kind, job.seed, psnr_from_mse(best), log_.best_epoch)
    return model, log_
