"""Evaluation, sweeps, the channel-mismatch study and report tables.

Every result is a :class:`ResultRow`; every file written here is CSV,
written atomically. Sweep cells are persisted one file per cell under
``<out>/cells`` so an interrupted sweep resumes where it stopped, and
trained models are cached under ``<out>/models``.

Evaluation streams are addressed by (seed, actual condition, realization
index) only. The assumed state never enters the address, so evaluating a
model with the assumed state equal to the actual one reproduces the
matched evaluation exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..channel import draw_batch
from ..fading import ChannelState
from ..jscc import JsccModel
from ..seeding import make_rng
from .config import ChannelSetup, Condition, Config, ExperimentPlan
from .data import Dataset, generate_synthetic_dataset, load_raw_dataset
from .metrics import MAX_PIXEL, psnr_from_mse
from .training import TrainingJob, adaptive_job, baseline_job, train

log = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-9
MISMATCH_PAIRS = ((ChannelState.DEEP_SHADOW, ChannelState.LOS),
                  (ChannelState.LOS, ChannelState.DEEP_SHADOW))


class ResultError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    environment: str
    state_trained: str
    state_actual: str
    elevation: float
    ratio: float
    kind: str
    seed: int
    psnr_db: float
    mse: float
    snr_db: float
    ratio_actual: float
    realizations: int
    psnr_stderr_db: float

    def check(self) -> None:
        expected = psnr_from_mse(self.mse, MAX_PIXEL)
        if math.isinf(expected) and expected == self.psnr_db:
            return
        if not abs(expected - self.psnr_db) <= IDENTITY_TOLERANCE:
            raise ResultError(f"PSNR/MSE mismatch: {self.psnr_db} vs {expected} ({self})")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in self.columns()]

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for name, t in types.items():
            raw = d[name]
            kwargs[name] = int(raw) if t == "int" else float(raw) if t == "float" else raw
        return cls(**kwargs)


def _fmt(value) -> str:
    # repr keeps full float precision so re-read rows pass the identity check
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ResultRow.columns())
    for row in rows:
        row.check()
        writer.writerow(row.values())
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_rows(path: Path, rows) -> None:
    write_atomic(path, rows_to_csv(rows))


def read_rows(path: Path) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [ResultRow.from_dict(d) for d in csv.DictReader(fh)]
    for row in rows:
        row.check()
    return rows


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    mse: float
    psnr_db: float
    realizations: int
    psnr_stderr_db: float


def _chunks(n, size=256):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def evaluate(model: JsccModel, images: np.ndarray, actual: Condition, setup: ChannelSetup,
             seed: int, assumed: Condition | None = None, realizations: int = 10,
             max_realizations: int = 160, psnr_stderr_db: float = 0.1,
             identity_channel: bool = False) -> EvalResult:
    """Mean reconstruction quality of ``images`` sent through ``actual``.

    The encoder and decoder see ``assumed`` (defaults to ``actual``) as
    their channel context. At least ``realizations`` independent channel
    draws per image are averaged; the count doubles until the standard
    error of the PSNR falls below ``psnr_stderr_db`` or reaches
    ``max_realizations``. PSNR is computed from the mean MSE.
    """
    if realizations < 1:
        raise ValueError("need at least one realization")
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    assumed = assumed or actual
    ctx = assumed.context() if model.adaptive else None
    symbols = [model.encode(images[s], ctx) for s in _chunks(len(images))]
    k = model.arch.symbol_count

    def one(r: int) -> float:
        total = 0.0
        if identity_channel:
            for s, z in zip(_chunks(len(images)), symbols):
                x_hat = model.decode(z, ctx)
                total += float(np.sum((x_hat.astype(np.float64) - images[s]) ** 2))
            return total / images.size
        rng = make_rng(seed, "eval", actual.environment, actual.elevation_deg,
                       int(actual.state), actual.snr_db, r)
        for s, z in zip(_chunks(len(images)), symbols):
            real = draw_batch(k, [actual.loo] * len(z), [actual.snr_db] * len(z), rng,
                              setup.mode, model.arch.power, setup.random_phase)
            x_hat = model.decode(real.apply(z), ctx)
            total += float(np.sum((x_hat.astype(np.float64) - images[s]) ** 2))
        return total / images.size

    if identity_channel:
        value = one(0)
        return EvalResult(value, psnr_from_mse(value), realizations, 0.0)

    per = [one(r) for r in range(realizations)]
    while True:
        mean = float(np.mean(per))
        stderr = _psnr_stderr(per)
        if stderr < psnr_stderr_db or len(per) >= max_realizations:
            break
        per.extend(one(r) for r in range(len(per), min(2 * len(per), max_realizations)))
    return EvalResult(mean, psnr_from_mse(mean), len(per), stderr)


def _psnr_stderr(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean()
    if len(values) < 2 or mean == 0:
        return 0.0
    # delta method: d(10 log10 m) = 10 / ln10 * dm / m
    return float(10.0 / math.log(10.0) * values.std(ddof=1) / math.sqrt(len(values)) / mean)


def make_row(model: JsccModel, actual: Condition, trained_state: str, ratio: float, seed: int,
             result: EvalResult) -> ResultRow:
    row = ResultRow(actual.environment, trained_state, actual.state.label, actual.elevation_deg,
                    float(ratio), model.kind, int(seed), result.psnr_db, result.mse,
                    float(actual.snr_db), float(model.arch.compression_ratio),
                    int(result.realizations), float(result.psnr_stderr_db))
    row.check()
    return row


# -- models and datasets ----------------------------------------------------------

def dataset_for(config: Config) -> Dataset:
    spec = config.dataset
    if spec.manifest:
        return load_raw_dataset(spec.manifest, seed=spec.seed)
    return generate_synthetic_dataset(spec.count, spec.bands, spec.size, spec.seed)


def _job_key(job: TrainingJob, plan: ExperimentPlan, dataset: Dataset, setup: ChannelSetup) -> str:
    desc = {
        "arch": asdict(job.arch),
        "attention": asdict(job.attention),
        "conditions": [[c.environment, c.elevation_deg, int(c.state), c.snr_db,
                        asdict(c.loo)] for c in job.conditions],
        "seed": job.seed,
        "plan": {k: v for k, v in plan.to_dict().items()
                 if k in ("epochs", "batch_size", "learning_rate", "lr_drop_fraction",
                          "lr_drop_factor", "patience")},
        "channel": [setup.mode, setup.random_phase],
        "dataset": dataset.fingerprint(),
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True, default=str).encode()).hexdigest()


class ModelStore:
    """Trains each distinct job once and caches the checkpoint on disk."""

    def __init__(self, root: Path | None, plan: ExperimentPlan, dataset: Dataset,
                 setup: ChannelSetup):
        self.root = Path(root) if root is not None else None
        self.plan, self.dataset, self.setup = plan, dataset, setup
        self._memory: dict[str, JsccModel] = {}

    def get(self, job: TrainingJob, name: str) -> JsccModel:
        key = _job_key(job, self.plan, self.dataset, self.setup)
        if key in self._memory:
            return self._memory[key]
        path = self.root / f"{name}.ckpt" if self.root else None
        if path is not None and path.exists():
            model = JsccModel.load(path)
            if model.metadata.get("job") == key:
                self._memory[key] = model
                return model
            log.info("cached model %s is stale; retraining", path)
        model, tlog = train(job, self.plan, self.dataset, self.setup)
        model.metadata["job"] = key
        if path is not None:
            write_atomic(path.with_suffix(".log.csv"), tlog.to_csv())
            model.save(path)
        self._memory[key] = model
        return model


def _ratio_tag(ratio: float) -> str:
    return f"{ratio:g}".replace(".", "p")


def _model_name(kind, env, state_label, elev, ratio, seed) -> str:
    return f"{kind}-{env}-{state_label}-e{elev:g}-r{_ratio_tag(ratio)}-s{seed}"


def _model_for(store: ModelStore, config: Config, kind: str, env: str, state: ChannelState,
               elev: float, ratio: float, seed: int) -> JsccModel:
    setup, plan = config.channel, config.plan
    arch = config.architecture_for(ratio, store.dataset.shape)
    if kind == "adaptive":
        job = adaptive_job(arch, config.attention_config(True), setup, env, plan, seed)
        return store.get(job, _model_name(kind, env, "grid", 0, ratio, seed))
    job = baseline_job(arch, config.attention_config(False), setup.condition(env, elev, state), seed)
    return store.get(job, _model_name(kind, env, state.label, elev, ratio, seed))


def _evaluate_cell(config: Config, model: JsccModel, images, env, assumed_state, actual_state,
                   elev, ratio, seed) -> ResultRow:
    setup, plan = config.channel, config.plan
    actual = setup.condition(env, elev, actual_state)
    assumed = setup.condition(env, elev, assumed_state)
    result = evaluate(model, images, actual, setup, seed, assumed=assumed,
                      realizations=plan.realizations, max_realizations=plan.max_realizations,
                      psnr_stderr_db=plan.psnr_stderr_db)
    return make_row(model, actual, assumed.state.label, ratio, seed, result)


# -- sweep -----------------------------------------------------------------------

def sweep_cells(plan: ExperimentPlan):
    for env in plan.environments:
        for state in plan.states:
            for elev in plan.elevations:
                for ratio in plan.ratios:
                    for kind in plan.kinds:
                        for seed in plan.seeds:
                            yield env, state, elev, ratio, kind, seed


def _cached_cell(path: Path, run) -> list[ResultRow]:
    if path.exists():
        return read_rows(path)
    rows = run()
    write_rows(path, rows)
    return rows


def sweep(config: Config, out_dir, dataset: Dataset | None = None) -> list[ResultRow]:
    """Train and evaluate the plan's cross product.

    Writes ``sweep.csv`` (all rows) and, when both model kinds are in the
    plan, ``comparison.csv`` with the adaptive-minus-baseline gap per cell.
    """
    out = Path(out_dir)
    dataset = dataset if dataset is not None else dataset_for(config)
    store = ModelStore(out / "models", config.plan, dataset, config.channel)
    images = dataset.subset("test")
    rows = []
    for env, state, elev, ratio, kind, seed in sweep_cells(config.plan):
        name = _model_name(kind, env, state.label, elev, ratio, seed)

        def run():
            model = _model_for(store, config, kind, env, state, elev, ratio, seed)
            return [_evaluate_cell(config, model, images, env, state, state, elev, ratio, seed)]

        rows.extend(_cached_cell(out / "cells" / f"sweep-{name}.csv", run))
    write_rows(out / "sweep.csv", rows)
    if {"baseline", "adaptive"} <= set(config.plan.kinds):
        write_atomic(out / "comparison.csv", comparison_csv(rows))
    return rows


COMPARISON_COLUMNS = ["environment", "state", "elevation", "ratio", "seed",
                      "baseline_psnr_db", "adaptive_psnr_db", "gap_db"]


def comparison_table(rows) -> list[dict]:
    """Pair baseline and adaptive rows of the same cell; ``gap_db`` is
    adaptive minus baseline PSNR."""
    by_cell: dict[tuple, dict[str, ResultRow]] = {}
    for row in rows:
        if row.state_trained != row.state_actual:
            continue
        key = (row.environment, row.state_actual, row.elevation, row.ratio, row.seed)
        by_cell.setdefault(key, {})[row.kind] = row
    table = []
    for key, kinds in by_cell.items():
        if {"baseline", "adaptive"} <= set(kinds):
            b, a = kinds["baseline"].psnr_db, kinds["adaptive"].psnr_db
            table.append(dict(zip(COMPARISON_COLUMNS, (*key, b, a, a - b))))
    return table


def comparison_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    for rec in comparison_table(rows):
        writer.writerow([_fmt(rec[c]) for c in COMPARISON_COLUMNS])
    return buf.getvalue()


# -- mismatch ----------------------------------------------------------------------

def mismatch_experiment(config: Config, out_dir, dataset: Dataset | None = None,
                        pairs=MISMATCH_PAIRS) -> list[ResultRow]:
    """Evaluate models assuming state A while the channel realizes state B.

    For each (A, B) pair the baseline trained for A (or the adaptive model
    given context A) is evaluated on channel B, next to the matched control
    (B, B). Writes ``mismatch.csv``.
    """
    out = Path(out_dir)
    dataset = dataset if dataset is not None else dataset_for(config)
    store = ModelStore(out / "models", config.plan, dataset, config.channel)
    images = dataset.subset("test")
    combos = []
    for a, b in pairs:
        for combo in ((a, b), (b, b)):
            if combo not in combos:
                combos.append(combo)
    rows = []
    for env in config.plan.environments:
        for elev in config.plan.elevations:
            for ratio in config.plan.ratios:
                for kind in config.plan.kinds:
                    for seed in config.plan.seeds:
                        for assumed, actual in combos:
                            name = (f"mismatch-{_model_name(kind, env, assumed.label, elev, ratio, seed)}"
                                    f"-on-{actual.label}")

                            def run(assumed=assumed, actual=actual, kind=kind, env=env,
                                    elev=elev, ratio=ratio, seed=seed):
                                model = _model_for(store, config, kind, env, assumed, elev, ratio, seed)
                                return [_evaluate_cell(config, model, images, env, assumed, actual,
                                                       elev, ratio, seed)]

                            rows.extend(_cached_cell(out / "cells" / f"{name}.csv", run))
    write_rows(out / "mismatch.csv", rows)
    return rows


# -- report ------------------------------------------------------------------------

def _axis_order(key) -> tuple:
    # states sort in channel order (LOS, Shadow, DeepShadow), numbers numerically
    out = []
    for v in key:
        try:
            out.append((0, float(ChannelState.parse(v)), ""))
        except (ValueError, KeyError, TypeError):
            out.append((1, v, "") if isinstance(v, (int, float)) else (2, 0.0, str(v)))
    return tuple(out)


SUMMARY_COLUMNS = ["environment", "state_trained", "state_actual", "elevation", "ratio", "kind",
                   "seeds", "psnr_db_mean", "psnr_db_std", "mse_mean"]


def summarize(rows) -> list[dict]:
    """Aggregate rows over seeds, keeping every other axis."""
    groups: dict[tuple, list[ResultRow]] = {}
    for row in rows:
        key = (row.environment, row.state_trained, row.state_actual, row.elevation, row.ratio,
               row.kind)
        groups.setdefault(key, []).append(row)
    table = []
    for key in sorted(groups, key=_axis_order):
        group = groups[key]
        psnrs = np.array([r.psnr_db for r in group])
        table.append(dict(zip(SUMMARY_COLUMNS, (
            *key, len(group), float(psnrs.mean()),
            float(psnrs.std(ddof=1)) if len(group) > 1 else 0.0,
            float(np.mean([r.mse for r in group]))))))
    return table


def _table_csv(columns, table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in table:
        writer.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


@dataclass
class ReportOutcome:
    written: list[Path]
    rows_checked: int
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def report(out_dir) -> ReportOutcome:
    """Turn the sweep and mismatch CSVs in ``out_dir`` into per-figure
    summary tables under ``<out>/report``; re-checks every row."""
    out = Path(out_dir)
    written, failures, checked = [], [], 0
    sources = {"states_ratios": "sweep.csv", "mismatch": "mismatch.csv"}
    for name, source in sources.items():
        path = out / source
        if not path.exists():
            continue
        try:
            rows = read_rows(path)
        except (ResultError, KeyError, ValueError) as exc:
            failures.append(f"{source}: {exc}")
            continue
        checked += len(rows)
        target = out / "report" / f"{name}.csv"
        write_atomic(target, _table_csv(SUMMARY_COLUMNS, summarize(rows)))
        written.append(target)
        if source == "sweep.csv":
            table = comparison_table(rows)
            if table:
                target = out / "report" / "adaptive_gap.csv"
                write_atomic(target, _gap_summary_csv(table))
                written.append(target)
    if not written and not failures:
        failures.append(f"no result CSVs found in {out}")
    return ReportOutcome(written, checked, failures)


GAP_COLUMNS = ["environment", "state", "elevation", "ratio", "seeds", "baseline_psnr_db",
               "adaptive_psnr_db", "gap_db"]


def _gap_summary_csv(table) -> str:
    groups: dict[tuple, list[dict]] = {}
    for rec in table:
        groups.setdefault((rec["environment"], rec["state"], rec["elevation"], rec["ratio"]),
                          []).append(rec)
    summary = []
    for key in sorted(groups, key=_axis_order):
        g = groups[key]
        summary.append(dict(zip(GAP_COLUMNS, (
            *key, len(g),
            float(np.mean([r["baseline_psnr_db"] for r in g])),
            float(np.mean([r["adaptive_psnr_db"] for r in g])),
            float(np.mean([r["gap_db"] for r in g]))))))
    return _table_csv(GAP_COLUMNS, summary)
