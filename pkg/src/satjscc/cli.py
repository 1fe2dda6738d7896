"""Command line entry point: ``satjscc <command> ...``.

Every command accepts ``--seed``, ``--config`` and ``--out``. The exit status
is 0 when the command ran and its invariant checks passed, 1 when an
invariant check failed and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import MODES, PER_SYMBOL, draw_realization
from .fading import (ChannelState, IntegrationError, LooParams, TableError, loo_pdf, mixture_pdf,
                     sample_loo, sample_state_sequence, stationary_distribution)
from .harness.config import ChannelSetup, Config, PlanError, config_from_dict, load_config
from .harness.data import (Dataset, DatasetError, generate_synthetic_dataset, load_raw_dataset,
                           write_raw_dataset)
from .harness.experiments import (ResultError, dataset_for, evaluate, make_row, mismatch_experiment,
                                  report, sweep, write_rows)
from .harness.metrics import psnr
from .harness.training import DivergenceError, adaptive_job, baseline_job, train
from .jscc import ChannelContext, ConfigError, ContextError, JsccModel
from .linkbudget import LinkParams, SnrReport, snr
from .nn import CheckpointError
from .seeding import make_rng

log = logging.getLogger("satjscc")

SYMBOL_COLUMNS = ("sample", "index", "re", "im")


class InvariantFailure(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _config(args) -> Config:
    return load_config(args.config) if args.config else config_from_dict({})


def _seed(args, config: Config) -> int:
    return config.seed if args.seed is None else args.seed


def _out_dir(args, default="out") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        log.info("wrote %s", path)


def _output_file(args, name: str) -> Path | None:
    """``--out`` names a file when it has a suffix, otherwise a directory."""
    if not args.out:
        return None
    out = Path(args.out)
    return out if out.suffix else out / name


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantFailure(message)


def _param_overrides(pairs) -> dict:
    overrides = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--param expects key=value, got {item!r}")
        overrides[key.strip()] = float(value)
    return overrides


def _parse_ctx(text: str | None, setup: ChannelSetup, env: str | None, elev: float | None):
    """``snr=<dB>,state=<s>[,alpha=..,psi=..,mp=..]``; missing Loo values are
    looked up in the environment table when ``--env/--elev`` are given."""
    if not text:
        return None
    fields = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"bad --ctx entry {part!r}")
        fields[key.strip().lower()] = value.strip()
    if "state" not in fields:
        raise ValueError("--ctx needs state=<LOS|Shadow|DeepShadow>")
    state = ChannelState.parse(fields["state"])
    loo = None
    if {"alpha", "psi", "mp"} <= set(fields):
        loo = LooParams(float(fields["alpha"]), float(fields["psi"]), float(fields["mp"]))
    elif env is not None and elev is not None:
        loo = setup.condition(env, elev, state).loo
    if "snr" in fields:
        snr_db = float(fields["snr"])
    elif elev is not None:
        snr_db = setup.snr_at(elev)
    else:
        raise ValueError("--ctx needs snr=<dB> (or --elev to use the link budget)")
    return ChannelContext(snr_db, state, loo)


def read_symbols(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a symbol CSV into (sample ids, complex array (samples, k))."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"re", "im"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: symbol CSV needs 're' and 'im' columns")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no symbols")
    grouped: dict[int, list[tuple[int, complex]]] = {}
    for n, row in enumerate(rows):
        sample = int(row.get("sample") or 0)
        index = int(row.get("index") or n)
        grouped.setdefault(sample, []).append((index, complex(float(row["re"]), float(row["im"]))))
    samples = sorted(grouped)
    lengths = {len(grouped[s]) for s in samples}
    if len(lengths) != 1:
        raise ValueError(f"{path}: samples carry different symbol counts {sorted(lengths)}")
    z = np.array([[v for _, v in sorted(grouped[s])] for s in samples])
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{path}: non-finite symbols")
    return np.array(samples), z


def symbols_csv(samples, z) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SYMBOL_COLUMNS)
    for sample, row in zip(samples, z):
        for i, v in enumerate(row):
            writer.writerow([int(sample), i, repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


# -- commands --------------------------------------------------------------------

def cmd_linkbudget(args) -> None:
    params = _config(args).channel.link if args.config else LinkParams()
    params = params.with_overrides(**_param_overrides(args.param))
    reports = [snr(params, e) for e in args.elevation]
    for r in reports:
        _check(all(math.isfinite(v) for v in (r.slant_range_km, r.path_loss_db, r.snr_db)),
               f"non-finite link budget at {r.elevation_deg} deg")
        print(r.describe())
        print()
    table = "\n".join([SnrReport.CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"
    _emit(table, _output_file(args, "linkbudget.csv"))


def cmd_fading_sample(args) -> None:
    config = _config(args)
    params = config.channel.condition(args.env, args.elev, args.state).loo
    h = sample_loo(params, args.n, make_rng(_seed(args, config), "fading-sample"), random_phase=args.random_phase)
    _check(bool(np.all(np.isfinite(h))), "non-finite channel gains")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "re", "im", "amplitude"])
    for i, v in enumerate(h):
        writer.writerow([i, repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
    _emit(buf.getvalue(), _output_file(args, "gains.csv"))


def cmd_fading_states(args) -> None:
    config = _config(args)
    chain = config.channel.tables[args.env].chain_at(args.elev)
    seq = sample_state_sequence(chain, args.steps, make_rng(_seed(args, config), "fading-states"))
    _check(bool(np.all((seq >= 0) & (seq < len(ChannelState)))), "invalid state index")
    pi = stationary_distribution(chain)
    occupancy = np.bincount(seq, minlength=len(pi)) / len(seq)
    for s in ChannelState:
        log.info("%-10s occupancy %.4f stationary %.4f", s.label, occupancy[s], pi[s])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "state", "label"])
    for t, s in enumerate(seq.tolist()):
        writer.writerow([t, s, ChannelState(s).label])
    _emit(buf.getvalue(), _output_file(args, "states.csv"))


def cmd_fading_pdf(args) -> None:
    setup = _config(args).channel
    table = setup.tables[args.env]
    per_state = table.per_state(args.elev)
    chain = table.chain_at(args.elev)
    r = np.linspace(0.0, args.r_max, args.points)
    curves = [loo_pdf(r, p) for p in per_state]
    mix = mixture_pdf(r, chain, per_state)
    _check(all(np.all(np.isfinite(c)) and np.all(c >= 0) for c in curves + [mix]),
           "pdf has negative or non-finite values")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r"] + [f"pdf_{s.label}" for s in ChannelState] + ["pdf_mixture"])
    for i, ri in enumerate(r):
        writer.writerow([repr(float(ri))] + [repr(float(c[i])) for c in curves] + [repr(float(mix[i]))])
    _emit(buf.getvalue(), _output_file(args, "pdf.csv"))


def cmd_channel_pass(args) -> None:
    config = _config(args)
    setup = config.channel
    if args.snr_source == "explicit":
        if args.snr is None:
            raise ValueError("--snr-source explicit needs --snr")
        snr_db = args.snr
    else:
        snr_db = snr(setup.link, args.elev).snr_db
    params = setup.condition(args.env, args.elev, args.state).loo
    samples, z = read_symbols(args.input)
    rng = make_rng(_seed(args, config), "channel-pass")
    out = np.empty_like(z)
    for n, row in enumerate(z):
        real = draw_realization(row.size, params, snr_db, rng, args.mode, args.power,
                                args.random_phase)
        out[n] = real.apply(row)
    _check(bool(np.all(np.isfinite(out))), "non-finite channel output")
    log.info("SNR %.3f dB, state %s, %d x %d symbols", snr_db, ChannelState.parse(args.state).label,
             *z.shape)
    _emit(symbols_csv(samples, out), _output_file(args, "symbols_out.csv"))


def _load_images(path, seed) -> Dataset:
    return load_raw_dataset(path, seed=seed)


def cmd_jscc_encode(args) -> None:
    config = _config(args)
    setup = config.channel
    model = JsccModel.load(args.model)
    dataset = _load_images(args.input, _seed(args, config))
    ctx = _parse_ctx(args.ctx, setup, args.env, args.elev)
    if model.adaptive and ctx is None:
        raise ContextError("adaptive model needs --ctx")
    z = model.encode(dataset.images, ctx)
    power = np.mean(np.abs(z) ** 2, axis=1)
    _check(bool(np.allclose(power, model.arch.power, rtol=1e-5)),
           f"symbol power {power.min():.6g}..{power.max():.6g} != {model.arch.power}")
    _emit(symbols_csv(np.arange(len(z)), z.astype(np.complex128)), _output_file(args, "symbols.csv"))


def cmd_jscc_decode(args) -> None:
    config = _config(args)
    setup = config.channel
    model = JsccModel.load(args.model)
    samples, z = read_symbols(args.input)
    if z.shape[1] != model.arch.symbol_count:
        raise ValueError(f"model expects {model.arch.symbol_count} symbols per sample, got {z.shape[1]}")
    ctx = _parse_ctx(args.ctx, setup, args.env, args.elev)
    if model.adaptive and ctx is None:
        raise ContextError("adaptive model needs --ctx")
    x_hat = model.decode(z, ctx)
    _check(bool(np.all((x_hat >= 0) & (x_hat <= 1))), "decoded pixels outside [0, 1]")
    out = _out_dir(args, "decoded")
    manifest = write_raw_dataset(Dataset(x_hat, np.full(len(x_hat), "test"),
                                         {"kind": "decoded", "model": str(args.model)}), out)
    print(f"wrote {manifest}")
    if args.reference:
        ref = _load_images(args.reference, config.seed).images
        print(f"PSNR {psnr(ref[samples], x_hat):.4f} dB")


def cmd_dataset(args) -> None:
    config = _config(args)
    if args.action == "synth":
        spec = config.dataset
        ds = generate_synthetic_dataset(args.count or spec.count, args.bands or spec.bands,
                                        args.size or spec.size,
                                        spec.seed if args.seed is None else args.seed)
    else:
        if args.manifest is None:
            raise ValueError("dataset import needs --manifest")
        ds = load_raw_dataset(args.manifest, seed=_seed(args, config))
    _check(bool(ds.images.min() >= 0 and ds.images.max() <= 1), "pixels outside [0, 1]")
    splits = {s: int(np.sum(ds.split == s)) for s in ("train", "val", "test")}
    _check(sum(splits.values()) == len(ds.images), "split labels do not cover the dataset")
    manifest = write_raw_dataset(ds, _out_dir(args, "data"))
    print(f"{len(ds.images)} images of shape {ds.shape}, splits {splits}")
    print(f"wrote {manifest}")


def _dataset(config: Config, args) -> Dataset:
    if getattr(args, "data", None):
        return load_raw_dataset(args.data, seed=config.dataset.seed)
    return dataset_for(config)


def cmd_train(args) -> None:
    config = _config(args)
    dataset = _dataset(config, args)
    seed = _seed(args, config)
    arch = config.architecture_for(args.ratio, dataset.shape)
    if args.kind == "adaptive":
        job = adaptive_job(arch, config.attention_config(True), config.channel, args.env,
                           config.plan, seed)
    else:
        job = baseline_job(arch, config.attention_config(False),
                           config.channel.condition(args.env, args.elev, args.state), seed)
    model, tlog = train(job, config.plan, dataset, config.channel)
    out = _out_dir(args)
    model.save(out / "model.ckpt")
    (out / "training_log.csv").write_text(tlog.to_csv(), encoding="utf-8")
    _check(all(math.isfinite(r.val_mse) for r in tlog.records), "non-finite validation loss")
    best = tlog.records[tlog.best_epoch]
    print(f"{model.kind} model, ratio {arch.compression_ratio:.4f} (c={arch.channel_filters_c}), "
          f"best val PSNR {best.val_psnr:.3f} dB at epoch {best.epoch}")
    print(f"wrote {out / 'model.ckpt'}")


def cmd_eval(args) -> None:
    config = _config(args)
    dataset = _dataset(config, args)
    seed = _seed(args, config)
    model = JsccModel.load(args.model)
    setup = config.channel
    actual = setup.condition(args.env, args.elev, args.state)
    if model.adaptive:
        assumed = setup.condition(args.env, args.elev, args.assumed_state or args.state)
        trained = assumed.state.label
    else:
        if args.assumed_state:
            raise ValueError("--assumed-state applies to adaptive models only; a baseline "
                             "assumes the state it was trained for")
        assumed = None
        conditions = model.metadata.get("conditions") or [{}]
        trained = conditions[0].get("state", "unknown")
    plan = config.plan
    result = evaluate(model, dataset.subset(args.split), actual, setup, seed, assumed=assumed,
                      realizations=plan.realizations, max_realizations=plan.max_realizations,
                      psnr_stderr_db=plan.psnr_stderr_db)
    row = make_row(model, actual, trained, model.arch.compression_ratio, seed, result)
    out = _out_dir(args)
    write_rows(out / "eval.csv", [row])
    print(f"PSNR {row.psnr_db:.4f} dB (MSE {row.mse:.6g}, {row.realizations} realizations)")


def _plan_config(args) -> Config:
    config = _config(args)
    if args.seed is not None:
        config.plan.seeds = [args.seed]
    return config


def cmd_sweep(args) -> None:
    config = _plan_config(args)
    rows = sweep(config, _out_dir(args))
    _check(len(rows) == _cell_count(config), "row count does not match the plan")
    print(f"{len(rows)} rows written to {Path(args.out or 'out') / 'sweep.csv'}")


def _cell_count(config: Config) -> int:
    p = config.plan
    return (len(p.environments) * len(p.states) * len(p.elevations) * len(p.ratios)
            * len(p.kinds) * len(p.seeds))


def cmd_mismatch(args) -> None:
    config = _plan_config(args)
    rows = mismatch_experiment(config, _out_dir(args))
    _check(all(r.state_trained and r.state_actual for r in rows), "rows lack state labels")
    print(f"{len(rows)} rows written to {Path(args.out or 'out') / 'mismatch.csv'}")


def cmd_report(args) -> None:
    outcome = report(Path(args.out or "out"))
    for path in outcome.written:
        print(f"wrote {path}")
    print(f"{outcome.rows_checked} rows checked")
    for failure in outcome.failures:
        print(f"FAILED: {failure}", file=sys.stderr)
    _check(outcome.ok, "report invariant checks failed")


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root random seed")
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="satjscc", description="Link budget, land-mobile satellite channel and deep JSCC "
                                    "image transmission toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("linkbudget", parents=[common], help="SNR at given elevation angles")
    p.add_argument("--elevation", type=float, nargs="+", required=True, metavar="DEG")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="override a link parameter, e.g. orbit_height_km=600")
    p.set_defaults(func=cmd_linkbudget)

    fading = sub.add_parser("fading", help="Loo fading and state-chain tools")
    fsub = fading.add_subparsers(dest="action", required=True)
    for name, func, helptext in (("sample", cmd_fading_sample, "CSV of complex channel gains"),
                                 ("states", cmd_fading_states, "CSV of a simulated state sequence"),
                                 ("pdf", cmd_fading_pdf, "CSV of amplitude densities")):
        q = fsub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--env", default="urban")
        q.add_argument("--elev", type=float, default=40.0)
        q.set_defaults(func=func)
        if name == "sample":
            q.add_argument("--state", default="LOS")
            q.add_argument("-n", type=int, default=1000)
            q.add_argument("--random-phase", action="store_true")
        elif name == "states":
            q.add_argument("--steps", type=int, default=1000)
        else:
            q.add_argument("--r-max", type=float, default=2.0)
            q.add_argument("--points", type=int, default=201)

    channel = sub.add_parser("channel", help="channel simulation")
    csub = channel.add_subparsers(dest="action", required=True)
    q = csub.add_parser("pass", parents=[common], help="impair a symbol CSV")
    q.add_argument("--in", dest="input", type=Path, required=True)
    q.add_argument("--state", default="LOS")
    q.add_argument("--env", default="urban")
    q.add_argument("--elev", type=float, default=40.0)
    q.add_argument("--snr-source", choices=("linkbudget", "explicit"), default="linkbudget")
    q.add_argument("--snr", type=float, help="SNR in dB for --snr-source explicit")
    q.add_argument("--mode", choices=MODES, default=PER_SYMBOL)
    q.add_argument("--power", type=float, default=1.0, help="signal power P")
    q.add_argument("--random-phase", action="store_true")
    q.set_defaults(func=cmd_channel_pass)

    jscc = sub.add_parser("jscc", help="encode or decode with a trained model")
    jsub = jscc.add_subparsers(dest="action", required=True)
    for name, func in (("encode", cmd_jscc_encode), ("decode", cmd_jscc_decode)):
        q = jsub.add_parser(name, parents=[common])
        q.add_argument("--model", type=Path, required=True)
        q.add_argument("--in", dest="input", type=Path, required=True,
                       help="raw dataset manifest (encode) or symbol CSV (decode)")
        q.add_argument("--ctx", help="snr=<dB>,state=<s>[,alpha=..,psi=..,mp=..]")
        q.add_argument("--env", help="environment for Loo lookups in --ctx")
        q.add_argument("--elev", type=float, help="elevation for Loo/SNR lookups in --ctx")
        if name == "decode":
            q.add_argument("--reference", type=Path, help="manifest of the original images")
        q.set_defaults(func=func)

    q = sub.add_parser("dataset", parents=[common], help="create or import a dataset")
    q.add_argument("action", choices=("synth", "import"))
    q.add_argument("--count", type=int)
    q.add_argument("--bands", type=int)
    q.add_argument("--size", type=int)
    q.add_argument("--manifest", type=Path, help="raw dataset manifest (import)")
    q.set_defaults(func=cmd_dataset)

    q = sub.add_parser("train", parents=[common], help="train one model")
    q.add_argument("--kind", choices=("baseline", "adaptive"), default="baseline")
    q.add_argument("--ratio", type=float, default=0.17)
    q.add_argument("--env", default="urban")
    q.add_argument("--elev", type=float, default=40.0)
    q.add_argument("--state", default="LOS")
    q.add_argument("--data", type=Path, help="raw dataset manifest (default: from config)")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    q.add_argument("--model", type=Path, required=True)
    q.add_argument("--env", default="urban")
    q.add_argument("--elev", type=float, default=40.0)
    q.add_argument("--state", default="LOS", help="state the channel realizes")
    q.add_argument("--assumed-state", help="state given to the model (default: --state)")
    q.add_argument("--split", choices=("train", "val", "test"), default="test")
    q.add_argument("--data", type=Path)
    q.set_defaults(func=cmd_eval)

    for name, func, helptext in (("sweep", cmd_sweep, "train and evaluate the plan"),
                                 ("mismatch", cmd_mismatch, "channel-mismatch study"),
                                 ("report", cmd_report, "aggregate result CSVs")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except InvariantFailure as exc:
        print(f"invariant check failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, TableError, PlanError, DatasetError, ConfigError,
            ContextError, CheckpointError, ResultError, IntegrationError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
