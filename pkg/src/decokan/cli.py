"""Command-line entry point: ``decokan {prepare,train,evaluate,forecast,interpret}``.

Runs are described by an INI file with sections ``[data]``, ``[model]``,
``[training]``, ``[interpret]`` and ``[run]``; flags override file values.
Exit codes: 0 success, 2 configuration, 3 checkpoint, 4 input data, 1 internal.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingestion import CsvSchema, IngestionError, infer_frequency, load_csv, read_table
from .interpret import DEFAULT_TAU, DEFAULT_TOP_K, default_sample_grid, emit_report, prune, symbolify
from .model import (ABLATIONS, CheckpointError, ConfigMismatchError, DecoKan, ModelConfig,
                    load_checkpoint, save_checkpoint)
from .training import (SplitError, TimeSeriesDataset, TrainingDivergedError, TrainOptions,
                       WindowingError, evaluate, persistence_baseline, predict, train)

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_DATA = 0, 1, 2, 3, 4

log = logging.getLogger("decokan")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    timestamp: str = "date"
    columns: tuple[str, ...] | None = None
    delimiter: str = ","
    sizes: str = ""
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)


@dataclass
class RunConfig:
    data: DataConfig
    model: ModelConfig
    training: TrainOptions
    seed: int = 0
    output_dir: str = "runs/default"
    family: str = "crypto"
    tau: float = DEFAULT_TAU
    top_k: int = DEFAULT_TOP_K
    max_edges: int | None = None
    extra: dict = field(default_factory=dict)


def _floats(text: str, n: int, name: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) != n:
        raise ConfigError(f"{name} needs {n} comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def load_run_config(path: str | None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Parse the INI file (if any) and apply ``overrides[section][key]``."""
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    for section, items in (overrides or {}).items():
        if not cp.has_section(section):
            cp.add_section(section)
        for k, v in items.items():
            cp.set(section, k, str(v))
    known = {"data", "model", "training", "interpret", "run"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    def sec(name):
        return dict(cp.items(name)) if cp.has_section(name) else {}

    try:
        d = sec("data")
        data = DataConfig(
            path=d.pop("path", ""), timestamp=d.pop("timestamp", "date"),
            columns=tuple(c.strip() for c in d.pop("columns").split(",") if c.strip())
            if "columns" in d else None,
            delimiter=d.pop("delimiter", ","), sizes=d.pop("sizes", ""),
            ratios=_floats(d.pop("ratios"), 3, "data.ratios") if "ratios" in d else (0.7, 0.1, 0.2))
        _no_leftovers("data", d)
        model_keys = set(sec("model"))
        model = ModelConfig.from_dict(sec("model"))
        t = sec("training")
        conv = {"lr": float, "batch_size": int, "epochs": int, "gamma": float, "patience": int,
                "eval_batch_size": int}
        bad = set(t) - set(conv)
        if bad:
            raise ConfigError(f"unknown training keys {sorted(bad)}")
        r = sec("run")
        seed = int(r.pop("seed", 0))
        training = TrainOptions(seed=seed, **{k: conv[k](v) for k, v in t.items()})
        it = sec("interpret")
        cfg = RunConfig(
            data=data, model=model, training=training, seed=seed,
            output_dir=r.pop("output_dir", "runs/default"), family=r.pop("family", "crypto"),
            tau=float(it.pop("tau", DEFAULT_TAU)), top_k=int(it.pop("top_k", DEFAULT_TOP_K)),
            max_edges=int(it.pop("max_edges")) if "max_edges" in it else None,
            extra={"model_keys": model_keys})
        _no_leftovers("run", r)
        _no_leftovers("interpret", it)
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    if cfg.family not in ("crypto", "ett"):
        raise ConfigError(f"run.family must be crypto or ett, got {cfg.family!r}")
    return cfg


def _no_leftovers(section: str, d: dict) -> None:
    if d:
        raise ConfigError(f"unknown {section} keys {sorted(d)}")


def _load_dataset(cfg: RunConfig) -> TimeSeriesDataset:
    if not cfg.data.path:
        raise ConfigError("data.path is required (set [data] path = ...)")
    p = Path(cfg.data.path)
    if not p.is_file():
        raise DataError(f"data.path {p} does not exist")
    sizes = None
    if cfg.data.sizes:
        s = cfg.data.sizes.strip()
        sizes = s if not s[0].isdigit() else tuple(int(v) for v in _floats(s, 3, "data.sizes"))
    schema = CsvSchema(cfg.data.timestamp, cfg.data.columns, cfg.data.delimiter)
    return load_csv(p, schema, sizes, cfg.data.ratios)


def _refuse_clobber(paths: list[Path], overwrite: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite {existing}; pass --overwrite")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _checkpoint_meta(ds: TimeSeriesDataset, cfg: RunConfig) -> tuple[dict, dict]:
    meta = {"channels": "|".join(ds.names), "data_path": cfg.data.path,
            "sizes": ",".join(map(str, ds.sizes))}
    arrays = {"scaler.mean": ds.scaler.mean, "scaler.std": ds.scaler.std}
    return meta, arrays


# ---------------------------------------------------------------------------
# subcommands

def cmd_prepare(cfg: RunConfig, args) -> int:
    ds = _load_dataset(cfg)
    print(f"rows: {len(ds)}  channels: {ds.channels}  sizes (train, val, test): {ds.sizes}")
    print("columns: " + ", ".join(ds.names))
    for note in ds.notes:
        print("note: " + note)
    L, T = cfg.model.lookback, cfg.model.horizon
    for split in ("train", "val", "test"):
        n = ds.sizes[("train", "val", "test").index(split)]
        print(f"{split}: {n} rows, {max(0, n - L - T + 1)} windows at L={L}, T={T}")
    explicit = "channels" in cfg.extra.get("model_keys", ())
    if explicit and ds.channels != cfg.model.channels:
        print(f"warning: data has {ds.channels} channels, model.channels = {cfg.model.channels}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    targets = [out / "model.ckpt", out / "train_report.txt", out / "loss_curve.csv"]
    _refuse_clobber(targets, args.overwrite)
    ds = _load_dataset(cfg)
    if "channels" not in cfg.extra.get("model_keys", ()):
        cfg.model = dataclasses.replace(cfg.model, channels=ds.channels)
    if ds.channels != cfg.model.channels:
        raise ConfigError(f"model.channels = {cfg.model.channels} but the data has "
                          f"{ds.channels} channels ({', '.join(ds.names)})")
    for msg in cfg.model.range_warnings(cfg.family):
        print(f"warning: {msg}", file=sys.stderr)
    model = DecoKan(cfg.model, cfg.seed)
    report = train(model, ds, cfg.training, log=lambda s: print(s, flush=True))
    out.mkdir(parents=True, exist_ok=True)
    meta, arrays = _checkpoint_meta(ds, cfg)
    save_checkpoint(model, targets[0], seed=cfg.seed, meta=meta, arrays=arrays)
    targets[1].write_text(report.to_text(), encoding="utf-8")
    _write_csv(targets[2], ["epoch", "train_loss", "val_mse"],
               [[e.epoch, repr(e.train_loss), repr(e.val_mse)] for e in report.epochs])
    print(f"best epoch {report.best_epoch}; test mse {report.test_mse:.6g} mae {report.test_mae:.6g}")
    print(f"wrote {', '.join(map(str, targets))}")
    return EXIT_OK


def _load_for_data(path: Path, ds: TimeSeriesDataset | None):
    ckpt = load_checkpoint(path)
    names = ckpt.meta.get("channels", "").split("|")
    if ds is not None:
        if names != ds.names:
            raise ConfigMismatchError(
                f"{path}: checkpoint channels {names} differ from data channels {ds.names}")
        if not (np.array_equal(ckpt.arrays.get("scaler.mean"), ds.scaler.mean)
                and np.array_equal(ckpt.arrays.get("scaler.std"), ds.scaler.std)):
            raise ConfigMismatchError(f"{path}: data split or values differ from the training run")
    return ckpt, names


def _checkpoints(cfg: RunConfig, args) -> list[Path]:
    paths = [Path(p) for p in (args.checkpoint or [])] or [Path(cfg.output_dir) / "model.ckpt"]
    for p in paths:
        if not p.is_file():
            raise CheckpointError(f"checkpoint {p} not found")
    return paths


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    target = out / "metrics.csv"
    _refuse_clobber([target], args.overwrite)
    ds = _load_dataset(cfg)
    rows = []
    for path in _checkpoints(cfg, args):
        ckpt, _ = _load_for_data(path, ds)
        mc = ckpt.model.config
        m = evaluate(ckpt.model, ds, "test", cfg.training.eval_batch_size)
        p = persistence_baseline(ds, "test", mc.lookback, mc.horizon)
        rows.append([str(path), mc.horizon, "decokan", repr(m.mse), repr(m.mae), m.count])
        rows.append([str(path), mc.horizon, "persistence", repr(p.mse), repr(p.mae), p.count])
        print(f"{path}: T={mc.horizon}  decokan mse {m.mse:.6g} mae {m.mae:.6g}  "
              f"persistence mse {p.mse:.6g} mae {p.mae:.6g}")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(target, ["checkpoint", "horizon", "method", "mse", "mae", "windows"], rows)
    print(f"wrote {target}")
    return EXIT_OK


def cmd_forecast(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    targets = [out / "forecast.csv", out / "forecast_plot.csv"]
    _refuse_clobber(targets, args.overwrite)
    (path,) = _checkpoints(cfg, args)[:1]
    ckpt, names = _load_for_data(path, None)
    mc = ckpt.model.config
    src = args.input or cfg.data.path
    if not src:
        raise ConfigError("forecast needs --input or data.path")
    if not Path(src).is_file():
        raise DataError(f"input {src} does not exist")
    schema = CsvSchema(cfg.data.timestamp, tuple(names), cfg.data.delimiter)
    table = read_table(src, schema, drop_constant=False)
    if len(table.values) < mc.lookback:
        raise DataError(f"input has {len(table.values)} rows, the model needs at least {mc.lookback}")
    mean, std = ckpt.arrays["scaler.mean"], ckpt.arrays["scaler.std"]
    hist = table.values[-mc.lookback:]
    pred = predict(ckpt.model, ((hist - mean) / std)[None])[0] * std + mean
    step = infer_frequency(table.timestamps)
    last = np.asarray(table.timestamps[-1]).astype("datetime64[ns]")
    stamps = [last + step * (h + 1) for h in range(mc.horizon)]
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(targets[0], ["timestamp"] + names,
               [[_iso(s)] + [repr(float(v)) for v in row] for s, row in zip(stamps, pred)])
    plot_rows = []
    hist_stamps = np.asarray(table.timestamps[-mc.lookback:]).astype("datetime64[ns]")
    for c, name in enumerate(names):
        plot_rows += [[_iso(s), name, "history", repr(float(v))] for s, v in zip(hist_stamps, hist[:, c])]
        plot_rows += [[_iso(s), name, "forecast", repr(float(v))] for s, v in zip(stamps, pred[:, c])]
    _write_csv(targets[1], ["timestamp", "channel", "kind", "value"], plot_rows)
    print(f"wrote {targets[0]} ({mc.horizon} rows) and {targets[1]}")
    return EXIT_OK


def _iso(ts) -> str:
    return str(np.datetime_as_string(np.datetime64(ts, "s")))


def cmd_interpret(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    targets = [out / "prune_stats.csv", out / "symbolic_formulas.csv",
               out / "interpret_report.txt", out / "activation_curves.csv"]
    _refuse_clobber(targets, args.overwrite)
    (path,) = _checkpoints(cfg, args)[:1]
    model = load_checkpoint(path).model
    grid = default_sample_grid()
    mask = prune(model, cfg.tau, grid)
    fits = symbolify(model, mask, sample_grid=grid, max_edges=cfg.max_edges)
    report = emit_report(mask, fits, cfg.top_k)
    out.mkdir(parents=True, exist_ok=True)
    targets[0].write_text(report.prune_csv(), encoding="utf-8")
    targets[1].write_text(report.symbolic_csv(), encoding="utf-8")
    targets[2].write_text(report.text(), encoding="utf-8")
    layers = {(b, mx, st, j): layer for b, mx, st, j, layer in model.kan_layers()}
    rows = []
    for rank, f in enumerate(report.top(), 1):
        phi = layers[(f.branch, f.mixer, f.stack, f.layer_index)].edge_activation(f.j, f.i, grid)
        sym = f(grid)
        rows += [[rank, f.branch, f.mixer, f.stack, f.layer_index, f.i, f.j,
                  repr(float(x)), repr(float(a)), repr(float(s))] for x, a, s in zip(grid, phi, sym)]
    _write_csv(targets[3], ["rank", "branch", "mixer", "stack", "stack_layer", "layer_i", "layer_j",
                            "x", "spline", "symbolic"], rows)
    print(report.text())
    print(f"wrote {', '.join(map(str, targets))}")
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate,
            "forecast": cmd_forecast, "interpret": cmd_interpret}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decokan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", action="append",
                       help="checkpoint path (repeat for a horizon sweep in evaluate)")
        p.add_argument("--tau", type=float, help=f"pruning threshold (default {DEFAULT_TAU})")
        p.add_argument("--top-k", type=int, help=f"formulas to report (default {DEFAULT_TOP_K})")
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        p.add_argument("--ablation", choices=sorted(ABLATIONS))
        p.add_argument("--output-dir")
        p.add_argument("--data", help="override data.path")
        p.add_argument("--input", help="forecast input CSV (defaults to data.path)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config value")
    return parser


def _overrides(args) -> dict[str, dict[str, str]]:
    ov: dict[str, dict[str, str]] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov.setdefault(section, {})[name] = value
    simple = {("run", "seed"): args.seed, ("interpret", "tau"): args.tau,
              ("interpret", "top_k"): args.top_k, ("model", "ablation"): args.ablation,
              ("run", "output_dir"): args.output_dir, ("data", "path"): args.data}
    for (section, name), value in simple.items():
        if value is not None:
            ov.setdefault(section, {})[name] = str(value)
    return ov


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = load_run_config(args.config, _overrides(args))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, IngestionError, WindowingError, SplitError, FileNotFoundError) as exc:
        print(f"input data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 1
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
