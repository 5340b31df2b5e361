"""``dpwmixer`` command line: train, eval, forecast, bench, inspect-pyramid, grad-check, sweep.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import scaling_table, write_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import input_hash, load_series, normalize_key, read_config_file, resolve
from .data import load_csv, make_splits
from .errors import ConfigError, DataError, DpwError
from .model import ABLATIONS, init_params, predict
from .normalization import apply_scaler
from .training import BATCH_GRID, LR_GRID, grad_check, mae_metric, mse_metric, train
from .wavelet import build_pyramid, energy

log = logging.getLogger("dpwmixer")

GRAD_CHECK_DEFAULTS = {
    "lookback": 16, "horizon": 4, "scales": 1, "patch_len": 4, "hidden_dim": 8,
    "mixer_layers": 1, "synth_channels": 2,
}


# ---------------------------------------------------------------------------
# argument plumbing


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run settings (override the config file)")
    g.add_argument("--config", help="flat 'key = value' settings file")
    g.add_argument("--data", help="CSV path, or 'synthetic'")
    g.add_argument("--lookback", type=str)
    g.add_argument("--horizon", type=str)
    g.add_argument("--scales", type=str, help="pyramid depth N")
    g.add_argument("--patch-len", type=str)
    g.add_argument("--hidden-dim", type=str)
    g.add_argument("--mixer-layers", type=str)
    g.add_argument("--lr", type=str)
    g.add_argument("--batch-size", type=str)
    g.add_argument("--epochs", type=str)
    g.add_argument("--patience", type=str)
    g.add_argument("--seed", type=str)
    g.add_argument("--ablate", action="append", metavar="|".join(ABLATIONS),
                   help="disable a component (repeatable)")
    g.add_argument("--split", type=str, help="train,val,test ratios, e.g. 0.7,0.1,0.2")
    g.add_argument("--stride", type=str)
    g.add_argument("--max-batches", type=str, help="cap on batches per epoch")
    g.add_argument("--channels", dest="synth_channels", type=str, help="channel count for synthetic data")
    g.add_argument("--out", help="output directory")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other setting, e.g. synth_length=2000 (repeatable)")


_RUN_KEYS = ("data", "lookback", "horizon", "scales", "patch_len", "hidden_dim", "mixer_layers", "lr",
             "batch_size", "epochs", "patience", "seed", "split", "stride", "max_batches",
             "synth_channels", "out")


def _resolve_args(args, defaults: dict | None = None):
    file_values = dict(defaults or {})
    if getattr(args, "config", None):
        file_values.update(read_config_file(args.config))
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[normalize_key(key)] = value.strip()
    overrides.update({k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k, None) is not None})
    if getattr(args, "ablate", None):
        overrides["ablate"] = ",".join(args.ablate)
    return resolve(file_values, overrides)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# commands


def run_training(cfg, out: Path, quiet: bool = False) -> dict:
    """Train per ``cfg`` and write checkpoint, epoch log, summary and manifest into ``out``."""
    series = load_series(cfg)
    digest = input_hash(cfg)
    ds = make_splits(series, cfg["split"], cfg["lookback"], cfg["horizon"], stride=cfg["stride"])
    mcfg = cfg.model_config(ds.n_channels)
    tcfg = cfg.train_config()
    model = init_params(mcfg, seed=cfg["seed"])

    def progress(e):
        if not quiet:
            print(f"epoch {e.epoch:3d}  train {e.train_mse:.6f}  val {e.val_mse:.6f}  "
                  f"lr {e.lr:.2e}  {e.seconds:.1f}s", flush=True)

    report = train(model, ds, tcfg, progress=progress)
    paths = {
        "checkpoint": out / "checkpoint.json",
        "epoch_log": out / "epochs.csv",
        "summary": out / "summary.json",
        "manifest": out / "manifest.json",
    }
    save_checkpoint(paths["checkpoint"], model, ds.scaler, series.channels, run=cfg.to_dict())
    report.write_csv(paths["epoch_log"])
    summary = report.summary()
    summary["parameters"] = model.n_parameters()
    _write_json(paths["summary"], summary)
    _write_json(paths["manifest"], {
        "tool": f"dpwmixer {__version__}",
        "command": "train",
        "config": cfg.to_dict(),
        "model": mcfg.to_dict(),
        "train": tcfg.to_dict(),
        "seed": cfg["seed"],
        "pyramid": "haar" if mcfg.use_wavelet else "avg-pool",
        "ablations": mcfg.ablations,
        "input_sha256": digest,
        "artifacts": {k: str(v) for k, v in paths.items()},
    })
    return summary


def cmd_train(args) -> int:
    cfg = _resolve_args(args)
    out = _out_dir(cfg["out"])
    summary = run_training(cfg, out)
    for split, m in summary["final"].items():
        print(f"{split:5s}  mse {m['mse']:.6f}  mae {m['mae']:.6f}  windows {m['windows']}")
    print(f"best epoch {summary['best_epoch']}; artifacts in {out}")
    return 0


def _checkpoint_run(args):
    """Checkpoint plus the run settings it was trained with (``--data`` may override)."""
    ckpt = load_checkpoint(args.checkpoint)
    overrides = {"data": args.data} if args.data else {}
    cfg = resolve({k: v for k, v in ckpt.run.items()}, overrides)
    return ckpt, cfg


def _check_channels(ckpt, n_channels: int, source: str) -> None:
    expected = ckpt.model.config.channels
    if n_channels != expected:
        raise DataError(f"{source} has {n_channels} channels but the checkpoint expects {expected}")


def cmd_eval(args) -> int:
    ckpt, cfg = _checkpoint_run(args)
    series = load_series(cfg)
    _check_channels(ckpt, series.n_channels, cfg["data"])
    mc = ckpt.model.config
    ds = make_splits(series, cfg["split"], mc.lookback, mc.horizon, stride=cfg["stride"], scaler=ckpt.scaler)
    x, y = ds.batch(args.split)
    pred = predict(ckpt.model, x)
    metrics = {"mse": mse_metric(pred, y), "mae": mae_metric(pred, y), "windows": int(len(x))}
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    pred_path = out / f"predictions_{args.split}.csv"
    with pred_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "horizon_step", "channel", "y_true", "y_pred"])
        names = ckpt.channels or [f"ch{c}" for c in range(mc.channels)]
        for start, yt, yp in zip(ds.starts[args.split], y, pred):
            for t in range(mc.horizon):
                for c, name in enumerate(names):
                    w.writerow([int(start), t, name, repr(float(yt[t, c])), repr(float(yp[t, c]))])
    doc = {"split": args.split, **metrics, "predictions": str(pred_path)}
    _write_json(out / f"metrics_{args.split}.json", doc)
    print(f"{args.split}  mse {metrics['mse']:.6f}  mae {metrics['mae']:.6f}  windows {metrics['windows']}")
    return 0


def cmd_forecast(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    series = load_csv(args.data)
    _check_channels(ckpt, series.n_channels, args.data)
    mc = ckpt.model.config
    n = series.length
    start = n - mc.lookback if args.start_row is None else args.start_row
    if start < 0 or start + mc.lookback > n:
        raise DataError(
            f"insufficient history: need rows {start}..{start + mc.lookback - 1} "
            f"(lookback {mc.lookback}) but {args.data} has {n} rows"
        )
    window = apply_scaler(series.values[start:start + mc.lookback], ckpt.scaler)
    y_scaled = predict(ckpt.model, window)
    y = ckpt.scaler.inverse(y_scaled)
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    path = out / "forecast.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon_step", "channel", "y_pred", "y_pred_scaled"])
        for t in range(mc.horizon):
            for c, name in enumerate(series.channels):
                w.writerow([t, name, repr(float(y[t, c])), repr(float(y_scaled[t, c]))])
    print(f"forecast of {mc.horizon} steps x {mc.channels} channels from row {start + mc.lookback} -> {path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve_args(args, {"synth_channels": 7})
    lengths = [int(v) for v in args.lengths.split(",")]
    base = cfg.model_config(cfg["synth_channels"])
    rows = scaling_table(base, lengths, cfg["batch_size"], args.n_batches, args.repeats, cfg["seed"])
    out = _out_dir(cfg["out"])
    write_table(rows, out / "bench.csv")
    print("lookback  multi_s  single_s  multi/single  t(L)/t(prev)")
    for r in rows:
        prev = "" if r.ratio_to_previous is None else f"{r.ratio_to_previous:.3f}"
        print(f"{r.lookback:8d}  {r.seconds_multi:7.3f}  {r.seconds_single:8.3f}  "
              f"{r.ratio_multi_single:12.3f}  {prev}")
    return 0


def pyramid_ledger(values: np.ndarray, n_scales: int) -> list[dict]:
    """Per-level energy rows plus a ``total`` row summed over all levels."""
    pyr = build_pyramid(values, n_scales, axis=0)
    rows = pyr.energy_ledger()
    tot_p = sum(r["parent_energy"] for r in rows)
    tot_a = sum(r["approx_energy"] for r in rows)
    tot_d = sum(r["detail_energy"] for r in rows)
    rows.append({
        "level": "total", "parent_energy": tot_p, "approx_energy": tot_a, "detail_energy": tot_d,
        "rel_error": abs(tot_p - tot_a - tot_d) / tot_p if tot_p else abs(tot_a + tot_d),
    })
    return rows


def cmd_inspect_pyramid(args) -> int:
    series = load_csv(args.data)
    if args.scales < 0:
        raise ConfigError(f"scales: must be >= 0 (got {args.scales})")
    pyr = build_pyramid(series.values, args.scales, axis=0)
    out = _out_dir(args.out)
    for j, lvl in enumerate(pyr.levels, start=1):
        for kind, arr in (("approx", lvl.approx), ("detail", lvl.detail)):
            with (out / f"level{j}_{kind}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(series.channels)
                w.writerows([[repr(float(v)) for v in row] for row in arr])
    rows = pyramid_ledger(series.values, args.scales)
    cols = ["level", "parent_energy", "approx_energy", "detail_energy", "rel_error"]
    with (out / "energy_ledger.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    print(f"input energy {energy(series.values):.12g}")
    print(f"{'level':>6}  {'parent':>16}  {'approx':>16}  {'detail':>16}  {'rel_error':>10}")
    for r in rows:
        print(f"{r['level']!s:>6}  {r['parent_energy']:16.10g}  {r['approx_energy']:16.10g}  "
              f"{r['detail_energy']:16.10g}  {r['rel_error']:10.3e}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _resolve_args(args, GRAD_CHECK_DEFAULTS)
    mcfg = cfg.model_config(cfg["synth_channels"])
    model = init_params(mcfg, seed=cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    # random fusion logits and gates so no gradient is trivially symmetric
    model.fusion.data = rng.normal(0.0, 0.5, model.fusion.shape)
    x = rng.standard_normal((args.batch, mcfg.lookback, mcfg.channels))
    y = rng.standard_normal((args.batch, mcfg.horizon, mcfg.channels))
    rep = grad_check(model, x, y, step=args.step)
    for name, err in rep.per_parameter.items():
        print(f"{name:28s} {err:.3e}")
    ok = rep.max_rel_error <= args.tolerance
    print(f"checked {rep.n_checked} entries; max relative error {rep.max_rel_error:.3e} "
          f"at {rep.worst_parameter}{list(rep.worst_index)}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    base = _resolve_args(args)
    lrs = [float(v) for v in args.lrs.split(",")]
    sizes = [int(v) for v in args.batch_sizes.split(",")]
    root = _out_dir(base["out"])
    results = []
    for lr in lrs:
        for bs in sizes:
            cfg = resolve(base.to_dict(), {"lr": lr, "batch_size": bs})
            run_dir = _out_dir(root / f"lr{lr:g}_bs{bs}")
            summary = run_training(cfg, run_dir, quiet=True)
            test = summary["final"].get("test", {})
            results.append({"lr": lr, "batch_size": bs, "best_val_mse": summary["best_val_mse"],
                            "test_mse": test.get("mse"), "test_mae": test.get("mae"), "dir": str(run_dir)})
            print(f"lr {lr:g}  bs {bs:3d}  val {summary['best_val_mse']:.6f}  test {test.get('mse', float('nan')):.6f}",
                  flush=True)
    with (root / "sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(results[0]))
        w.writeheader()
        w.writerows(results)
    best = min(results, key=lambda r: r["best_val_mse"])
    print(f"best by validation: lr {best['lr']:g}, batch {best['batch_size']} (test mse {best['test_mse']:.6f})")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpwmixer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dpwmixer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoint, logs and manifest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics and per-window predictions for one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset (default: the one recorded in the checkpoint)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="forecast the horizon after a window of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV with at least lookback rows of history")
    p.add_argument("--start-row", type=int, help="first input row (default: the last lookback rows)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("bench", help="epoch time versus look-back and pyramid depth")
    _add_run_flags(p)
    p.add_argument("--lengths", default="256,512,1024")
    p.add_argument("--n-batches", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect-pyramid", help="dump Haar levels and the per-level energy ledger")
    p.add_argument("--data", required=True)
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--out", default="pyramid")
    p.set_defaults(func=cmd_inspect_pyramid)

    p = sub.add_parser("grad-check", help="finite-difference check of every parameter gradient")
    _add_run_flags(p)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("sweep", help="grid search over learning rate and batch size")
    _add_run_flags(p)
    p.add_argument("--lrs", default=",".join(f"{v:g}" for v in LR_GRID))
    p.add_argument("--batch-sizes", default=",".join(str(v) for v in BATCH_GRID))
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DpwError as exc:
        print(f"dpwmixer {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
