"""Command-line entry point: ingest, synth, train, backtest, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .agent import NumericalError
from .backtest import (MarketView, Models, build_models, model_arrays, read_metrics, restore_models,
                       run_online, train_offline, write_report)
from .config import ConfigError, RunConfig, load_config
from .graph_conv import GraphError
from .market_data import DataError, build_panel, coverage_report, load_csv, load_dir, write_csv
from .portfolio import ConvergenceError, PortfolioError
from .synth import generate
from .tensor import NonFiniteError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT = "checkpoint.txt"
TRAIN_LOG = ("step", "delta", "critic_loss", "actor_grad_norm", "reward")

logger = logging.getLogger("graphfolio")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graphfolio", description="Graph-convolutional actor-critic portfolio engine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_config: bool = True):
        sp.add_argument("--config", required=needs_config, help="INI run configuration")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--out", help="override [run] out_dir")

    common(sub.add_parser("ingest", help="validate the data directory and summarize coverage"))
    common(sub.add_parser("synth", help="write synthetic OHLCV CSVs"))
    common(sub.add_parser("train", help="offline training; writes checkpoint and train_log.csv"))
    bt = sub.add_parser("backtest", help="online backtest over the test range")
    common(bt)
    bt.add_argument("--checkpoint", help=f"checkpoint file (default <out>/{CHECKPOINT})")
    rp = sub.add_parser("report", help="summarize a backtest output directory")
    common(rp, needs_config=False)
    return p


def _echo_config(cfg: RunConfig, out: Path, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.effective.ini").write_text(cfg.to_ini(), encoding="utf-8")


def _load_series(cfg: RunConfig):
    return load_dir(cfg.data_dir, cfg.assets or None)


def cmd_ingest(cfg: RunConfig) -> int:
    series = _load_series(cfg)
    rows = coverage_report(series, cfg.train.indicators)
    print("asset,rows,first,last,warmup_rows,usable_from")
    for r in rows:
        print(f"{r['asset']},{r['rows']},{r['first']},{r['last']},{r['warmup_rows']},{r['usable_from']}")
    split = cfg.dataset_split()
    if split is not None:
        train = build_panel(series, split.train_start, split.train_end)
        test = build_panel(series, split.test_start, split.test_end)
        print(f"train {train.dates[0]}..{train.dates[-1]} {len(train)} days; "
              f"test {test.dates[0]}..{test.dates[-1]} {len(test)} days")
    else:
        panel = build_panel(series)
        print(f"panel {panel.dates[0]}..{panel.dates[-1]} {len(panel)} days, {panel.m} assets")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(cfg.assets) if cfg.assets else None
    series = generate(cfg.synth, cfg.seed, names)
    for s in series:
        write_csv(s, out / f"{s.asset}.csv")
        load_csv(out / f"{s.asset}.csv")
    _echo_config(cfg, out, "synth")
    print(f"wrote {len(series)} files to {out}")
    return EXIT_OK


def _meta(cfg: RunConfig, assets) -> dict[str, str]:
    t = cfg.train
    return {
        "assets": ",".join(assets),
        "window": str(t.window),
        "cheb_order": str(t.cheb_order),
        "use_gcn": str(t.use_gcn).lower(),
        "critic_uses_weights": str(t.critic_uses_weights).lower(),
        "seed": str(cfg.seed),
    }


def cmd_train(cfg: RunConfig) -> int:
    series = _load_series(cfg)
    split = cfg.dataset_split()
    panel = build_panel(series, split.train_start, split.train_end) if split else build_panel(series)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out, "train")
    step = [0]
    with (out / "train_log.csv").open("w", newline="", encoding="utf-8") as fh:
        log = csv.writer(fh, lineterminator="\n")
        log.writerow(TRAIN_LOG)

        def on_step(d):
            log.writerow([step[0], repr(d.delta), repr(d.critic_loss), repr(d.actor_grad_norm), repr(d.reward)])
            step[0] += 1

        res = train_offline(panel, None, cfg.train, cfg.seed, on_step=on_step)
    with (out / "batches.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "start", "mean_reward", "mean_delta", "critic_loss", "actor_grad_norm",
                    "final_value", "cash", *panel.assets])
        for b in res.batches:
            w.writerow([b.batch, b.start, repr(b.mean_reward), repr(b.mean_delta), repr(b.critic_loss),
                        repr(b.actor_grad_norm), repr(float(b.final_value)), *(repr(float(x)) for x in b.mean_weights)])
    checkpoint.save(out / CHECKPOINT, model_arrays(res.models), _meta(cfg, panel.assets))
    print(f"trained {len(res.batches)} batches ({step[0]} steps); rsae loss "
          f"{res.rsae_losses[0]:.3e} -> {res.rsae_losses[-1]:.3e}; checkpoint {out / CHECKPOINT}")
    return EXIT_OK


def load_models(path, cfg: RunConfig, assets) -> Models:
    arrays, meta = checkpoint.load(path)
    expected = _meta(cfg, assets)
    for key in ("assets", "window", "cheb_order", "use_gcn", "critic_uses_weights"):
        if key in meta and meta[key] != expected[key]:
            raise checkpoint.CheckpointError(
                f"checkpoint field {key} = {meta[key]!r} does not match config ({expected[key]!r})"
            )
    models = build_models(len(assets), cfg.train, cfg.seed)
    try:
        restore_models(models, arrays)
    except (KeyError, ShapeError) as exc:
        raise checkpoint.CheckpointError(f"checkpoint does not fit the configured models: {exc}") from None
    return models


def _benchmark(cfg: RunConfig, dates) -> np.ndarray | None:
    if not cfg.benchmark:
        return None
    s = load_csv(cfg.benchmark)
    idx = np.searchsorted(s.dates, dates)
    if np.any(idx < 1) or np.any(idx >= len(s)) or np.any(s.dates[np.minimum(idx, len(s) - 1)] != dates):
        raise DataError(f"benchmark {cfg.benchmark} does not cover every backtest date (with one prior day)")
    return s.close[idx] / s.close[idx - 1] - 1.0


def cmd_backtest(cfg: RunConfig, ckpt: str | None) -> int:
    series = _load_series(cfg)
    split = cfg.dataset_split()
    if split is None:
        raise ConfigError("backtest needs a split id or explicit train/test dates")
    panel = build_panel(series, split.train_start, split.test_end)
    test = build_panel(series, split.test_start, split.test_end)
    out = Path(cfg.out_dir)
    models = load_models(Path(ckpt) if ckpt else out / CHECKPOINT, cfg, panel.assets)
    view = MarketView(panel, cfg.train)
    bench = _benchmark(cfg, test.dates)
    report = run_online(panel, split.test_start, len(test), models, cfg.train, seed=cfg.seed,
                        benchmark=bench, view=view)
    _echo_config(cfg, out, "backtest")
    write_report(report, out)
    print(f"backtest {test.dates[0]}..{test.dates[-1]}: roi {report.roi:.2f}% mdd {report.mdd * 100:.2f}% "
          f"sharpe {report.sharpe:.4f}")
    return EXIT_OK


def cmd_report(out_dir: str) -> int:
    out = Path(out_dir)
    path = out / "metrics.txt"
    if not path.exists():
        raise DataError(f"{path}: no metrics; run backtest first")
    for k, v in read_metrics(path).items():
        print(f"{k:>10} {v}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"graphfolio: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report" and not args.config:
            return cmd_report(args.out or RunConfig().out_dir)
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "backtest":
            return cmd_backtest(cfg, args.checkpoint)
        return cmd_report(cfg.out_dir)
    except (ConfigError, UsageError) as exc:
        print(f"graphfolio: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, PortfolioError, checkpoint.CheckpointError, OSError) as exc:
        print(f"graphfolio: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NonFiniteError, ConvergenceError, FloatingPointError) as exc:
        print(f"graphfolio: numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag is not None:
            print(f"graphfolio: diagnostics: {diag}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
