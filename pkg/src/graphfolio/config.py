"""Run configuration: sectioned key = value files read with configparser.

Unknown sections or keys are rejected.  ``RunConfig.to_ini`` writes the
effective configuration with every default filled in.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .backtest import TrainConfig
from .indicators import IndicatorParams
from .market_data import DatasetSplit
from .synth import SynthSpec


class ConfigError(ValueError):
    pass


# TrainConfig fields grouped by section; "indicators" is its own section
MODEL_KEYS = ("window", "corr_window", "corr_field", "cheb_order", "kappa", "gamma", "actor_lr",
              "critic_lr", "rsae_lr", "rsae_epochs", "rsae_batch", "feature_clip", "use_gcn",
              "critic_uses_weights")
TRAINING_KEYS = ("span", "epochs", "batches_per_epoch", "buffer_days", "online_rsae_epochs",
                 "sell_fee", "buy_fee", "initial_value", "cvar_alpha")
OPTIONAL_FLOATS = {"feature_clip"}


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data"
    assets: tuple[str, ...] = ()
    split: int | None = None
    train_start: str | None = None
    train_end: str | None = None
    test_start: str | None = None
    test_end: str | None = None
    benchmark: str | None = None
    seed: int = 0
    out_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def dataset_split(self) -> DatasetSplit | None:
        dates = (self.train_start, self.train_end, self.test_start, self.test_end)
        if self.split is not None:
            if any(d is not None for d in dates):
                raise ConfigError("give either split or explicit train/test dates, not both")
            return DatasetSplit.preset(self.split)
        if all(d is None for d in dates):
            return None
        if any(d is None for d in dates):
            raise ConfigError("explicit splits need train_start, train_end, test_start and test_end")
        return DatasetSplit.from_dates(*dates)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
        return dataclasses.replace(
            self,
            seed=self.seed if seed is None else seed,
            out_dir=self.out_dir if out_dir is None else out_dir,
        )

    def to_ini(self) -> str:
        t = self.train
        sections = {
            "run": {"seed": self.seed, "out_dir": self.out_dir},
            "data": {
                "data_dir": self.data_dir,
                "assets": ",".join(self.assets),
                "split": self.split,
                "train_start": self.train_start,
                "train_end": self.train_end,
                "test_start": self.test_start,
                "test_end": self.test_end,
                "benchmark": self.benchmark,
            },
            "model": {k: getattr(t, k) for k in MODEL_KEYS},
            "training": {k: getattr(t, k) for k in TRAINING_KEYS},
            "indicators": dataclasses.asdict(t.indicators),
            "synth": {f.name: getattr(self.synth, f.name) for f in dataclasses.fields(SynthSpec)},
        }
        out = []
        for name, kv in sections.items():
            out.append(f"[{name}]")
            out.extend(f"{k} = {_show(v)}" for k, v in kv.items())
            out.append("")
        return "\n".join(out)


def _show(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_show(x) for x in v)
    return str(v)


def _parse(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or key in OPTIONAL_FLOATS:
            if key in OPTIONAL_FLOATS and text.lower() == "none":
                return None
            return float(text)
        if isinstance(default, tuple):
            vals = [x.strip() for x in text.split(",") if x.strip()]
            return tuple(float(x) for x in vals) if key in ("drift", "volatility") else tuple(vals)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section(cp: configparser.ConfigParser, name: str, defaults: dict) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _parse(name, key, raw, defaults[key])
    return out


def _optional(section: str, key: str, raw: str | None, kind):
    if raw is None or raw.strip().lower() in ("", "none"):
        return None
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {"run", "data", "model", "training", "indicators", "synth"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"{source}: unknown section [{s}]")

    base = RunConfig()
    run = _section(cp, "run", {"seed": base.seed, "out_dir": base.out_dir})

    data_keys = ("data_dir", "assets", "split", "train_start", "train_end", "test_start", "test_end",
                 "benchmark")
    data = {}
    if cp.has_section("data"):
        for key, raw in cp.items("data"):
            if key not in data_keys:
                raise ConfigError(f"[data] unknown key {key!r}")
            data[key] = raw
    assets = tuple(a.strip() for a in data.get("assets", "").split(",") if a.strip())
    dates = {k: _optional("data", k, data.get(k), str) for k in data_keys[3:]}

    t_default = TrainConfig()
    model = _section(cp, "model", {k: getattr(t_default, k) for k in MODEL_KEYS})
    training = _section(cp, "training", {k: getattr(t_default, k) for k in TRAINING_KEYS})
    ind = _section(cp, "indicators", dataclasses.asdict(IndicatorParams()))
    synth_defaults = {f.name: getattr(SynthSpec(), f.name) for f in dataclasses.fields(SynthSpec)}
    synth_defaults["drift"] = (0.0,)
    synth_defaults["volatility"] = (0.01,)
    synth = _section(cp, "synth", synth_defaults)
    for k in ("drift", "volatility"):
        if k in synth and len(synth[k]) == 1:
            synth[k] = synth[k][0]

    try:
        train = TrainConfig(**model, **training, indicators=IndicatorParams(**ind))
        _check_ranges(train)
        cfg = RunConfig(
            data_dir=data.get("data_dir", base.data_dir).strip(),
            assets=assets,
            split=_optional("data", "split", data.get("split"), int),
            seed=run.get("seed", base.seed),
            out_dir=run.get("out_dir", base.out_dir),
            train=train,
            synth=SynthSpec(**synth),
            **dates,
        )
        cfg.dataset_split()
        _check_synth(cfg.synth)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def _check_ranges(t: TrainConfig) -> None:
    checks = [
        ("cheb_order", t.cheb_order >= 1, ">= 1"),
        ("corr_window", t.corr_window >= 3, ">= 3"),
        ("kappa", t.kappa > 0, "> 0"),
        ("gamma", 0.0 <= t.gamma <= 1.0, "in [0, 1]"),
        ("actor_lr", t.actor_lr > 0, "> 0"),
        ("critic_lr", t.critic_lr > 0, "> 0"),
        ("rsae_lr", t.rsae_lr > 0, "> 0"),
        ("rsae_epochs", t.rsae_epochs >= 0, ">= 0"),
        ("rsae_batch", t.rsae_batch >= 1, ">= 1"),
        ("feature_clip", t.feature_clip is None or t.feature_clip > 0, "> 0 or none"),
        ("epochs", t.epochs >= 0, ">= 0"),
        ("batches_per_epoch", t.batches_per_epoch >= 0, ">= 0"),
        ("online_rsae_epochs", t.online_rsae_epochs >= 0, ">= 0"),
        ("sell_fee", 0.0 <= t.sell_fee < 1.0, "in [0, 1)"),
        ("buy_fee", 0.0 <= t.buy_fee < 1.0, "in [0, 1)"),
        ("initial_value", t.initial_value > 0, "> 0"),
    ]
    for name, ok, rule in checks:
        if not ok:
            raise ConfigError(f"{name} must be {rule}, got {getattr(t, name)!r}")


def _check_synth(s: SynthSpec) -> None:
    if s.assets < 1 or s.days < 2:
        raise ConfigError("[synth] needs assets >= 1 and days >= 2")
    if s.start_price <= 0:
        raise ConfigError("[synth] start_price must be > 0")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
