"""Seeded experiment runner and result aggregator.

Config files are flat ``key = value`` text with ``#`` comments.  Keys map
onto ExperimentConfig (architecture, mixer, augment, shuffle, preset,
eval_interval, seeds, tag) or TrainConfig (gamma, lr, td_lambda, ...).
Each seed trains independently and streams one CSV curve
``<out>/<tag>_seed<k>.csv`` with header ``env_steps,win_rate,loss``; the
``aggregate`` mode folds several such curves into median / 25% / 75%
percentile columns.

Exit codes: 0 all seeds complete, 2 unknown architecture/mixer/config
name, 3 unwritable or already-occupied output, 4 mismatched aggregation
grids.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import os
import sys

import numpy as np

from .baselines import (
    ConcatAgentNet,
    DeepSetAgentNet,
    HpnSetAgentNet,
    big_concat_agent,
)
from .dpn import DpnAgentNet
from .env import PRESETS, MicroBattleEnv, ShuffleWrapper
from .hpn import HpnAgentNet
from .learners import TrainConfig, train_loop

ARCHITECTURES = ("hpn", "dpn", "concat", "big_concat", "deepset", "hpn_set")
MIXERS = ("vdn", "qmix")

EXIT_OK = 0
EXIT_BAD_NAME = 2
EXIT_UNWRITABLE = 3
EXIT_GRID_MISMATCH = 4


class ConfigError(Exception):
    """Invalid experiment configuration; carries the offending token."""

    def __init__(self, message: str, token: str = ""):
        super().__init__(message)
        self.token = token


@dataclasses.dataclass
class ExperimentConfig:
    architecture: str = "hpn"
    mixer: str = "vdn"
    augment: bool = False
    augment_copies: int = 1
    shuffle: bool = False
    preset: str = "3v3"
    eval_interval: int = 1000
    seeds: tuple = (0, 1, 2, 3, 4)
    tag: str = ""
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; choose from "
                f"{', '.join(ARCHITECTURES)}", token=self.architecture)
        if self.mixer not in MIXERS:
            raise ConfigError(
                f"unknown mixer {self.mixer!r}; choose from "
                f"{', '.join(MIXERS)}", token=self.mixer)
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {self.preset!r}; choose from "
                f"{', '.join(PRESETS)}", token=self.preset)
        if not self.tag:
            parts = [self.architecture, self.mixer]
            if self.augment:
                parts.append("aug")
            if self.shuffle:
                parts.append("shuffle")
            parts.append(self.preset)
            self.tag = "_".join(parts)


def _parse_value(key: str, value: str, kind: type):
    if key == "seeds":
        try:
            return tuple(int(tok) for tok in value.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"bad seed list {value!r}", token=value)
    if kind is bool:
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean {value!r} for {key}", token=value)
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad {kind.__name__} {value!r} for {key}",
                          token=value)
    return value


def parse_config_text(text: str) -> ExperimentConfig:
    exp_fields = {f.name: f.type for f in
                  dataclasses.fields(ExperimentConfig) if f.name != "train"}
    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    type_of = {"str": str, "int": int, "float": float, "bool": bool,
               "tuple": tuple}
    exp_kwargs: dict = {}
    train_kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got "
                              f"{line!r}", token=line)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in exp_fields:
            exp_kwargs[key] = _parse_value(key, value,
                                           type_of.get(exp_fields[key], str))
        elif key in train_fields:
            train_kwargs[key] = _parse_value(
                key, value, type_of.get(train_fields[key], str))
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}",
                              token=key)
    return ExperimentConfig(train=TrainConfig(**train_kwargs), **exp_kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------

def net_factory_for(architecture: str, env_cfg):
    n, m = env_cfg.n_allies, env_cfg.n_enemies
    table = {
        "hpn": lambda rng: HpnAgentNet(rng, n, m),
        "dpn": lambda rng: DpnAgentNet(rng, n, m),
        "concat": lambda rng: ConcatAgentNet(rng, n, m),
        "big_concat": lambda rng: big_concat_agent(rng, n, m),
        "deepset": lambda rng: DeepSetAgentNet(rng, n, m),
        "hpn_set": lambda rng: HpnSetAgentNet(rng, n, m),
    }
    return table[architecture]


def env_factory_for(preset: str, shuffle: bool, run_seed: int):
    cfg = PRESETS[preset]
    if not shuffle:
        return lambda tag: MicroBattleEnv(cfg)
    return lambda tag: ShuffleWrapper(
        MicroBattleEnv(cfg), np.random.default_rng([run_seed, 17, tag]))


# ---------------------------------------------------------------------------
# run mode
# ---------------------------------------------------------------------------

def seed_csv_path(out_dir: str, tag: str, seed: int) -> str:
    return os.path.join(out_dir, f"{tag}_seed{seed}.csv")


def run_seed(exp: ExperimentConfig, seed: int, out_dir: str,
             overwrite: bool) -> str:
    """Train one seed, streaming its CSV row by row; returns the path."""
    path = seed_csv_path(out_dir, exp.tag, seed)
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(
            f"{path} exists; pass --overwrite to replace it")
    train_cfg = dataclasses.replace(exp.train, seed=seed)
    env_factory = env_factory_for(exp.preset, exp.shuffle, seed)
    net_factory = net_factory_for(exp.architecture, PRESETS[exp.preset])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("env_steps,win_rate,loss\n")
        fh.flush()

        def emit(row):
            fh.write(f"{row[0]},{row[1]:.6f},{row[2]:.6f}\n")
            fh.flush()

        train_loop(train_cfg, env_factory, net_factory, mixer=exp.mixer,
                   augment=exp.augment, augment_copies=exp.augment_copies,
                   eval_interval=exp.eval_interval, progress=emit)
    return path


def _seed_worker(exp: ExperimentConfig, seed: int, out_dir: str,
                 overwrite: bool) -> str:
    return run_seed(exp, seed, out_dir, overwrite)


def cmd_run(args) -> int:
    try:
        exp = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_BAD_NAME
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_BAD_NAME

    if args.seeds:
        try:
            seeds = tuple(int(tok) for tok in
                          args.seeds.replace(",", " ").split())
        except ValueError:
            print(f"bad --seeds list: {args.seeds!r}", file=sys.stderr)
            return EXIT_BAD_NAME
    elif os.environ.get("PERMNET_SEED"):
        raw = os.environ["PERMNET_SEED"]
        try:
            seeds = tuple(int(tok) for tok in raw.replace(",", " ").split())
        except ValueError:
            print(f"bad PERMNET_SEED list: {raw!r}", file=sys.stderr)
            return EXIT_BAD_NAME
    else:
        seeds = exp.seeds

    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as err:
        print(f"cannot create output dir: {err}", file=sys.stderr)
        return EXIT_UNWRITABLE

    try:
        if args.jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(
                    max_workers=args.jobs) as pool:
                futures = [pool.submit(_seed_worker, exp, seed, args.out,
                                       args.overwrite) for seed in seeds]
                for future in futures:
                    future.result()
        else:
            for seed in seeds:
                run_seed(exp, seed, args.out, args.overwrite)
    except (FileExistsError, OSError) as err:
        print(str(err), file=sys.stderr)
        return EXIT_UNWRITABLE
    return EXIT_OK


# ---------------------------------------------------------------------------
# aggregate mode
# ---------------------------------------------------------------------------

def read_curve(path: str) -> tuple[list[int], list[float]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "env_steps,win_rate,loss":
        raise ValueError(f"{path}: not a result CSV")
    steps: list[int] = []
    wins: list[float] = []
    for line in lines[1:]:
        step, win, _ = line.split(",")
        steps.append(int(step))
        wins.append(float(win))
    return steps, wins


def cmd_aggregate(paths: list[str]) -> int:
    curves = []
    for path in paths:
        try:
            curves.append(read_curve(path))
        except (OSError, ValueError) as err:
            print(str(err), file=sys.stderr)
            return EXIT_GRID_MISMATCH
    grid = curves[0][0]
    for path, (steps, _) in zip(paths, curves):
        if steps != grid:
            print(f"{path}: env_steps grid does not match {paths[0]}",
                  file=sys.stderr)
            return EXIT_GRID_MISMATCH
    wins = np.array([w for _, w in curves])
    print("env_steps,median,p25,p75")
    for column, step in enumerate(grid):
        values = wins[:, column]
        print(f"{step},{np.percentile(values, 50):.6f},"
              f"{np.percentile(values, 25):.6f},"
              f"{np.percentile(values, 75):.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "aggregate":
        parser = argparse.ArgumentParser(prog="permnet aggregate")
        parser.add_argument("files", nargs="+")
        args = parser.parse_args(argv[1:])
        return cmd_aggregate(args.files)
    parser = argparse.ArgumentParser(
        prog="permnet",
        description="train a (architecture x mixer) combination on the "
                    "micro battle and emit per-seed CSV learning curves")
    parser.add_argument("--config", required=True,
                        help="flat key = value experiment config")
    parser.add_argument("--out", default="results",
                        help="output directory for CSV curves")
    parser.add_argument("--seeds", default="",
                        help="comma-separated seed list override")
    parser.add_argument("--jobs", type=int, default=1,
                        help="train this many seeds concurrently")
    parser.add_argument("--overwrite", action="store_true",
                        help="replace existing output files")
    args = parser.parse_args(argv)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
