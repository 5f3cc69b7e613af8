"""Command-line front end: ``merge-planner <command> --config run.toml --out DIR``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import sys
import zlib
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import cluster_styles, purity
from .config import RunConfig, load_config
from .errors import ConfigError, MergePlannerError, NumericGuardError, SchemaError
from .safety import NoPrediction, WithPrediction, horizon_sweep, run_scenario
from .style import accuracy_sweep, save_models, save_sweep_csv
from .synthetic import ScenarioSpec, generate_dataset
from .trajectory import AGGRESSIVE, NORMAL, STYLE_NAMES, load_trajectories, save_trajectories
from .transformer.data import split_episodes
from .transformer.model import TransformerModel
from .transformer.training import TrainConfig, fit_style_model, save_history_csv

log = logging.getLogger("merge_planner")

COMMANDS = ("generate", "cluster", "train-style", "train-traj", "simulate", "sweep", "report")
EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sub_seed(seed: int, name: str) -> int:
    """Deterministic child seed for the named random stream."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------- helpers

class Run:
    """Resolved config plus output layout for one command invocation."""

    def __init__(self, cfg: RunConfig, out: Path, args):
        self.cfg, self.out, self.args = cfg, out, args
        for d in ("data", "models", "logs", "reports"):
            (out / d).mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    @property
    def styles(self):
        if self.args.style is None:
            return (AGGRESSIVE, NORMAL)
        return (self.args.style,)

    def require(self, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise SchemaError(f"missing input {p}; run the earlier pipeline step first")
        return p


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _update_manifest(run: Run, command: str) -> None:
    path = run.path("manifest.json")
    manifest = _read_json(path) if path.exists() else {"commands": {}}
    manifest["commands"][command] = {
        "config_sha256": run.cfg.digest(),
        "seed": run.cfg.seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    manifest["versions"] = {"merge_planner": __version__, "numpy": np.__version__,
                            "python": platform.python_version()}
    _write_json(path, manifest)


def _load_episodes(run: Run):
    return load_trajectories(run.require("data", "episodes.csv"))


def _load_cluster_styles(run: Run):
    rows = list(csv.DictReader(open(run.require("data", "styles.csv"), encoding="utf-8")))
    return {int(r["vehicle_id"]): (None if r["cluster_style"] == "" else int(r["cluster_style"])) for r in rows}


def _scenario(cfg: RunConfig, style: int) -> ScenarioSpec:
    sc = cfg.scenario
    if style == AGGRESSIVE:
        return ScenarioSpec(AGGRESSIVE, seed=sc.aggressive_seed, ads_speed=cfg.planner.v_initial,
                            ads_merge_gap=sc.aggressive_merge_gap)
    return ScenarioSpec(NORMAL, seed=sc.normal_seed, ads_speed=cfg.planner.v_initial,
                        ads_merge_gap=sc.normal_merge_gap)


def _load_traj_models(run: Run, styles=(AGGRESSIVE, NORMAL)):
    return {s: TransformerModel.load(run.require("models", f"traj_{STYLE_NAMES[s]}.json")) for s in styles}


# ---------------------------------------------------------------- commands

def cmd_generate(run: Run):
    cfg = run.cfg
    episodes = generate_dataset(cfg.data.n_episodes, cfg.data.aggressive_fraction, sub_seed(cfg.seed, "data"))
    save_trajectories(episodes, run.path("data", "episodes.csv"))
    log.info("wrote %d episodes", len(episodes))


def cmd_cluster(run: Run):
    cfg = run.cfg
    episodes = _load_episodes(run)
    model, styles = cluster_styles(episodes, seed=sub_seed(cfg.seed, "cluster"),
                                   restarts=cfg.clustering.restarts, max_iter=cfg.clustering.max_iter)
    model.save(run.path("models", "kmeans.json"))
    with open(run.path("data", "styles.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "cluster_style", "generator_style"])
        for ep, s in zip(episodes, styles):
            w.writerow([ep.track.vehicle_id, "" if s is None else s, "" if ep.style is None else ep.style])
    known = [(s, ep.style) for s, ep in zip(styles, episodes) if s is not None and ep.style is not None]
    summary = {"n_episodes": len(episodes), "n_clustered": sum(s is not None for s in styles),
               "objective": model.objective,
               "n_aggressive": sum(s == AGGRESSIVE for s in styles),
               "n_normal": sum(s == NORMAL for s in styles),
               "purity": purity([a for a, _ in known], [b for _, b in known]) if known else None}
    _write_json(run.path("reports", "cluster.json"), summary)


def cmd_train_style(run: Run):
    cfg = run.cfg
    labels_by_id = _load_cluster_styles(run)
    episodes = [ep for ep in _load_episodes(run) if labels_by_id.get(ep.track.vehicle_id) is not None]
    labels = [labels_by_id[ep.track.vehicle_id] for ep in episodes]
    sc = cfg.style
    rows = accuracy_sweep(episodes, labels, sc.max_prefix_steps, sc.test_fraction,
                          sub_seed(cfg.seed, "style-split"), sc.l2, sc.lr, sc.iters)
    save_models({r.i_steps: r.model for r in rows}, run.path("models", "style_logistic.json"))
    save_sweep_csv(rows, run.path("reports", "style_accuracy.csv"))


def cmd_train_traj(run: Run):
    cfg, tc = run.cfg, run.cfg.transformer
    labels_by_id = _load_cluster_styles(run)
    episodes = _load_episodes(run)
    mcfg = tc.model_config(run.args.window_seconds)
    tcfg = TrainConfig(tc.epochs, tc.batch_size, tc.lr, tc.decay, tc.eps, tc.lr_final)
    for style in run.styles:
        name = STYLE_NAMES[style]
        feats = [ep.track.features() for ep in episodes if labels_by_id.get(ep.track.vehicle_id) == style]
        if len(feats) < 2:
            raise SchemaError(f"too few {name} episodes to train a trajectory model")
        tr, te = split_episodes(len(feats), tc.train_fraction, sub_seed(cfg.seed, f"traj-split-{name}"))
        try:
            res = fit_style_model(feats, mcfg, tr, te, seed=sub_seed(cfg.seed, f"traj-train-{name}"),
                                  stride=tc.stride, train_cfg=tcfg, val_stride=tc.val_stride)
        except NumericGuardError as exc:
            if exc.checkpoint is not None:
                exc.checkpoint.save(run.path("models", f"traj_{name}.aborted.json"))
            raise
        res.model.save(run.path("models", f"traj_{name}.json"))
        save_history_csv(res.history, run.path("logs", f"traj_{name}_history.csv"))
        _write_json(run.path("reports", f"traj_{name}.json"),
                    {"style": name, "window_steps": mcfg.window, "n_train": len(tr), "n_test": len(te),
                     "val_mse": res.val_mse})


def _horizon_tag(h: float) -> str:
    return f"h{h:g}".replace(".", "p")


def cmd_simulate(run: Run):
    cfg = run.cfg
    horizon = cfg.scenario.horizon if run.args.horizon is None else run.args.horizon
    models = _load_traj_models(run, run.styles) if horizon > 0 else {}
    for style in run.styles:
        name = STYLE_NAMES[style]
        spec = _scenario(cfg, style)
        episode = spec.episode()
        base = run_scenario(spec, NoPrediction(), cfg.planner, episode)
        pred = run_scenario(spec, WithPrediction(models, horizon) if horizon > 0 else NoPrediction(),
                            cfg.planner, episode)
        base.save_log_csv(run.path("logs", f"sim_{name}_baseline.csv"))
        pred.save_log_csv(run.path("logs", f"sim_{name}_{_horizon_tag(horizon)}.csv"))
        _write_json(run.path("reports", f"simulate_{name}.json"),
                    {"style": name, "horizon_s": horizon, "t_lc": episode.t_lc, "t_e": episode.t_e,
                     "baseline": base.summary(), "with_prediction": pred.summary()})


def cmd_sweep(run: Run):
    cfg = run.cfg
    models = _load_traj_models(run)
    report = horizon_sweep(_scenario(cfg, NORMAL), _scenario(cfg, AGGRESSIVE), models,
                           cfg.sweep.horizons, cfg.planner)
    report.save_csv(run.path("reports", "sweep.csv"))
    report.save_summary(run.path("reports", "sweep_summary.json"))


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v)


def cmd_report(run: Run):
    parts = {"cluster": run.require("reports", "cluster.json"),
             "sweep": run.require("reports", "sweep.csv")}
    cluster = _read_json(parts["cluster"])
    traj = {STYLE_NAMES[s]: _read_json(run.require("reports", f"traj_{STYLE_NAMES[s]}.json"))
            for s in (NORMAL, AGGRESSIVE)}
    acc_path = run.path("reports", "style_accuracy.csv")
    acc = list(csv.DictReader(open(acc_path, encoding="utf-8"))) if acc_path.exists() else []
    sweep = list(csv.reader(open(parts["sweep"], encoding="utf-8")))
    lines = ["# Merge planner run report", "",
             f"Seed {run.cfg.seed}, config sha256 `{run.cfg.digest()[:16]}`.", "",
             "## Driving-style clustering", "",
             f"Clustered {cluster['n_clustered']} of {cluster['n_episodes']} episodes: "
             f"{cluster['n_aggressive']} aggressive, {cluster['n_normal']} normal; "
             f"purity against generator labels {_fmt(cluster['purity'])}.", ""]
    if acc:
        lines += ["## Style prediction accuracy", "", "| prefix steps | seconds | accuracy |", "|---|---|---|"]
        lines += [f"| {r['i']} | {float(r['seconds']):.3f} | {float(r['accuracy']):.4f} |" for r in acc]
        lines.append("")
    lines += ["## Trajectory models", "", "| style | window steps | validation MSE |", "|---|---|---|"]
    lines += [f"| {k} | {v['window_steps']} | {v['val_mse']:.3e} |" for k, v in traj.items()]
    lines += ["", "## TTC by prediction horizon", "", "| horizon (s) | normal | aggressive |", "|---|---|---|"]
    lines += [f"| {h} | {float(n):.4f} | {float(a):.4f} |" for h, n, a in sweep[1:]]
    with open(run.path("reports", "report.md"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json(run.path("reports", "report.json"),
                {"cluster": cluster, "trajectory": traj,
                 "style_accuracy": {r["i"]: float(r["accuracy"]) for r in acc},
                 "sweep": [{"horizon": h, "normal": float(n), "aggressive": float(a)} for h, n, a in sweep[1:]]})


HANDLERS = {"generate": cmd_generate, "cluster": cmd_cluster, "train-style": cmd_train_style,
            "train-traj": cmd_train_traj, "simulate": cmd_simulate, "sweep": cmd_sweep, "report": cmd_report}


# ---------------------------------------------------------------- entry point

def _style_arg(text: str) -> int:
    key = text.strip().lower()
    for code, name in STYLE_NAMES.items():
        if key in (name, str(code)):
            return code
    raise argparse.ArgumentTypeError(f"unknown style {text!r} (use aggressive or normal)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="merge-planner", description="Merging-HDV style prediction and ADS planning pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration (built-in defaults plus --seed when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--horizon", type=float, help="prediction horizon in seconds (simulate)")
        p.add_argument("--style", type=_style_arg, help="restrict to one driving style")
        p.add_argument("--window-seconds", type=float, help="transformer window length (train-traj)")
    return parser


def _thread_limit():
    raw = os.environ.get("MERGE_PLANNER_THREADS")
    if raw is None:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"MERGE_PLANNER_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.seed is None:
            raise ConfigError("a seed is required: pass --config with a top-level seed, or --seed")
        else:
            cfg = RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.horizon is not None and args.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if args.window_seconds is not None and args.window_seconds <= 0:
            raise ConfigError("window length must be positive")
        run = Run(cfg, Path(args.out), args)
        with _thread_limit():
            HANDLERS[args.command](run)
        _update_manifest(run, args.command)
    except NumericGuardError as exc:
        print(f"merge-planner: numeric guard tripped: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MergePlannerError, OSError) as exc:
        print(f"merge-planner: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
