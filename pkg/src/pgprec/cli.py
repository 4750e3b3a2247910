"""Command-line entry point: ``pgprec {synth,pretrain,tune,eval,params,stats}``.

Exit codes: 0 success, 2 usage/config error or missing file, 3 checkpoint
mismatch, 4 data error, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import (
    align_domains, generate_synthetic_pair, label_cold_start, load_interactions, load_relations,
    read_split_manifest, split_holdout, write_interactions, write_relations, write_split_manifest,
)
from .errors import CheckpointError, ConfigError, NumericError, PGPRecError
from .evaluation import evaluate, read_report_csv
from .graph import build_graph
from .prompts import count_tuned_params, full_model_report, index_relations
from .stats import adjust, paired_t_test, tost_equivalence, write_stats_csv
from .trainer import (
    TrainConfig, derive_seed, epoch_logs_csv, fine_tune_baseline, model_scores, pretrain, prompt_tune,
)

EXIT_OK, EXIT_USAGE, EXIT_CHECKPOINT, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5

SYNTH_KEYS = {"n_users": int, "n_source_items": int, "n_target_items": int, "latent_dim": int,
              "density": float, "slope": float, "n_related": int}
EXTRA_KEYS = {"split_ratio": str, "cold_threshold": int, "margin": float, **SYNTH_KEYS}
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


class UsageError(Exception):
    pass


def read_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return values


def resolve_config(args):
    """Merge the config file with ``--set`` and ``--seed`` overrides; flags win."""
    raw = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    unknown = set(raw) - TRAIN_KEYS - set(EXTRA_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    train = TrainConfig.from_mapping({k: v for k, v in raw.items() if k in TRAIN_KEYS})
    extra = {}
    for k, v in raw.items():
        if k in EXTRA_KEYS:
            try:
                extra[k] = EXTRA_KEYS[k](v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    return train, extra


def split_ratio(extra, default=(8, 1, 1)):
    text = extra.get("split_ratio")
    if text is None:
        return default
    try:
        ratio = tuple(int(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"split_ratio must look like 8:1:1, got {text!r}") from exc
    if len(ratio) != 3:
        raise ConfigError(f"split_ratio must have three parts, got {text!r}")
    return ratio


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def require(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return Path(path)


class Run:
    """Collects manifest fields for one command invocation."""

    def __init__(self, command, args, config, extra):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "version": __version__,
            "config_path": args.config,
            "config": {**config.to_mapping(), **extra},
            "seeds": {"seed": config.seed},
            "inputs": {},
            "outputs": [],
            "started": _now(),
        }

    def input(self, path):
        path = require(path)
        self.manifest["inputs"][str(path)] = digest(path)
        return path

    def output(self, name):
        path = self.out / name
        self.manifest["outputs"].append(str(path))
        return path

    def write_text(self, name, text):
        self.output(name).write_text(text, encoding="utf-8")

    def finish(self):
        self.manifest["finished"] = _now()
        path = self.out / "manifest.json"
        path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now():
    return datetime.now(timezone.utc).isoformat()


def _key_list(keys):
    return "".join(f"{i}\t{k}\n" for i, k in enumerate(keys))


# --- commands ----------------------------------------------------------------------

def cmd_synth(args, config, extra):
    run = Run("synth", args, config, extra)
    kwargs = {k: extra[k] for k in SYNTH_KEYS if k in extra}
    seed = derive_seed(config.seed, "synth")
    run.manifest["seeds"]["synth"] = seed
    source, target, relations = generate_synthetic_pair(seed=seed, **kwargs)
    write_interactions(source, run.output("source.tsv"))
    write_interactions(target, run.output("target.tsv"))
    write_relations(relations, run.output("relations.tsv"))
    run.finish()
    print(f"wrote {len(source)} source, {len(target)} target interactions and {len(relations)} relations")


def _load_pair(run, args):
    source = load_interactions(run.input(args.source))
    target = load_interactions(run.input(args.target))
    return align_domains(source, target)


def cmd_pretrain(args, config, extra):
    run = Run("pretrain", args, config, extra)
    pair = _load_pair(run, args)
    seed = derive_seed(config.seed, "split")
    run.manifest["seeds"]["split"] = seed
    split = split_holdout(pair.source, split_ratio(extra, (9, 1, 0)), seed)
    graph = build_graph(split.train, pair.n_users, pair.n_source_items)
    ck, logs = pretrain(graph, config, valid=split.valid)
    save_checkpoint(ck, run.output("model.bin"))
    run.write_text("epochs.csv", epoch_logs_csv(logs))
    run.write_text("users.tsv", _key_list(pair.users))
    run.finish()
    print(f"pretrained {len(logs)} epoch(s); best epoch {ck.epoch}")


def cmd_tune(args, config, extra):
    run = Run("tune", args, config, extra)
    pair = _load_pair(run, args)
    ck = load_checkpoint(run.input(args.checkpoint))
    relations = load_relations(run.input(args.relations)) if args.mode == "prompt" else None
    seed = derive_seed(config.seed, "split")
    run.manifest["seeds"]["split"] = seed
    split = split_holdout(pair.target, split_ratio(extra), seed)
    graph = build_graph(split.train, pair.n_users, pair.n_target_items)
    if args.mode == "prompt":
        related = index_relations(relations, pair.target_items)
        res = prompt_tune(graph, ck, related, config, valid=split.valid)
    else:
        res = fine_tune_baseline(graph, ck, config, valid=split.valid)
    out = Checkpoint(res.model, res.prompts, config.seed, res.best_epoch, res.best_metric)
    save_checkpoint(out, run.output("model.bin"))
    write_split_manifest(split, run.output("split.tsv"))
    run.write_text("params.tsv", res.report.to_tsv())
    run.write_text("epochs.csv", epoch_logs_csv(res.logs))
    run.write_text("users.tsv", _key_list(pair.users))
    run.write_text("items.tsv", _key_list(pair.target_items))
    run.finish()
    print(f"{args.mode}: {len(res.logs)} epoch(s); best epoch {res.best_epoch}; "
          f"tuned {res.report.tuned} of {res.report.total} parameters ({res.report.ratio:.4f})")


def _evaluate_model(run, model_dir, on, k, threshold, scope):
    model_dir = Path(model_dir)
    ck = load_checkpoint(run.input(model_dir / "model.bin"))
    split = read_split_manifest(run.input(model_dir / "split.tsv"))
    p = ck.params
    graph = build_graph(split.train, p.n_users, p.n_items)
    labels = label_cold_start(split.train, p.n_users, threshold)
    report = evaluate(model_scores(graph, p, ck.prompts), getattr(split, on), split.train, labels, k)
    report.params = (count_tuned_params(ck.prompts, scope, p.n_users, p.n_items, p.dim, p.n_layers)
                     if ck.prompts is not None else None)
    return report


def compare(report_a, report_b, margin, names=("a", "b")):
    """Paired t-test and TOST on each metric over users common to both reports, Holm-adjusted."""
    common, ia, ib = np.intersect1d(report_a.users, report_b.users, return_indices=True)
    if len(common) < 2:
        raise ConfigError("reports share fewer than two users")
    label = f"{names[0]}_vs_{names[1]}"
    results = []
    for metric in ("recall", "ndcg"):
        a, b = getattr(report_a, metric)[ia], getattr(report_b, metric)[ib]
        name = f"{label}:{metric}{report_a.k}"
        results.append(paired_t_test(a, b, comparison=name))
        results.append(tost_equivalence(a, b, margin, comparison=name))
    return adjust(results)


def _stats_text(results):
    lines = ["comparison\ttest\tstat\tp_raw\tp_adj\tdecision"]
    for r in results:
        lines.append(f"{r.comparison}\t{r.test}\t{r.statistic:.6g}\t{r.p_raw:.6g}\t{r.p_adj:.6g}\t"
                     f"{'reject' if r.decision else 'keep'}")
    return "\n".join(lines) + "\n"


def cmd_eval(args, config, extra):
    run = Run("eval", args, config, extra)
    threshold = extra.get("cold_threshold", 5)
    reports = []
    for idx, model_dir in enumerate(args.model):
        report = _evaluate_model(run, model_dir, args.on, args.k, threshold, config.tune_scope)
        name = f"report{idx}.csv" if len(args.model) > 1 else "report.csv"
        run.write_text(name, report.to_csv())
        print(f"[{model_dir}]")
        print(report.summary(), end="")
        reports.append(report)
    if len(reports) == 2:
        results = compare(*reports, extra.get("margin", 0.05), names=("model0", "model1"))
        write_stats_csv(results, run.output("stats.csv"))
        print("[stats]")
        print(_stats_text(results), end="")
    run.finish()


def cmd_params(args, config, extra):
    run = Run("params", args, config, extra)
    ck = load_checkpoint(run.input(args.checkpoint))
    p = ck.params
    if ck.prompts is None:
        report = full_model_report(p.n_users, p.n_items, p.dim, p.n_layers)
    else:
        report = count_tuned_params(ck.prompts, config.tune_scope, p.n_users, p.n_items, p.dim, p.n_layers)
    run.write_text("params.tsv", report.to_tsv())
    run.finish()
    print(report.to_tsv(), end="")


def cmd_stats(args, config, extra):
    run = Run("stats", args, config, extra)
    a = read_report_csv(run.input(args.a))
    b = read_report_csv(run.input(args.b))
    results = compare(a, b, extra.get("margin", 0.05))
    write_stats_csv(results, run.output("stats.csv"))
    run.finish()
    print(_stats_text(results), end="")


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "tune": cmd_tune, "eval": cmd_eval,
            "params": cmd_params, "stats": cmd_stats}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    parser = _Parser(prog="pgprec", description="Graph prompt-tuning for cross-domain recommendation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic domain pair")

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pre-training on the source domain")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True, help="target interactions (fixes the shared user set)")

    p = sub.add_parser("tune", parents=[common], help="prompt-tune or fine-tune on the target domain")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--relations", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("prompt", "finetune"), default="prompt")

    p = sub.add_parser("eval", parents=[common], help="top-k evaluation of tuned model directories")
    p.add_argument("--model", action="append", required=True, help="tune output directory (repeat for two)")
    p.add_argument("--on", choices=("test", "valid"), default="test")
    p.add_argument("-k", type=int, default=10)

    p = sub.add_parser("params", parents=[common], help="tuned-parameter report of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("stats", parents=[common], help="paired tests between two per-user report CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    return parser


def exit_code(exc):
    if isinstance(exc, (UsageError, ConfigError, FileNotFoundError)):
        return EXIT_USAGE
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, PGPRecError):
        return EXIT_DATA
    raise exc


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "k", 1) < 1:
            raise ConfigError("k must be >= 1")
        config, extra = resolve_config(args)
        COMMANDS[args.command](args, config, extra)
    except (UsageError, PGPRecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
