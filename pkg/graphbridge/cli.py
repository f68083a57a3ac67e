#!/usr/bin/env python3
"""
GraphBridge - pre-train and side-tune GNNs across transfer scenarios
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import config as user_config
from .backbones import BACKBONE_KINDS, BackboneConfig, load_ckpt, save_ckpt
from .bridges import ADAPTER_KINDS
from .errors import ConfigError, GraphBridgeError, NumericalError
from .graph_data import make_splits
from .graph_io import convert_edgelist, load_container, read_json, save_container, write_canonical
from .harness import (SCENARIOS, ScenarioConfig, audit_findings, audit_params, compare, default_grid,
                      gradient_suite, mask_timing, run_scenario, speedup_table, write_table)
from .metrics import metric_report
from .pretrain import METHODS, PretrainConfig, pretrain, write_trajectory
from .side_tune import MODES
from .synth import SYNTH_KINDS, synth
from .version import __version__

logger = logging.getLogger(__name__)


def _parse_pairs(items: Optional[List[str]]) -> Dict:
    """key=value strings to a dict, values parsed as JSON when possible"""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got '{item}'")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def _seeds(raw: Optional[str]) -> Optional[List[int]]:
    if raw is None:
        return None
    try:
        return [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got '{raw}'")


class GraphBridgeCLI:
    def __init__(self, deterministic: bool = False, progress: bool = False):
        self.config = user_config.load_config()
        self.deterministic = deterministic
        self.progress = progress

    def workers(self, requested: Optional[int]) -> int:
        if self.deterministic:
            return 1
        return requested if requested is not None else int(self.config["workers"])

    def show_config(self):
        """Display current configuration"""
        print("\n⚙️  Current Configuration:")
        print(f"  Config file: {user_config.config_file()}")
        for key in sorted(self.config):
            print(f"  {key}: {self.config[key]}")
        print()

    def set_config(self, item: str):
        if "=" not in item:
            raise ConfigError(f"expected key=value, got '{item}'")
        key, raw = item.split("=", 1)
        self.config = user_config.set_value(key.strip(), raw.strip())
        print(f"✓ {key.strip()} set to {self.config[key.strip()]}")

    def synth(self, args):
        params = _parse_pairs(args.param)
        if args.kind == "ptcld" and "k" not in params:
            params["k"] = int(self.config["knn_k"])
        graph_set = synth(args.kind, params, seed=args.seed)
        if args.with_splits and graph_set.kind != "edge_task":
            graph_set = make_splits(graph_set, self.config["split"], seed=args.seed)
        save_container(graph_set, args.out)
        print(f"✓ Wrote {graph_set.kind} container with {len(graph_set.graphs)} graph(s) to {args.out}")

    def convert(self, args):
        graph_set = convert_edgelist(args.edges, args.features, args.labels, kind=args.kind,
                                     undirected=not args.directed, num_classes=args.num_classes)
        save_container(graph_set, args.out)
        print(f"✓ Converted {graph_set.graphs[0].num_nodes} nodes to {args.out}")

    def pretrain(self, args):
        dataset = load_container(args.data)
        c = user_config.effective(self.config, hidden_dim=args.hidden, layers=args.layers,
                                  pretrain_lr=args.lr, batch_size=args.batch_size,
                                  temperature=args.temperature, perturb_eta=args.eta)
        backbone = BackboneConfig(kind=args.backbone, layers=int(c["layers"]), in_dim=dataset.feature_dim,
                                  hidden_dim=int(c["hidden_dim"]), gat_heads=args.gat_heads)
        cfg = PretrainConfig(method=args.method, temperature=float(c["temperature"]), epochs=args.epochs,
                             batch_size=int(c["batch_size"]), lr=float(c["pretrain_lr"]),
                             eta=float(c["perturb_eta"]), seed=args.seed)

        print(f"🔧 Pre-training {args.backbone} ({backbone.layers} layers) with {args.method}...")
        ckpt = pretrain(dataset, backbone, cfg, progress=self.progress)
        save_ckpt(ckpt, args.out)
        trajectory = Path(args.out).with_suffix(".loss.csv")
        write_trajectory(trajectory, ckpt.provenance["loss_trajectory"])
        losses = ckpt.provenance["loss_trajectory"]
        if losses:
            print(f"📊 NT-Xent {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses) - 1} epochs")
        print(f"✓ Checkpoint saved to {args.out} (loss trajectory: {trajectory})")

    def _scenario(self, args, mode: Optional[str] = None) -> ScenarioConfig:
        seeds = _seeds(args.seeds)
        if args.seed is not None:
            if seeds is not None:
                raise ConfigError("give either --seed or --seeds, not both")
            seeds = [args.seed]
        c = user_config.effective(self.config, side_hidden=args.side_hidden, tune_lr=args.lr,
                                  patience=args.patience, seeds=seeds,
                                  edge_ratio=args.edge_ratio, hidden_dim=args.hidden, layers=args.layers)
        return ScenarioConfig(
            scenario=args.scenario,
            mode=mode or args.mode,
            downstream=args.data,
            checkpoint=args.ckpt[0] if isinstance(args.ckpt, list) and args.ckpt else args.ckpt or None,
            adapter=args.adapter,
            head=args.head,
            seeds=tuple(c["seeds"]),
            side_hidden=int(c["side_hidden"]),
            epochs=args.epochs,
            lr=float(c["tune_lr"]),
            patience=int(c["patience"]),
            weight_decay=float(c["weight_decay"]),
            batch_size=int(c["batch_size"]),
            edge_ratio=float(c["edge_ratio"]),
            split=tuple(c["split"]),
            backbone=args.backbone,
            layers=int(c["layers"]),
            hidden_dim=int(c["hidden_dim"]),
        )

    def tune(self, args):
        cfg = self._scenario(args)
        print(f"🔧 Tuning {cfg.mode} on {cfg.scenario} over seeds {list(cfg.seeds)}...")
        scratch = read_json(args.scratch_report) if args.scratch_report else None
        report = run_scenario(cfg, workers=self.workers(args.workers), progress=self.progress,
                              with_predictions=bool(args.predictions), scratch=scratch)
        data = report.to_dict()
        if self.deterministic:
            data = mask_timing(data)
        write_canonical(args.out, data, indent=2)
        if args.predictions:
            first = min(report.predictions)
            write_canonical(args.predictions, report.predictions[first], indent=2)
            print(f"✓ Test predictions of seed {first} saved to {args.predictions}")
        test = report.aggregate["test"]
        print(f"📊 test {report.metric}: {test['mean']:.4f} ± {test['std']:.4f}  "
              f"(tunable {report.tunable_params}, {report.tunable_fraction_vs_ft:.1%} of ft)")
        if report.speedup_vs_scratch is not None:
            print(f"📊 speed-up vs scratch: {report.speedup_vs_scratch:.1f}%")
        print(f"✓ Report saved to {args.out}")

    def evaluate(self, args):
        data = read_json(args.predictions)
        for key in ("kind", "scores", "labels"):
            if key not in data:
                raise ConfigError(f"{args.predictions}: missing '{key}'")
        labels = data["labels"]
        num_classes = data.get("num_classes") or (max(labels) + 1 if labels else 2)
        result = metric_report(data["kind"], data["scores"], labels, max(int(num_classes), 2))
        print(f"📊 {result['metric']}: {result['value']:.4f}")
        print("Confusion matrix (rows true, columns predicted):")
        for row in result["confusion_matrix"]:
            print("  " + " ".join(f"{v:5d}" for v in row))
        if args.out:
            write_canonical(args.out, result, indent=2)
            print(f"✓ Saved to {args.out}")

    def params(self, args):
        c = user_config.effective(self.config, hidden_dim=args.hidden, side_hidden=args.side_hidden)
        rows = audit_params(default_grid(), in_dim=args.in_dim, hidden_dim=int(c["hidden_dim"]),
                            side_hidden=int(c["side_hidden"]), layers=args.layers,
                            num_classes=args.num_classes)
        print(f"\n📊 Tunable parameters ({args.layers}-layer backbones):")
        for row in rows:
            print(f"  {row['mode']:7s} {row['backbone']:4s} {row['tunable']:9d}  "
                  f"{row['fraction']:7.2%} of ft ({row['ft']})")
        for finding in audit_findings(rows):
            print(f"⚠️  {finding}")
        if args.out:
            write_table(rows, args.out)
            print(f"✓ Table saved to {args.out}")

    def gradcheck(self, args):
        modes = args.modes.split(",") if args.modes else None
        backbones = args.backbones.split(",") if args.backbones else None
        kwargs = {k: v for k, v in (("modes", modes), ("backbones", backbones)) if v}
        rows = gradient_suite(seed=args.seed, tol=args.tol, **kwargs)
        failed = [r for r in rows if not r["passed"]]
        for row in rows:
            mark = "✓" if row["passed"] else "✗"
            print(f"{mark} {row['mode']}/{row['backbone']} {row['param']}: {row['max_error']:.2e}")
        if args.out:
            write_table(rows, args.out)
        if failed:
            raise NumericalError(f"{len(failed)} of {len(rows)} parameter checks above tol {args.tol}")
        print(f"✓ All {len(rows)} parameter checks passed")

    def compare(self, args):
        cfg = self._scenario(args, mode="gsst")
        workers = self.workers(args.workers)
        result = compare(cfg, workers=workers)
        if args.speedup:
            checkpoints = [load_ckpt(p) for p in args.ckpt]
            modes = args.speedup.split(",")
            rows = speedup_table(cfg, modes, checkpoints, workers=workers)
            result["speedup"] = rows
            table = Path(args.out).with_suffix(".speedup.csv")
            write_table(rows, table)
            for row in rows:
                pct = "undefined" if row["speedup_pct"] is None else f"{row['speedup_pct']:6.1f}%"
                print(f"📊 {row['backbone']:4s} {row['mode']:7s} speed-up {pct}")
            print(f"✓ Speed-up table saved to {table}")
        if self.deterministic:
            result = mask_timing(result)
        write_canonical(args.out, result, indent=2)
        for mode, agg in result["aggregate"].items():
            print(f"📊 {mode}: test {result['metric']} {agg['test']['mean']:.4f} ± {agg['test']['std']:.4f}")
        print(f"✓ Comparison saved to {args.out}")


def _add_tuning_args(p: argparse.ArgumentParser, ckpt_many: bool = False):
    p.add_argument("--data", required=True, help="Downstream container")
    if ckpt_many:
        p.add_argument("--ckpt", action="append", default=[], help="Checkpoint (repeat for several backbones)")
    else:
        p.add_argument("--ckpt", help="Pre-trained checkpoint")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--head", help="Head kind (must match the scenario)")
    p.add_argument("--adapter", choices=ADAPTER_KINDS, help="Input bridge")
    p.add_argument("--side-hidden", type=int, help="Side network width")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--edge-ratio", type=float)
    p.add_argument("--seeds", help="Comma-separated seeds")
    p.add_argument("--seed", type=int, help="Single seed, shorthand for --seeds N")
    p.add_argument("--workers", type=int)
    p.add_argument("--backbone", choices=BACKBONE_KINDS, default="gcn", help="Scratch backbone without --ckpt")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="GraphBridge - pre-train and side-tune GNNs across transfer scenarios",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--version", action="version", version=f"graphbridge {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--progress", action="store_true", help="Show epoch progress bars")
    parser.add_argument("--deterministic", action="store_true", help="Single process, timing masked")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Config command
    config_parser = subparsers.add_parser("config", help="Show or change configuration")
    config_parser.add_argument("--set", metavar="KEY=VALUE", help="Persist a configuration value")

    # Synth command
    synth_parser = subparsers.add_parser("synth", help="Generate a synthetic container")
    synth_parser.add_argument("kind", choices=SYNTH_KINDS)
    synth_parser.add_argument("--param", action="append", metavar="KEY=VALUE", help="Generator parameter")
    synth_parser.add_argument("--with-splits", action="store_true", help="Attach a seeded split")
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.add_argument("--out", required=True)

    # Convert command
    convert_parser = subparsers.add_parser("convert", help="CSV exports to a container")
    convert_parser.add_argument("--edges", required=True)
    convert_parser.add_argument("--features", required=True)
    convert_parser.add_argument("--labels", required=True)
    convert_parser.add_argument("--kind", default="node_task")
    convert_parser.add_argument("--directed", action="store_true")
    convert_parser.add_argument("--num-classes", type=int)
    convert_parser.add_argument("--out", required=True)

    # Pretrain command
    pretrain_parser = subparsers.add_parser("pretrain", help="Contrastive pre-training")
    pretrain_parser.add_argument("--data", required=True)
    pretrain_parser.add_argument("--method", choices=METHODS, default="graphcl")
    pretrain_parser.add_argument("--backbone", choices=BACKBONE_KINDS, default="gcn")
    pretrain_parser.add_argument("--layers", type=int)
    pretrain_parser.add_argument("--hidden", type=int)
    pretrain_parser.add_argument("--gat-heads", type=int, default=1)
    pretrain_parser.add_argument("--epochs", type=int, default=20)
    pretrain_parser.add_argument("--batch-size", type=int)
    pretrain_parser.add_argument("--lr", type=float)
    pretrain_parser.add_argument("--temperature", type=float)
    pretrain_parser.add_argument("--eta", type=float)
    pretrain_parser.add_argument("--seed", type=int, default=0)
    pretrain_parser.add_argument("--out", required=True)

    # Tune command
    tune_parser = subparsers.add_parser("tune", help="Side-tune over seeds")
    tune_parser.add_argument("--mode", choices=MODES, default="gsst")
    tune_parser.add_argument("--predictions", help="Also save test-split predictions of the first seed")
    tune_parser.add_argument("--scratch-report", help="Scratch report on the same seeds, for speed-up")
    _add_tuning_args(tune_parser)

    # Compare command
    compare_parser = subparsers.add_parser("compare", help="GSST vs GMST report, optional speed-up table")
    compare_parser.add_argument("--speedup", metavar="MODES", help="Comma-separated modes timed against scratch")
    _add_tuning_args(compare_parser, ckpt_many=True)

    # Eval command
    eval_parser = subparsers.add_parser("eval", help="Metrics from a predictions file")
    eval_parser.add_argument("--predictions", required=True)
    eval_parser.add_argument("--out")

    # Params command
    params_parser = subparsers.add_parser("params", help="Tunable parameter audit")
    params_parser.add_argument("--layers", type=int, default=5)
    params_parser.add_argument("--in-dim", type=int, default=8)
    params_parser.add_argument("--hidden", type=int)
    params_parser.add_argument("--side-hidden", type=int)
    params_parser.add_argument("--num-classes", type=int, default=2)
    params_parser.add_argument("--out", help="CSV table")

    # Gradcheck command
    grad_parser = subparsers.add_parser("gradcheck", help="Finite-difference gradient suite")
    grad_parser.add_argument("--modes", help="Comma-separated modes")
    grad_parser.add_argument("--backbones", help="Comma-separated backbones")
    grad_parser.add_argument("--tol", type=float, default=1e-4)
    grad_parser.add_argument("--seed", type=int, default=0)
    grad_parser.add_argument("--out", help="CSV table")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if not args.command:
        parser.print_help()
        return 0

    try:
        cli = GraphBridgeCLI(deterministic=args.deterministic, progress=args.progress)
        if args.command == "config":
            if args.set:
                cli.set_config(args.set)
            else:
                cli.show_config()
        elif args.command == "synth":
            cli.synth(args)
        elif args.command == "convert":
            cli.convert(args)
        elif args.command == "pretrain":
            cli.pretrain(args)
        elif args.command == "tune":
            cli.tune(args)
        elif args.command == "compare":
            cli.compare(args)
        elif args.command == "eval":
            cli.evaluate(args)
        elif args.command == "params":
            cli.params(args)
        elif args.command == "gradcheck":
            cli.gradcheck(args)
    except GraphBridgeError as e:
        print(f"✗ {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
