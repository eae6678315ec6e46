"""Command-line entry point.

Subcommands: generate, train, score, evaluate, ablate, gradcheck. Every
run directory gets a manifest (command, resolved config, dataset
descriptors, seed, tool version, output paths) written before any heavy
work, sufficient to replay the run.

Exit codes: 0 success; 1 domain or validation failure (config invariants,
training divergence, checkpoint integrity, undefined metrics, gradient
check breach); 2 I/O or argument failure (missing or malformed files,
bad flags).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import model as md
from . import training as tr
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, DomainBundle, SyntheticPairConfig,
                   gen_synthetic_pair, load_dataset, save_dataset,
                   save_split)
from .evaluation import (VARIANTS, UndefinedMetricError, auc_pr, auc_roc,
                         config_hash, resolve_variant, run_ablation)
from .graphs import CompiledAdjacency
from .seeding import derive_seed

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def _write_manifest(out_dir: Path, command: str, **payload) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "tool_version": __version__}
    manifest.update(payload)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON at line {exc.lineno}, "
                           f"column {exc.colno}: {exc.msg}") from exc


def _resolve_config(args) -> tr.TrainConfig:
    """Built-in defaults < config file < command-line flags."""
    raw = {}
    if getattr(args, "config", None):
        raw.update(_read_json(args.config))
    flag_map = {
        "learning_rate": "learning_rate", "alpha": "alpha_balance",
        "drop_p": "drop_p", "m_bases": "m_bases", "beta1": "beta1",
        "beta2": "beta2", "epochs_joint": "epochs_joint",
        "epochs_self": "epochs_self", "shots": "shots", "seed": "seed",
        "hidden_dim": "hidden_dim", "out_dim": "out_dim",
    }
    for flag, field in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[field] = value
    return tr.TrainConfig.from_dict(raw)


def _write_trace(path: Path, trace) -> None:
    lines = ["epoch\tloss_target\tloss_source\tloss_contrastive\tloss_total"]
    for epoch, l_t, l_s, l_c, total in trace:
        lines.append(f"{epoch}\t{l_t!r}\t{l_s!r}\t{l_c!r}\t{total!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_scores(path: Path, scores) -> None:
    lines = ["node_index\tscore"]
    lines += [f"{i}\t{s!r}" for i, s in enumerate(scores)]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    cfg = SyntheticPairConfig.from_dict(
        _read_json(args.config) if args.config else {})
    out = Path(args.out)
    _write_manifest(out, "generate", config=cfg.to_dict(), seed=cfg.seed,
                    outputs=["source", "target"])
    bundle, (desc_s, desc_t) = gen_synthetic_pair(cfg)
    save_dataset(bundle.source, out / "source", desc_s.name)
    save_dataset(bundle.target, out / "target", desc_t.name)
    print(f"wrote {desc_s.name}: {desc_s.num_nodes} nodes, "
          f"{desc_s.num_edges} edges, {desc_s.num_anomalies} anomalies")
    print(f"wrote {desc_t.name}: {desc_t.num_nodes} nodes, "
          f"{desc_t.num_edges} edges, {desc_t.num_anomalies} anomalies")
    return EXIT_OK


def _checkpoint_meta(config, plan, descs) -> dict:
    return {"config": config.to_dict(),
            "plan": dataclasses.asdict(plan),
            "datasets": [d.to_dict() for d in descs]}


def cmd_train(args) -> int:
    source, desc_s = load_dataset(args.source)
    target, desc_t = load_dataset(args.target)
    config = _resolve_config(args)
    plan = config.plan()
    out = Path(args.out)
    _write_manifest(
        out, "train", config=config.to_dict(), seed=config.seed,
        datasets=[desc_s.to_dict(), desc_t.to_dict()],
        outputs=["split.json", "trace_joint.tsv", "trace_self.tsv",
                 "checkpoint_joint", "checkpoint_final"])
    bundle = DomainBundle(source, target).with_protocol(config.shots,
                                                        config.seed)
    save_split(bundle.masks, out / "split.json")
    state, trace = tr.joint_train(bundle, config, plan)
    _write_trace(out / "trace_joint.tsv", trace)
    meta = _checkpoint_meta(config, plan, (desc_s, desc_t))
    save_checkpoint(state, out / "checkpoint_joint", meta)
    if config.epochs_self > 0:
        pseudo = tr.relabel_from_scores(state, bundle, config, plan)
        state = tr.self_train(state, bundle, pseudo, config, plan)
    save_checkpoint(state, out / "checkpoint_final", meta)
    print(f"trained {config.epochs_joint}+{config.epochs_self} epochs; "
          f"checkpoints in {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    run_dir = Path(args.run)
    state, meta = load_checkpoint(run_dir / "checkpoint_final")
    target, desc_t = load_dataset(args.target)
    plan = md.TrainPlan(**meta.get("plan", {}))
    expected = state.encoder.target_mlp.W.shape[0]
    if target.num_attrs != expected:
        raise CheckpointError(
            f"checkpoint expects {expected} target attributes, dataset "
            f"{desc_t.name} has {target.num_attrs}")
    adj = CompiledAdjacency.from_graph(target)
    scores = md.target_scores(state, target.features, adj, plan)
    _write_scores(Path(args.out), scores)
    print(f"scored {scores.size} nodes -> {args.out}")
    return EXIT_OK


def _read_scores(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty scores file")
    if lines[0] == "node_index\tscore":
        lines = lines[1:]
    values = np.zeros(len(lines))
    for i, line in enumerate(lines):
        try:
            _, score = line.split("\t")
            values[i] = float(score)
        except ValueError as exc:
            raise DatasetError(f"{path}:{i + 1}: malformed score row") from exc
    return values


def _read_labels(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    try:
        return np.array([int(line) for line in lines], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"{path}: malformed label file") from exc


def cmd_evaluate(args) -> int:
    scores = _read_scores(args.scores)
    labels = _read_labels(args.labels)
    if scores.size != labels.size:
        raise DatasetError(
            f"length mismatch: {scores.size} scores vs {labels.size} labels")
    if args.mask:
        raw = _read_json(args.mask)
        if isinstance(raw, dict):
            if args.mask_key not in raw:
                raise DatasetError(
                    f"{args.mask}: no {args.mask_key!r} key in split file")
            idx = np.asarray(raw[args.mask_key], dtype=np.int64)
        else:
            idx = np.asarray(raw, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= scores.size):
            raise DatasetError(f"{args.mask}: mask index out of range")
        scores, labels = scores[idx], labels[idx]
    roc, pr = auc_roc(scores, labels), auc_pr(scores, labels)
    payload = {
        "auc_roc": {"per_trial": [roc], "mean": roc, "std": 0.0},
        "auc_pr": {"per_trial": [pr], "mean": pr, "std": 0.0},
        "num_scored": int(scores.size),
        "num_anomalies": int((labels == 1).sum()),
    }
    Path(args.out).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"auc_roc={roc:.6f} auc_pr={pr:.6f} -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    source, desc_s = load_dataset(args.source)
    target, desc_t = load_dataset(args.target)
    config = _resolve_config(args)
    plan, resolved = resolve_variant(config, args.variant)
    out = Path(args.out)
    _write_manifest(
        out, "ablate", variant=args.variant, trials=args.trials,
        config=resolved.to_dict(), plan=dataclasses.asdict(plan),
        seed=config.seed, config_hash=config_hash(config, args.variant),
        datasets=[desc_s.to_dict(), desc_t.to_dict()],
        outputs=["metrics.json", "metrics.tsv"])
    report = run_ablation(source, target, config, args.variant, args.trials)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.tsv").write_text(report.to_table())
    print(report.to_table(), end="")
    return EXIT_OK


def _gradcheck_bundle(seed: int):
    cfg = SyntheticPairConfig(num_nodes=24, num_blocks=2, source_dim=6,
                              target_dim=8, anomaly_fraction=0.15,
                              clique_size=3, seed=seed)
    bundle, _ = gen_synthetic_pair(cfg)
    for attempt in range(10):
        try:
            return bundle.with_protocol(1, derive_seed(seed, f"gc/{attempt}"))
        except ValueError:
            continue
    raise ValueError("could not place a labeled anomaly in the train mask")


def cmd_gradcheck(args) -> int:
    bundle = _gradcheck_bundle(args.seed)
    config = tr.TrainConfig(seed=args.seed, shots=1,
                            hidden_dim=args.hidden_dim,
                            out_dim=args.out_dim)
    state = tr.init_model(bundle, config, config.plan())
    worst = tr.grad_check(state, bundle, config, step=args.step,
                          samples_per_tensor=args.samples_per_tensor,
                          mutate=args.mutate_gradient)
    print(f"max relative gradient error: {worst:.3e} "
          f"(threshold {args.threshold:.1e})")
    return EXIT_OK if worst <= args.threshold else EXIT_DOMAIN


# ---------------------------------------------------------------------------
# Parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--shots", type=int, help="labeled target anomalies K")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--alpha", type=float, help="contrastive balance weight")
    p.add_argument("--drop-p", type=float, dest="drop_p")
    p.add_argument("--m-bases", type=int, dest="m_bases")
    p.add_argument("--beta1", type=float, help="pseudo-anomaly percentile")
    p.add_argument("--beta2", type=float, help="pseudo-normal percentile")
    p.add_argument("--epochs-joint", type=int, dest="epochs_joint")
    p.add_argument("--epochs-self", type=int, dest="epochs_self")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--out-dim", type=int, dest="out_dim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossgad",
        description="Cross-domain few-shot graph anomaly detection")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cross-domain pair")
    p.add_argument("--config", help="synthetic-pair config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="joint training plus self-training")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write anomaly scores for all target nodes")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="ranking metrics for a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mask", help="JSON index list or split.json")
    p.add_argument("--mask-key", default="test", dest="mask_key")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run one pipeline variant over trials")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the joint objective")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-tensor", type=int, default=10,
                   dest="samples_per_tensor")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--hidden-dim", type=int, default=256, dest="hidden_dim")
    p.add_argument("--out-dim", type=int, default=64, dest="out_dim")
    p.add_argument("--mutate-gradient", action="store_true",
                   dest="mutate_gradient",
                   help="corrupt one gradient entry (the check must fail)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck" and args.step <= 0:
        parser.error("--step must be positive")
    if args.command == "ablate" and args.trials < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except (DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, CheckpointError, UndefinedMetricError,
            tr.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
