"""Command-line pipeline: generate, fit-pca, train, eval, predict, plan,
compare-planners.

Every run echoes its fully resolved configuration (flag > config file >
built-in default) on one `resolved-config:` line, and is deterministic given
that configuration. Exit codes: 0 success, 1 domain error (single-line
`error: <Kind>: <message>` on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .core_graph import load_scene_graph, scene_graph_to_dict
from .dataset import (
    GeneratorConfig,
    LabelConfig,
    generate_dataset,
    generator_config_from_dict,
    generator_config_to_dict,
    load_dataset,
    write_dataset,
)
from .embedding import encode_nodes, fit_pca
from .errors import CheckpointError, ConfigError, EvaluationError, UsageError, VsgError
from .model import (
    KIND_DELTAVSG,
    KIND_MLP_BASELINE,
    ModelConfig,
    _pca_to_dict,
    load_checkpoint,
    save_checkpoint,
)
from .planner import (
    COVERAGE,
    VSG_PLANNER,
    Episode,
    make_episodes,
    run_benchmark,
    run_coverage,
    run_vsg_planner,
    solve_tsp,
    write_benchmark_csv,
)
from .training import (
    LossConfig,
    TrainConfig,
    evaluate,
    threshold_sweep,
    train,
    write_eval_csv,
    write_sweep_csv,
)

logger = logging.getLogger(__name__)


def _echo_config(command: str, resolved: dict) -> None:
    print(f"resolved-config: {json.dumps({'command': command, **resolved}, sort_keys=True)}")


def _load_json(path, what: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def _require_dir(path, what: str) -> str:
    if not os.path.isdir(path):
        raise ConfigError(f"{what} directory not found: {path}")
    return path


def _parse_tau(text: str) -> float | str:
    try:
        return float(text)
    except ValueError:
        return text


def _split_samples(bundle, split: str, label_cfg: LabelConfig):
    samples = bundle.samples(split, label_cfg)
    if not samples:
        raise EvaluationError(
            f"split {split!r} has no samples; pick another --split or regenerate the dataset"
        )
    return samples


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg_dict = generator_config_to_dict(GeneratorConfig())
    if args.spec:
        cfg_dict.update(_load_json(args.spec, "generator spec"))
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = generator_config_from_dict(cfg_dict)
    _echo_config("generate", generator_config_to_dict(cfg) | {"out": args.out})
    data = generate_dataset(cfg)
    write_dataset(args.out, data.taxonomy, data.environments, data.splits)
    samples = sum(
        len(scans) * (len(scans) - 1) for scans in data.environments.values()
    )
    print(
        f"generated {len(data.environments)} environments x "
        f"{cfg.scans_per_environment} scans -> {samples} samples at {args.out}"
    )
    return 0


def cmd_fit_pca(args) -> int:
    bundle = load_dataset(_require_dir(args.data, "data"))
    _echo_config("fit-pca", {"data": args.data, "d_v": args.d_v, "split": args.split, "out": args.out})
    graphs = [
        g
        for env in bundle.environment_ids(args.split if args.split != "all" else None)
        for g in bundle.environments[env]
        if g.num_nodes
    ]
    if not graphs:
        raise EvaluationError(f"no scans in split {args.split!r} to fit on")
    vectors = np.vstack([encode_nodes(g, bundle.taxonomy) for g in graphs])
    d_v = min(args.d_v, vectors.shape[1])
    pca = fit_pca(vectors, d_v)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"format_version": 1, "pca": _pca_to_dict(pca)}, f)
        f.write("\n")
    retained = float(pca.explained_variance_ratio.sum())
    print(f"pca: {vectors.shape[0]} vectors, D={vectors.shape[1]} -> d_v={d_v}, "
          f"variance retained {retained:.4f}")
    return 0


_TRAIN_SECTIONS = ("model", "train", "loss", "label")


def cmd_train(args) -> int:
    bundle = load_dataset(_require_dir(args.data, "data"))
    file_cfg: dict = {}
    if args.config:
        file_cfg = _load_json(args.config, "config")
        unknown = set(file_cfg) - set(_TRAIN_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}; expected {_TRAIN_SECTIONS}")

    def merged(section: str, flag_values: dict) -> dict:
        out = dict(file_cfg.get(section, {}))
        out.update({k: v for k, v in flag_values.items() if v is not None})
        return out

    model_kwargs = merged(
        "model",
        {
            "kind": args.kind,
            "d_v": args.d_v,
            "hidden_dim": args.hidden_dim,
            "scalar_gate": args.scalar_gate,
            "tau": _parse_tau(args.tau) if args.tau is not None else None,
        },
    )
    train_kwargs = merged(
        "train",
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "dropout_rate": args.dropout_rate,
            "seed": args.seed,
            "patience": args.patience,
        },
    )
    loss_kwargs = merged("loss", {"gamma": args.gamma})
    label_kwargs = merged("label", {"epsilon": args.epsilon})
    try:
        if "tau" in model_kwargs and isinstance(model_kwargs["tau"], str):
            model_kwargs["tau"] = _parse_tau(model_kwargs["tau"])
        if "split_fractions" in train_kwargs:
            train_kwargs["split_fractions"] = tuple(train_kwargs["split_fractions"])
        if "class_weights" in loss_kwargs:
            loss_kwargs["class_weights"] = tuple(
                tuple(r) for r in loss_kwargs["class_weights"]
            )
        model_cfg = ModelConfig(**model_kwargs)
        train_cfg = TrainConfig(**train_kwargs)
        loss_cfg = LossConfig(**loss_kwargs) if loss_kwargs else None
        label_cfg = LabelConfig(**label_kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from e
    resolved = {
        "data": args.data,
        "out": args.out,
        "model": {
            "kind": model_cfg.kind,
            "d_v": model_cfg.d_v,
            "hidden_dim": model_cfg.hidden_dim,
            "scalar_gate": model_cfg.scalar_gate,
            "tau": model_cfg.tau,
            "include_semantic_edges": model_cfg.include_semantic_edges,
        },
        "train": {
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
            "learning_rate": train_cfg.learning_rate,
            "dropout_rate": train_cfg.dropout_rate,
            "seed": train_cfg.seed,
            "patience": train_cfg.patience,
        },
        "loss": {"gamma": loss_cfg.gamma, "class_weights": [list(r) for r in loss_cfg.class_weights]}
        if loss_cfg
        else {"gamma": LossConfig().gamma, "class_weights": "from-train-split"},
        "label": {
            "epsilon": label_cfg.epsilon,
            "require_state_attributes": label_cfg.require_state_attributes,
        },
    }
    _echo_config("train", resolved)
    model, report = train(bundle, model_cfg, train_cfg, loss_cfg, label_cfg)
    save_checkpoint(model, bundle.taxonomy, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(report.to_json())
    last_val = report.val_loss[-1] if report.val_loss else float("nan")
    print(
        f"trained {report.epochs_run} epochs (best {report.best_epoch}); "
        f"final val loss {last_val:.6f}; checkpoint at {args.out}"
        + (" [diverged; best checkpoint kept]" if report.diverged else "")
    )
    return 0


def cmd_eval(args) -> int:
    model, tax = load_checkpoint(args.ckpt)
    bundle = load_dataset(_require_dir(args.data, "data"))
    if bundle.taxonomy.name != tax.name:
        raise CheckpointError(
            f"checkpoint taxonomy {tax.name!r} does not match dataset "
            f"taxonomy {bundle.taxonomy.name!r}"
        )
    label_cfg = LabelConfig(epsilon=args.epsilon) if args.epsilon is not None else LabelConfig()
    _echo_config(
        "eval",
        {
            "ckpt": args.ckpt,
            "data": args.data,
            "split": args.split,
            "threshold": args.threshold,
            "epsilon": label_cfg.epsilon,
            "report": args.report,
        },
    )
    samples = _split_samples(bundle, args.split, label_cfg)
    report = evaluate(model, samples, bundle.taxonomy, threshold=args.threshold)
    write_eval_csv(report, args.report)
    if args.sweep:
        write_sweep_csv(threshold_sweep(model, samples, bundle.taxonomy), args.sweep)
    for name in ("position", "state", "instance", "pooled"):
        m = report.metrics[name]
        print(
            f"{name}: accuracy {m.accuracy:.3f} precision {m.precision:.3f} "
            f"recall {m.recall:.3f} f1 {m.f1:.3f} support {m.support}"
        )
    return 0


def cmd_predict(args) -> int:
    model, tax = load_checkpoint(args.ckpt)
    raw = _load_json(args.scene, "scene")
    scene_tax = raw.get("taxonomy")
    if scene_tax != tax.name:
        raise CheckpointError(
            f"scene taxonomy {scene_tax!r} does not match checkpoint taxonomy {tax.name!r}"
        )
    scene = load_scene_graph(args.scene, tax)
    _echo_config("predict", {"ckpt": args.ckpt, "scene": args.scene, "out": args.out})
    probabilities = model.predict_probabilities(scene, tax)
    out = scene_graph_to_dict(scene, tax)
    for node_dict in out["nodes"]:
        p = probabilities[node_dict["id"]]
        node_dict["variability"] = {
            "p_position": p[0],
            "p_state": p[1],
            "p_instance": p[2],
        }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=2)
        f.write("\n")
    print(f"wrote variability scene graph for {scene.num_nodes} objects to {args.out}")
    return 0


def cmd_plan(args) -> int:
    model, tax = load_checkpoint(args.ckpt)
    raw = _load_json(args.scene, "scene")
    if raw.get("taxonomy") != tax.name:
        raise CheckpointError(
            f"scene taxonomy {raw.get('taxonomy')!r} does not match checkpoint "
            f"taxonomy {tax.name!r}"
        )
    scene = load_scene_graph(args.scene, tax)
    start = None
    if args.start:
        parts = args.start.split(",")
        if len(parts) != 3:
            raise UsageError(f"--start must be x,y,z; got {args.start!r}")
        start = tuple(float(x) for x in parts)
    _echo_config(
        "plan",
        {"ckpt": args.ckpt, "scene": args.scene, "n": args.n, "start": start,
         "realized": args.realized},
    )

    probabilities = model.predict_probabilities(scene, tax)
    scores = {oid: max(p) for oid, p in probabilities.items()}
    ranked = sorted(scores, key=lambda oid: (-scores[oid], oid))
    top = ranked[: args.n + 3]
    start_vec = (
        np.asarray(start, dtype=np.float64) if start else scene.positions().mean(axis=0)
    )
    points = np.array([scene.node(oid).position for oid in top], dtype=np.float64)
    order = solve_tsp(points, start_vec)
    route = [top[k] for k in order]
    pos = start_vec
    total = 0.0
    for oid in route:
        nxt = np.asarray(scene.node(oid).position)
        total += float(np.linalg.norm(nxt - pos))
        pos = nxt
    print("phase1-route: " + " ".join(route))
    print(f"phase1-distance: {total:.6f}")

    if args.realized:
        realized = load_scene_graph(args.realized, tax)
        ep = Episode(previous_map=scene, realized_scene=realized, n=args.n, start_position=start)
        for name, result in (
            (COVERAGE, run_coverage(ep, tax)),
            (VSG_PLANNER, run_vsg_planner(ep, model, tax)),
        ):
            flags = []
            if result.fallback_used:
                flags.append("fallback")
            if result.infeasible:
                flags.append("infeasible")
            print(
                f"{name}: distance {result.distance_traveled:.6f} "
                f"changes {result.changes_found} visits {len(result.visit_order)}"
                + (f" [{', '.join(flags)}]" if flags else "")
            )
    return 0


def _parse_n_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(x) for x in text.split(",")]
    if not values or min(values) < 1:
        raise UsageError(f"bad --n-range {text!r}; expected like 1..5 or 1,3,5")
    return values


def cmd_compare_planners(args) -> int:
    model, tax = load_checkpoint(args.ckpt)
    bundle = load_dataset(_require_dir(args.data, "data"))
    if bundle.taxonomy.name != tax.name:
        raise CheckpointError(
            f"checkpoint taxonomy {tax.name!r} does not match dataset "
            f"taxonomy {bundle.taxonomy.name!r}"
        )
    n_values = _parse_n_range(args.n_range)
    _echo_config(
        "compare-planners",
        {"data": args.data, "ckpt": args.ckpt, "n_range": n_values, "seeds": args.seeds,
         "split": args.split, "out": args.out},
    )
    env_ids = bundle.environment_ids(args.split if args.split != "all" else None)
    environments = {e: bundle.environments[e] for e in env_ids}
    if not environments:
        raise EvaluationError(f"no environments in split {args.split!r}")
    episodes = make_episodes(environments, n_values)
    # --seeds bounds the number of episodes per n, drawn deterministically.
    per_n: dict[int, list[Episode]] = {}
    for ep in episodes:
        per_n.setdefault(ep.n, []).append(ep)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    chosen: list[Episode] = []
    for n in sorted(per_n):
        eps = per_n[n]
        if len(eps) > args.seeds:
            idx = rng.choice(len(eps), size=args.seeds, replace=False)
            eps = [eps[int(i)] for i in sorted(idx)]
        chosen.extend(eps)
    summary = run_benchmark(chosen, model, tax)
    write_benchmark_csv(summary, args.out)
    for row in summary.rows:
        print(
            f"n={row.n} {row.planner}: mean {row.mean_distance:.4f} "
            f"std {row.std_distance:.4f} win {row.win_fraction:.3f} "
            f"speedup {row.speedup:.3f}"
        )
    print(
        f"episodes: {summary.feasible_episodes} feasible, "
        f"{summary.infeasible_episodes} infeasible; csv at {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsg",
        description="Variable scene graphs: predict per-object change and plan around it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--spec", help="generator config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit-pca", help="fit the node-embedding PCA on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--d-v", type=int, default=16, help="number of components to keep")
    p.add_argument("--split", default="train", choices=["train", "val", "test", "all"])
    p.add_argument("--out", required=True, help="output PCA JSON file")
    p.set_defaults(func=cmd_fit_pca)

    p = sub.add_parser("train", help="train a variability model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON with model/train/loss/label sections")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="write the per-epoch training report JSON here")
    p.add_argument("--kind", choices=[KIND_DELTAVSG, KIND_MLP_BASELINE])
    p.add_argument("--d-v", type=int, dest="d_v")
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--scalar-gate", action="store_const", const=True, default=None)
    p.add_argument("--tau", help="meters, or a percentile preset p25/p50/p75/p100")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="metrics CSV output path")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sweep", help="also write a threshold sweep CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write the scene graph with per-object variability")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True, help="scene graph JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plan", help="plan a change-detection route on a scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True, help="previous-map scene graph JSON")
    p.add_argument("--n", type=int, required=True, help="changes to find")
    p.add_argument("--start", help="start position as x,y,z (default: map centroid)")
    p.add_argument("--realized", help="realized scene JSON; simulates both planners")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("compare-planners", help="benchmark Coverage vs the guided planner")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n-range", default="1..5", help="like 1..5 or 1,3,5")
    p.add_argument("--seeds", type=int, default=30, help="episodes per n value")
    p.add_argument("--seed", type=int, help="seed for episode subsampling")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--out", required=True, help="summary CSV output path")
    p.set_defaults(func=cmd_compare_planners)
    return parser


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except VsgError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
