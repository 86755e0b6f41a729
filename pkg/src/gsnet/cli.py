"""Command-line interface: synth, filter, spectrum, train, eval, gradcheck."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import data as data_mod
from .filtering import FilterConfig, approx_solve, direct_solve, gauss_seidel_solve, \
    relative_residual
from .io_utils import read_json, write_json_atomic
from .metrics import evaluate, format_per_action_table
from .model import ModelConfig
from .skeleton import SkeletonGraph, adjacency_matrix, human36m_topology, \
    load_topology, normalize_adjacency, normalized_laplacian, triangular_split
from .training import TrainConfig, center_poses, fit_model, gradient_check, \
    load_checkpoint, predict_mm, save_checkpoint
from .validation import check_array


def _resolve_topology(spec: str) -> SkeletonGraph:
    if spec == "h36m17":
        return human36m_topology(17)
    if spec == "h36m16":
        return human36m_topology(16)
    return load_topology(spec)


def _add_topology_flag(parser):
    parser.add_argument("--topology", default="h36m17",
                        help="h36m17, h36m16, or a path to a topology JSON file")


def _cmd_synth(args) -> int:
    graph = _resolve_topology(args.topology)
    dataset = data_mod.synthesize_poses(graph, args.n, args.seed)
    data_mod.save_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} synthetic poses to {args.out}")
    return 0


def _cmd_spectrum(args) -> int:
    graph = _resolve_topology(args.topology)
    norm_adj = normalize_adjacency(adjacency_matrix(graph))
    lap = normalized_laplacian(norm_adj)
    lap_eigs = np.linalg.eigvalsh(lap)
    system_eigs = np.linalg.eigvalsh(np.eye(graph.num_joints) + args.beta * lap)
    print(f"joints: {graph.num_joints}, edges: {len(graph.edges)}, beta: {args.beta}")
    print(f"laplacian eigenvalues:   [{lap_eigs.min():.12f}, {lap_eigs.max():.12f}]")
    print(f"smoothing operator eigs: [{system_eigs.min():.12f}, {system_eigs.max():.12f}]"
          f" (bound 1+2*beta = {1 + 2 * args.beta:.12f})")
    return 0


def _load_features(path) -> np.ndarray:
    raw = read_json(path)
    if isinstance(raw, dict):
        raw = raw.get("entries", raw.get("features"))
        if raw is None:
            raise ValueError(f"{path}: expected a nested list or an 'entries' key")
    return check_array(raw, "features", ndim=2)


def _cmd_filter(args) -> int:
    graph = _resolve_topology(args.topology)
    features = _load_features(args.features)
    if features.shape[0] != graph.num_joints:
        raise ValueError(
            f"feature matrix has {features.shape[0]} rows for {graph.num_joints} joints"
        )
    norm_adj = normalize_adjacency(adjacency_matrix(graph))
    config = FilterConfig(beta=args.beta, tol=args.tol, max_iters=args.max_iters)
    split = triangular_split(norm_adj, args.beta)
    if args.method == "direct":
        solution = direct_solve(features, normalized_laplacian(norm_adj), args.beta)
        residual = relative_residual(split.system_matrix(), solution, features)
        report = {"iterations": 0, "final_residual": residual,
                  "converged": residual <= args.tol}
    else:
        solver = gauss_seidel_solve if args.method == "exact" else approx_solve
        result = solver(features, split, config)
        solution = result.solution
        report = result.to_dict()
    report["method"] = args.method
    write_json_atomic(args.out, {"solution": solution.tolist(), "report": report})
    print(f"method={args.method} iterations={report['iterations']} "
          f"residual={report['final_residual']:.3e} converged={report['converged']}")
    return 0


def _model_config_from_args(args, num_joints: int) -> ModelConfig:
    return ModelConfig(
        num_joints=num_joints,
        channels=args.channels,
        num_blocks=args.blocks,
        dropout_rate=args.dropout,
        alpha=args.alpha,
        beta=args.beta,
        use_nonlocal=not args.no_nonlocal,
        use_refinement=not args.no_refine,
        use_skip=not args.no_skip,
        use_adj_modulation=not args.no_adj_modulation,
        use_weight_modulation=not args.no_weight_modulation,
        symmetrize_adjacency=not args.no_symmetrize,
        block_style=args.block_style,
        refine_hidden=args.refine_hidden,
    )


def _add_model_flags(parser):
    parser.add_argument("--channels", type=int, default=384)
    parser.add_argument("--blocks", type=int, default=4)
    parser.add_argument("--alpha", type=float, default=0.01)
    parser.add_argument("--beta", type=float, default=0.2)
    parser.add_argument("--dropout", type=float, default=0.2)
    parser.add_argument("--block-style", choices=["layernorm-gelu", "batchnorm-relu"],
                        default="layernorm-gelu")
    parser.add_argument("--refine-hidden", type=int, default=64)
    parser.add_argument("--no-nonlocal", action="store_true")
    parser.add_argument("--no-refine", action="store_true")
    parser.add_argument("--no-skip", action="store_true")
    parser.add_argument("--no-adj-modulation", action="store_true")
    parser.add_argument("--no-weight-modulation", action="store_true")
    parser.add_argument("--no-symmetrize", action="store_true")


def _cmd_train(args) -> int:
    dataset = data_mod.load_dataset(args.data)
    if len(dataset.records) == 0:
        raise ValueError(f"{args.data}: dataset contains no records")
    x2d, y3d, _ = data_mod.records_to_arrays(dataset.records)
    model_config = _model_config_from_args(args, dataset.topology.num_joints)
    train_config = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                               decay_factor=args.decay_factor, decay_every=args.decay_every,
                               seed=args.seed)

    def log(entry):
        print(f"epoch {entry['epoch']:4d}  lr {entry['lr']:.6f}  "
              f"loss {entry['train_loss']:.6f}  mpjpe {entry['train_mpjpe']:.3f}mm")

    result = fit_model(x2d, y3d, dataset.topology, model_config, train_config, log=log)
    save_checkpoint(args.out, result.model, result.prep,
                    optimizer=result.optimizer, epoch=train_config.epochs)
    print(f"saved checkpoint to {args.out}")
    return 0


def _load_poses(path, key="poses") -> np.ndarray:
    raw = read_json(path)
    if isinstance(raw, dict):
        raw = raw.get(key)
        if raw is None:
            raise ValueError(f"{path}: expected a nested list or a '{key}' key")
    return check_array(raw, "poses", ndim=3)


def _cmd_eval(args) -> int:
    actions = None
    if args.checkpoint:
        if not args.data:
            raise ValueError("--checkpoint requires --data")
        model, prep, _, _ = load_checkpoint(args.checkpoint)
        if prep is None:
            raise ValueError(f"{args.checkpoint}: checkpoint carries no normalization stats")
        dataset = data_mod.load_dataset(args.data)
        x2d, target, actions = data_mod.records_to_arrays(dataset.records)
        pred = predict_mm(model, prep, x2d)
        root = dataset.topology.root_index
    else:
        if not (args.pred and args.target):
            raise ValueError("provide either --checkpoint with --data, or --pred with --target")
        pred = _load_poses(args.pred)
        try:
            dataset = data_mod.load_dataset(args.target)
            _, target, actions = data_mod.records_to_arrays(dataset.records)
            root = dataset.topology.root_index
        except (data_mod.DatasetError, KeyError, TypeError):
            target = _load_poses(args.target)
            root = args.root_index
    pred = center_poses(pred, root)
    target = center_poses(target, root)
    report = evaluate(pred, target, actions=actions if args.per_action else None)
    print(f"mpjpe    {report.mpjpe_mm:10.4f} mm")
    print(f"pa-mpjpe {report.pa_mpjpe_mm:10.4f} mm")
    print(f"pck      {report.pck_percent:10.4f} %")
    print(f"auc      {report.auc_percent:10.4f} %")
    if args.per_action and report.per_action:
        print(format_per_action_table(report))
    if args.out:
        write_json_atomic(args.out, report.to_dict())
    return 0


def _cmd_gradcheck(args) -> int:
    from .model import GSNet

    if args.joints > 0:
        edges = tuple((i, i + 1) for i in range(args.joints - 1))
        graph = SkeletonGraph(num_joints=args.joints, edges=edges, root_index=0)
    else:
        graph = _resolve_topology(args.topology)
    config = _model_config_from_args(args, graph.num_joints)
    rng = np.random.default_rng(args.seed)
    model = GSNet(config, graph, rng)
    x = rng.normal(size=(args.batch, graph.num_joints, config.input_dim))
    y = rng.normal(size=(args.batch, graph.num_joints, config.output_dim))
    masks = model.make_dropout_masks(rng, args.batch)
    errors = gradient_check(model, x, y, masks, step=args.step)
    worst = 0.0
    for name in sorted(errors):
        print(f"{name:<28} max relative error {errors[name]:.3e}")
        worst = max(worst, errors[name])
    print(f"worst over all parameters: {worst:.3e} (tolerance {args.tol:.1e})")
    if worst > args.tol:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsnet",
        description="Iterative graph filtering and 2D-to-3D pose lifting tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic pose dataset")
    _add_topology_flag(p)
    p.add_argument("--n", type=int, required=True, help="number of poses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("spectrum", help="print eigenvalue ranges of the graph operators")
    _add_topology_flag(p)
    p.add_argument("--beta", type=float, default=0.2)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("filter", help="solve the Laplacian-regularized filtering problem")
    _add_topology_flag(p)
    p.add_argument("--features", required=True, help="JSON file with an NxF matrix")
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--method", choices=["exact", "approx", "direct"], default="exact")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("train", help="train the lifting network on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_model_flags(p)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--decay-factor", type=float, default=0.65)
    p.add_argument("--decay-every", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate predictions or a checkpoint")
    p.add_argument("--pred", help="JSON file of predicted poses")
    p.add_argument("--target", help="JSON file of ground-truth poses or a dataset file")
    p.add_argument("--checkpoint", help="evaluate this checkpoint on --data instead")
    p.add_argument("--data", help="dataset file (with --checkpoint)")
    p.add_argument("--root-index", type=int, default=0,
                   help="root joint for centering when the target is a bare pose list")
    p.add_argument("--per-action", action="store_true")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    _add_topology_flag(p)
    p.add_argument("--joints", type=int, default=5,
                   help="chain topology with this many joints; 0 uses --topology")
    _add_model_flags(p)
    p.set_defaults(channels=8, blocks=2, dropout=0.2)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
