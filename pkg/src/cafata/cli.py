"""Command line interface.

Subcommands: ingest, train, evaluate, predict, explain, export-taf, cluster,
gradcheck. All randomness flows from ``--seed``; running the same command on
the same files twice produces byte-identical artifacts. Exit codes: 0 on
success, 1 on runtime failure (message on stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import analysis, argumentation, data, evaluation, explanation, training
from .exceptions import CafataError
from .model import Variant, predict
from .synthetic import random_gradcheck_instance


def _add_context_flag(parser, repeatable_help: str):
    parser.add_argument(
        "--context",
        action="append",
        default=[],
        metavar="FACTOR=COND[,FACTOR=COND...]",
        help=repeatable_help,
    )


def _parse_situation(spec: str, schema: dict[str, set[str]]) -> dict[str, str]:
    situation: dict[str, str] = {}
    if not spec.strip():
        return situation
    for pair in spec.split(","):
        if "=" not in pair:
            raise CafataError(f"bad context assignment {pair!r}, expected FACTOR=CONDITION")
        factor, cond = (part.strip() for part in pair.split("=", 1))
        if factor not in schema:
            known = ", ".join(sorted(schema)) or "(none)"
            raise CafataError(f"unknown contextual factor {factor!r}; schema factors: {known}")
        if factor in situation:
            raise CafataError(f"factor {factor!r} assigned twice in one situation")
        situation[factor] = cond
    return situation


def _situations(args, schema) -> list[dict[str, str]]:
    if not args.context:
        return [{}]
    return [_parse_situation(spec, schema) for spec in args.context]


def _load_names(path) -> dict[str, str]:
    names = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "name"]:
            raise CafataError(f"{path}: names file must have header 'id,name'")
        for row in reader:
            if len(row) >= 2:
                names[row[0].strip()] = row[1].strip()
    return names


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CafataError(f"{what} not found: {p}")
    return p


def _write_json(path, text: str):
    Path(path).write_text(text, encoding="utf-8")


def cmd_ingest(args) -> int:
    interactions, _ = data.load_interactions(_require_file(args.interactions, "interactions file"))
    catalog = data.load_item_features(_require_file(args.features, "features file"))
    if args.log_transform:
        interactions = data.log_transform_ratings(interactions)
    if args.k_core:
        interactions = data.k_core_filter(interactions, args.k_core, users_only=args.users_only_core)
    if not interactions:
        raise CafataError("no interactions left after filtering")
    schema = data.infer_schema(interactions)
    if args.min_rating is not None and args.max_rating is not None:
        scale = data.RatingScale(args.min_rating, args.max_rating)
    else:
        scale = data.infer_scale(interactions)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.write_interactions_csv(out / "interactions.csv", interactions, sorted(schema))
    data.write_features_csv(out / "features.csv", catalog)
    meta = {
        "n_interactions": len(interactions),
        "n_users": len({i.user for i in interactions}),
        "n_items": len({i.item for i in interactions}),
        "factor_schema": {f: sorted(c) for f, c in sorted(schema.items())},
        "scale": {"min": scale.min, "max": scale.max},
        "k_core": args.k_core,
        "users_only_core": args.users_only_core,
        "log_transform": args.log_transform,
    }
    _write_json(out / "meta.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out / 'interactions.csv'} ({len(interactions)} rows)")
    return 0


def _build_dataset(args) -> data.Dataset:
    interactions, _ = data.load_interactions(_require_file(args.interactions, "interactions file"))
    catalog = data.load_item_features(_require_file(args.features, "features file"))
    scale = None
    if args.min_rating is not None and args.max_rating is not None:
        scale = data.RatingScale(args.min_rating, args.max_rating)
    variant = Variant.parse(args.variant)
    return data.prepare_dataset(
        interactions,
        catalog,
        seed=args.seed,
        scale=scale,
        require_features=variant is not Variant.MF,
    )


def cmd_train(args) -> int:
    dataset = _build_dataset(args)
    config = training.TrainingConfig(
        variant=Variant.parse(args.variant),
        dimension=args.dim,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        l2_lambda=args.l2,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        leaky_slope=args.leaky_slope,
    )
    result = training.train(dataset, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = data.ModelBundle(
        space=result.space,
        catalog=dataset.catalog,
        factor_schema=dataset.factor_schema,
        scale=dataset.scale,
        variant=config.variant,
        meta={"seed": args.seed, "best_epoch": result.best_epoch,
              "best_val_rmse": result.best_val_rmse},
    )
    data.save_model(out / "model.json", bundle)
    training.write_history_csv(result.history, out / "history.csv")
    print(
        f"trained {config.variant.value}: best epoch {result.best_epoch}, "
        f"val rmse {result.best_val_rmse:.6f} (normalized scale)"
    )
    print(f"wrote {out / 'model.json'} and {out / 'history.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = data.load_model(_require_file(args.model, "model file"))
    interactions, _ = data.load_interactions(_require_file(args.interactions, "interactions file"))
    seed = args.seed if args.seed is not None else bundle.meta.get("seed", 0)
    train_part, val_part, test_part = data.split(interactions, seed)
    dataset = data.Dataset(
        train=train_part,
        val=val_part,
        test=test_part,
        catalog=bundle.catalog,
        scale=bundle.scale,
        factor_schema=bundle.factor_schema,
    )
    threshold = args.threshold
    if threshold is None:
        threshold = (bundle.scale.min + bundle.scale.max) / 2.0
    report = evaluation.evaluate_model(bundle.space, dataset, bundle.variant, threshold)
    print(report.format_table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "metrics.json", report.to_json())
        print(f"wrote {out / 'metrics.json'}")
    return 0


def _breakdowns(args, bundle):
    situations = _situations(args, bundle.factor_schema)
    return [
        predict(
            args.user, args.item, situation, bundle.variant,
            bundle.space, bundle.catalog, strict=args.strict,
        )
        for situation in situations
    ]


def cmd_predict(args) -> int:
    bundle = data.load_model(_require_file(args.model, "model file"))
    breakdowns = _breakdowns(args, bundle)
    if args.json:
        docs = [b.as_dict() for b in breakdowns]
        for doc, b in zip(docs, breakdowns):
            doc["rating_original_scale"] = bundle.scale.to_original(b.rating_hat)
        print(json.dumps(docs, sort_keys=True, indent=2))
        return 0
    for b in breakdowns:
        ctx = ", ".join(f"{k}={v}" for k, v in sorted(b.situation.items())) or "(no context)"
        original = bundle.scale.to_original(b.rating_hat)
        print(f"{ctx:<40} rating_hat={b.rating_hat:+.6f} original={original:.4f}")
    return 0


def cmd_explain(args) -> int:
    bundle = data.load_model(_require_file(args.model, "model file"))
    names = _load_names(args.names) if args.names else None
    breakdowns = _breakdowns(args, bundle)
    for b in breakdowns:
        exp = explanation.generate_explanation(
            b, display_names=names, tau_pos=args.tau_pos, tau_neg=args.tau_neg
        )
        if args.json:
            print(exp.to_json(), end="")
        else:
            print(exp.rendered)
    return 0


def cmd_export_taf(args) -> int:
    bundle = data.load_model(_require_file(args.model, "model file"))
    breakdowns = _breakdowns(args, bundle)
    taf = argumentation.build_taf(breakdowns[0], eps_neutral=args.eps_neutral)
    dot = argumentation.export_dot(taf)
    if args.out:
        Path(args.out).write_text(dot, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(dot, end="")
    if args.json_out:
        _write_json(args.json_out, argumentation.taf_to_json(taf))
        print(f"wrote {args.json_out}")
    return 0


def cmd_cluster(args) -> int:
    bundle = data.load_model(_require_file(args.model, "model file"))
    matrix = analysis.importance_matrix(bundle.space, bundle.factor_schema)
    result = analysis.kmeans_cluster(matrix.values, args.k, seed=args.seed, max_iters=args.max_iters)
    profiles = analysis.cluster_profiles(matrix, result)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_assignments_csv(out / "assignments.csv", matrix, result)
    analysis.write_centroids_csv(out / "centroids.csv", matrix, profiles)
    if len(matrix.factors) >= 2 and matrix.values.shape[0] >= 2:
        coords = analysis.project_2d(matrix.values)
        analysis.write_coords_csv(out / "coords.csv", matrix, coords)
    else:
        print("note: fewer than 2 factors or users, skipping 2D projection")
    if args.elbow_max:
        with open(out / "inertia.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "inertia"])
            for k, inertia in analysis.inertia_curve(matrix.values, args.elbow_max, seed=args.seed):
                writer.writerow([k, repr(inertia)])
    print(f"k={args.k} inertia={result.inertia:.6f} iterations={result.n_iter}")
    print(f"wrote cluster artifacts to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    dims = [int(part) for part in args.dims.split(",")]
    if args.variants == "all":
        variants = list(Variant)
    else:
        variants = [Variant.parse(part) for part in args.variants.split(",")]
    worst = 0.0
    checks = 0
    rng_seed = args.seed
    for trial in range(args.trials):
        for dim in dims:
            for variant in variants:
                space, catalog, sample = random_gradcheck_instance(
                    rng_seed, dim, variant
                )
                err = training.gradient_check(
                    space, catalog, sample, h=args.h, variant=variant,
                    l2_lambda=args.l2,
                )
                worst = max(worst, err)
                checks += 1
                rng_seed += 1
    print(f"gradcheck: {checks} instances, max relative error {worst:.3e} (tol {args.tol:.0e})")
    if worst > args.tol:
        print("gradcheck FAILED", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cafata",
        description="Context-aware feature attribution with argumentative explanations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="clean raw CSVs (log transform, k-core)")
    p.add_argument("--interactions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-core", type=int, default=None)
    p.add_argument("--users-only-core", action="store_true")
    p.add_argument("--log-transform", action="store_true")
    p.add_argument("--min-rating", type=float, default=None)
    p.add_argument("--max-rating", type=float, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on interaction/feature CSVs")
    p.add_argument("--interactions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="ca-fata")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--leaky-slope", type=float, default=0.2)
    p.add_argument("--min-rating", type=float, default=None)
    p.add_argument("--max-rating", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--interactions", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="split seed (defaults to the seed stored in the model)")
    p.add_argument("--threshold", type=float, default=None,
                   help="binarization threshold (defaults to the scale midpoint)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict ratings, optionally under several situations")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    _add_context_flag(p, "situation; repeat the flag to compare situations side by side")
    p.add_argument("--strict", action="store_true", help="error on unknown ids")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="render the template explanation")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    _add_context_flag(p, "situation for the explanation")
    p.add_argument("--tau-pos", type=float, default=0.2)
    p.add_argument("--tau-neg", type=float, default=0.0)
    p.add_argument("--names", default=None, help="CSV id,name with display names")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("export-taf", help="export the argumentation framework as DOT")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    _add_context_flag(p, "situation for the framework")
    p.add_argument("--eps-neutral", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.add_argument("--json-out", default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_export_taf)

    p = sub.add_parser("cluster", help="cluster users by contextual-factor importance")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--elbow-max", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("gradcheck", help="validate analytic gradients against finite differences")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--dims", default="1,4,8")
    p.add_argument("--variants", default="all")
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CafataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
