"""Command-line entry point.

Subcommands: ``gen-data`` (synthetic dataset), ``train`` (one variant on one
leave-one-domain-out split), ``eval`` (checkpoints to metric tables),
``ablate`` (all four variants side by side). Configuration precedence, lowest
to highest: built-in defaults, ``--config`` file, named flags, ``--set``
overrides. Exit codes: 0 success, 2 config error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    build_experiment_config,
    describe_keys,
    parse_config_file,
    parse_overrides,
)
from .data import (
    SplitPlan,
    dataset_manifest,
    default_domain_specs,
    generate_multidomain_dataset,
    list_domain_ids,
    load_multisite_dataset,
    save_dataset,
)
from .errors import ConfigError, DataError, DivergenceError
from .metrics import EvalRow, build_report, evaluate_split, format_report, write_csv
from .nets import load_checkpoint
from .trainer import VARIANTS, train


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable; see --list-keys)",
    )
    parser.add_argument("--data-root", help="dataset directory (data.root)")
    parser.add_argument("--out", help="output directory (out.dir)")
    parser.add_argument("--seed", type=int, help="master seed (train.seed)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgseg",
        description="Domain-generalizable cup/disc segmentation experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--list-keys", action="store_true", help="print all config keys and exit"
    )
    sub = parser.add_subparsers(dest="command")

    p_gen = sub.add_parser("gen-data", help="generate a synthetic multi-domain dataset")
    _add_common(p_gen)
    p_gen.add_argument("--k", type=int, help="number of domains (data.k)")
    p_gen.add_argument("--n", type=int, help="samples per domain (data.n_per_domain)")
    p_gen.add_argument("--force", action="store_true", help="overwrite a non-empty data root")

    p_train = sub.add_parser("train", help="train one variant on one split")
    _add_common(p_train)
    p_train.add_argument("--target", type=int, help="held-out domain id (target_domain)")
    p_train.add_argument("--variant", choices=VARIANTS, help="ablation variant (train.variant)")
    p_train.add_argument("--resume", action="store_true", help="continue from the run checkpoint")

    p_eval = sub.add_parser("eval", help="evaluate checkpoints on their held-out domains")
    _add_common(p_eval)
    p_eval.add_argument(
        "--checkpoint", action="append", required=True, metavar="PATH",
        help="checkpoint file (repeatable, one per split)",
    )

    p_abl = sub.add_parser("ablate", help="train and evaluate all four variants")
    _add_common(p_abl)
    p_abl.add_argument("--seeds", default="0", help="comma-separated seeds (default 0)")
    p_abl.add_argument(
        "--targets", default="all",
        help="comma-separated target domain ids, or 'all' (default)",
    )
    return parser


def _merge_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict[str, str]]:
    values: dict[str, str] = {}
    if args.config:
        values.update(parse_config_file(args.config))
    flag_map = {
        "data_root": "data.root",
        "out": "out.dir",
        "seed": "train.seed",
        "target": "target_domain",
        "variant": "train.variant",
        "k": "data.k",
        "n": "data.n_per_domain",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = str(value)
    values.update(parse_overrides(args.set))
    return build_experiment_config(values), values


def _run_dir(config: ExperimentConfig, variant: str, seed: int, target: int) -> Path:
    return Path(config.out_dir) / f"target{target}_{variant}_seed{seed}"


def _write_manifest(run_dir: Path, config, train_config, target: int, sources: list[int]) -> None:
    data_manifest = None
    manifest_path = Path(config.data_root) / "manifest.json"
    if manifest_path.is_file():
        data_manifest = json.loads(manifest_path.read_text())
    manifest = {
        "tool_version": __version__,
        "variant": train_config.variant,
        "seed": train_config.seed,
        "target_domain": target,
        "source_domains": sources,
        "net_config": config.net.to_dict(),
        "train_config": train_config.to_dict(include_paths=False),
        "data_mode": config.data_mode,
        "dataset_manifest": data_manifest,
    }
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def cmd_gen_data(args: argparse.Namespace) -> int:
    config, _ = _merge_config(args)
    root = Path(config.data_root)
    if root.exists() and any(root.iterdir()) and not args.force:
        raise ConfigError(f"data root {root} is not empty; pass --force to overwrite")
    if config.k == 1:
        print("warning: k=1 generates a single domain; training needs at least 2",
              file=sys.stderr)
    specs = default_domain_specs(config.k)
    seed = config.train.seed
    dataset = generate_multidomain_dataset(specs, config.n_per_domain, config.size, seed)
    save_dataset(
        root, dataset,
        manifest=dataset_manifest(seed, config.size, config.n_per_domain, specs),
    )
    print(f"wrote {config.k} domains x {config.n_per_domain} samples to {root}")
    return 0


def _load_split_for_training(config: ExperimentConfig, target: int) -> SplitPlan:
    root = Path(config.data_root)
    ids = list_domain_ids(root)
    if target not in ids:
        raise DataError(f"target domain {target} not present in {root} (found {ids})")
    sources = [d for d in ids if d != target]
    access_log: list[Path] = []
    dataset = load_multisite_dataset(root, only_domains=sources, access_log=access_log)
    leaked = [p for p in access_log if f"domain{target}" in (q.name for q in p.parents)]
    if leaked:
        raise DataError(f"training would read held-out domain files: {leaked[:3]}")
    return SplitPlan(
        target_domain=target,
        source_domains=sources,
        per_domain_train=dataset,
        target_test=[],
    )


def cmd_train(args: argparse.Namespace) -> int:
    config, _ = _merge_config(args)
    if config.target_domain is None:
        raise ConfigError("train needs a target domain (--target or target_domain=)")
    target = config.target_domain
    split = _load_split_for_training(config, target)
    train_config = dataclasses.replace(
        config.train,
        checkpoint_dir=_run_dir(config, config.train.variant, config.train.seed, target),
    )
    run_dir = Path(train_config.checkpoint_dir)
    _write_manifest(run_dir, config, train_config, target, split.source_domains)
    result = train(split, config.net, train_config, resume=args.resume)
    last = result.history[-1] if result.history else {}
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"history:    {result.history_path} ({len(result.history)} steps)")
    if last:
        print(f"final loss: total={last['total']:.4f} (seg={last['seg']:.4f})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config, values = _merge_config(args)
    explicit_net = any(key.startswith("net.") for key in values)
    rows: list[EvalRow] = []
    for ckpt_arg in args.checkpoint:
        model, extra = load_checkpoint(
            ckpt_arg, expected_config=config.net if explicit_net else None
        )
        target = extra.get("target_domain")
        if target is None:
            raise ConfigError(f"checkpoint {ckpt_arg} records no target domain")
        dataset = load_multisite_dataset(config.data_root, only_domains={target})
        split = SplitPlan(
            target_domain=target,
            source_domains=extra.get("source_domains", []),
            per_domain_train={},
            target_test=dataset[target],
        )
        rows.extend(evaluate_split(model, split).rows)
    report = build_report(rows)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "eval.csv")
    text = format_report(report)
    (out / "eval.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config, _ = _merge_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ids = list_domain_ids(config.data_root)
    if args.targets == "all":
        targets = ids
    else:
        targets = [int(t) for t in args.targets.split(",") if t.strip()]
        missing = set(targets) - set(ids)
        if missing:
            raise DataError(f"target domain(s) {sorted(missing)} not in dataset (found {ids})")

    records = []  # (seed, target, variant) -> EvalRows
    for seed in seeds:
        for target in targets:
            split = _load_split_for_training(config, target)
            test_data = load_multisite_dataset(config.data_root, only_domains={target})
            eval_split = SplitPlan(
                target_domain=target,
                source_domains=split.source_domains,
                per_domain_train={},
                target_test=test_data[target],
            )
            for variant in VARIANTS:
                train_config = dataclasses.replace(
                    config.train,
                    variant=variant,
                    seed=seed,
                    checkpoint_dir=_run_dir(config, variant, seed, target),
                )
                run_dir = Path(train_config.checkpoint_dir)
                _write_manifest(run_dir, config, train_config, target, split.source_domains)
                result = train(split, config.net, train_config)
                eval_result = evaluate_split(result.model, eval_split)
                for row in eval_result.rows:
                    records.append({"seed": seed, "variant": variant, "row": row})
                print(f"done: seed={seed} target={target} variant={variant}")

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_ablation_outputs(records, seeds, out)
    print(f"ablation outputs in {out}")
    return 0


def _write_ablation_outputs(records: list[dict], seeds: list[int], out: Path) -> None:
    import csv as _csv

    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["seed", "target_domain", "structure", "variant",
             "dice_mean", "dice_std", "asd_mean", "asd_std", "n_images"]
        )
        for rec in records:
            row = rec["row"]
            writer.writerow(
                [rec["seed"], row.target_domain, row.structure, rec["variant"],
                 row.dice_mean, row.dice_std, row.asd_mean, row.asd_std, row.n_images]
            )

    lines = []
    cells = sorted({(r["row"].target_domain, r["row"].structure) for r in records})
    header = f"{'seed':>4} {'target':>6} {'structure':>9} " + " ".join(
        f"{v:>8}" for v in VARIANTS
    )
    lines.append(header + "   (Dice %)")
    for seed in seeds:
        for target, structure in cells:
            by_variant = {
                rec["variant"]: rec["row"].dice_mean
                for rec in records
                if rec["seed"] == seed
                and rec["row"].target_domain == target
                and rec["row"].structure == structure
            }
            lines.append(
                f"{seed:>4} {target:>6} {structure:>9} "
                + " ".join(f"{by_variant.get(v, float('nan')):8.2f}" for v in VARIANTS)
            )
    lines.append("")
    for seed in seeds:
        avgs = {}
        for variant in VARIANTS:
            vals = [
                rec["row"].dice_mean
                for rec in records
                if rec["seed"] == seed and rec["variant"] == variant
            ]
            avgs[variant] = float(np.mean(vals)) if vals else float("nan")
        ordered = all(
            avgs[a] <= avgs[b] for a, b in zip(VARIANTS, VARIANTS[1:])
        )
        chain = " <= ".join(f"{v}={avgs[v]:.2f}" for v in VARIANTS)
        lines.append(f"seed {seed}: avg Dice {chain} : ordered={ordered}")
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.list_keys:
        print(describe_keys())
        return 0
    if not args.command:
        parser.print_help()
        return 2
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
