"""Command-line entry point.

Subcommands cover the full workflow: data generation, generator pre-training,
synthetic-corpus generation, network pre-training, federated tuning, the
centralized baseline, evaluation, the pre-training ablation, and plotting.
Exit codes: 0 success, 1 config/validation error, 2 usage error, 3 divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import torch

from . import experiments as exp
from .config import ExperimentConfig, stage_seed
from .datasets import load_checkpoint, load_dataset, save_checkpoint
from .errors import ConfigError, DivergenceError, IntegrityError
from .federated import make_shards, run_centralized_baseline, run_federated_tuning
from .plots import render_series
from .swtcan import Swtcan, evaluate_nmse, partition_params, train_e2e
from .vae import ChannelVae, VaeTrainSettings, finetune_vae, generate, train_vae
from . import budget as budget_mod

_SPLIT_SIZES = {"train": "n_train", "val": "n_val", "test": "n_test", "scarce": "n_scarce"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--out", type=str, default=None, help="output directory override")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path config override, repeatable")


def _load(args) -> tuple[ExperimentConfig, exp.Workspace]:
    cfg = ExperimentConfig.load(args.config, args.override, args.seed, args.out)
    return cfg, exp.Workspace(cfg.out_dir)


def _load_swtcan(cfg: ExperimentConfig, path: Path) -> Swtcan:
    model = Swtcan(cfg.swtcan)
    load_checkpoint(model, path)
    return model


def _load_samples(cfg: ExperimentConfig, path: Path | None, role: str, split: str, n: int):
    if path is not None:
        samples, _ = load_dataset(path)
        return samples
    return exp.make_split(cfg, role, split, n)


def cmd_gen_data(args) -> int:
    cfg, ws = _load(args)
    if args.role not in cfg.scenarios:
        raise ConfigError(f"scenarios.{args.role}: no such role in config")
    n = args.n or getattr(cfg.data, _SPLIT_SIZES.get(args.split, "n_train"))
    path = args.path or ws.data(f"{args.role}-{args.split}")
    meta = exp.export_split(cfg, args.role, args.split, n, path)
    print(f"wrote {meta['n_samples']} samples to {path} (label {meta['scenario_label']})")
    return 0


def cmd_pretrain_vae(args) -> int:
    cfg, ws = _load(args)
    abundant = _load_samples(cfg, args.pretrain_data, "pretrain", "abundant", cfg.data.n_train)
    torch.manual_seed(stage_seed(cfg.seed, "vae-init"))
    vae = ChannelVae(cfg.vae)
    plan = cfg.vae_train
    _, hist = train_vae(vae, abundant, VaeTrainSettings(
        epochs=plan.epochs, batch_size=plan.batch_size, lr=plan.lr,
        seed=stage_seed(cfg.seed, "vae-pretrain")))
    if not args.no_finetune:
        scarce = _load_samples(cfg, args.finetune_data, "target", "scarce", cfg.data.n_scarce)
        _, ft_hist = finetune_vae(vae, scarce, VaeTrainSettings(
            epochs=plan.finetune_epochs, batch_size=plan.batch_size, lr=plan.lr,
            seed=stage_seed(cfg.seed, "vae-finetune")))
        hist = hist + [{**h, "epoch": h["epoch"] + plan.epochs, "stage": "finetune"}
                       for h in ft_hist]
    path = ws.checkpoint(args.tag)
    save_checkpoint(vae, path, config_hash=cfg.config_hash(), epoch=len(hist))
    exp.write_jsonl(ws.metrics(f"{args.tag}-train"), hist)
    print(f"wrote generator checkpoint to {path}")
    return 0


def cmd_gen_synthetic(args) -> int:
    cfg, ws = _load(args)
    vae = ChannelVae(cfg.vae)
    load_checkpoint(vae, args.vae or ws.checkpoint("vae"))
    n = args.n or cfg.data.n_synthetic
    rng = torch.Generator().manual_seed(stage_seed(cfg.seed, "gen-synthetic"))
    samples = generate(vae, n, rng, label=args.label)
    path = args.path or ws.data("synthetic")
    from .datasets import save_dataset
    save_dataset(samples, path, seed=cfg.seed, config_hash=cfg.config_hash(),
                 split="synthetic")
    print(f"wrote {n} generated samples to {path}")
    return 0


def cmd_pretrain_swtcan(args) -> int:
    cfg, ws = _load(args)
    train = _load_samples(cfg, args.train_data, "target", "train", cfg.data.n_train)
    val = train if args.val_data is None else load_dataset(args.val_data)[0]
    model = exp.build_model(cfg, stage_seed(cfg.seed, "swtcan-init"))
    _, hist = train_e2e(model, train, val,
                        dataclasses.replace(cfg.train, seed=stage_seed(cfg.seed, "pretrain")))
    best = min((h["val_nmse_db"] for h in hist), default=float("nan"))
    path = ws.checkpoint(args.tag)
    save_checkpoint(model, path, config_hash=cfg.config_hash(),
                    epoch=len(hist), val_nmse_db=best, partition_spec="all")
    exp.write_jsonl(ws.metrics(f"swtcan-train-{args.tag}"), hist)
    print(f"wrote checkpoint to {path} (best val NMSE {best:.2f} dB)")
    return 0


def cmd_fedtune(args) -> int:
    cfg, ws = _load(args)
    model = _load_swtcan(cfg, args.checkpoint or ws.checkpoint("pretrained"))
    partition = partition_params(model, cfg.partition_spec)
    cost = budget_mod.CostModel(
        d=partition.d, total_params=partition.total,
        n_subcarriers=cfg.n_subcarriers, n_bs=cfg.geometry.n_bs,
        zeta_ue_flops=cfg.cost.zeta_ue_flops, zeta_bs_flops=cfg.cost.zeta_bs_flops,
        kappa_ue_flops_s=cfg.cost.kappa_ue_flops_s, gamma=cfg.cost.gamma,
        samples_per_ue=cfg.fed.samples_per_ue, local_epochs=cfg.fed.local_epochs)
    exp.write_report(ws.report("budget"),
                     {**budget_mod.make_report(cost, cfg.fed.rounds),
                      "config_hash": cfg.config_hash()})
    pool = exp.make_split(cfg, "target", "fl-pool", cfg.fed.n_ues * cfg.fed.samples_per_ue)
    eval_set = exp.make_split(cfg, "target", "test", cfg.data.n_test)
    shards = make_shards(pool, cfg.fed.n_ues, cfg.fed.samples_per_ue)
    history = run_federated_tuning(model, partition, shards, cfg.fed, eval_set, cost,
                                   eval_noise_seed=stage_seed(cfg.seed, "tuning-eval"))
    exp.write_jsonl(ws.metrics("fl-history"), history)
    save_checkpoint(model, ws.checkpoint("fedtuned"), config_hash=cfg.config_hash(),
                    epoch=cfg.fed.rounds, partition_spec=cfg.partition_spec,
                    val_nmse_db=history[-1]["nmse_db"] if history else float("nan"))
    if history:
        print(f"federated tuning finished: NMSE {history[-1]['nmse_db']:.2f} dB "
              f"after {cfg.fed.rounds} rounds ({history[-1]['uplink_reals_cum']} uplink reals)")
    return 0


def cmd_central_baseline(args) -> int:
    cfg, ws = _load(args)
    model = _load_swtcan(cfg, args.checkpoint or ws.checkpoint("pretrained"))
    partition = partition_params(model, cfg.partition_spec)
    cost = budget_mod.CostModel(
        d=partition.d, total_params=partition.total,
        n_subcarriers=cfg.n_subcarriers, n_bs=cfg.geometry.n_bs,
        zeta_ue_flops=cfg.cost.zeta_ue_flops, zeta_bs_flops=cfg.cost.zeta_bs_flops,
        kappa_ue_flops_s=cfg.cost.kappa_ue_flops_s, gamma=cfg.cost.gamma,
        samples_per_ue=cfg.fed.samples_per_ue, local_epochs=cfg.fed.local_epochs)
    t0 = args.t0 or cfg.fed.rounds
    rep = budget_mod.make_report(cost, t0)
    pool = exp.make_split(cfg, "target", "fl-pool", cfg.fed.n_ues * cfg.fed.samples_per_ue)
    n_cl = min(rep["n_cl_samples"], len(pool))
    eval_set = exp.make_split(cfg, "target", "test", cfg.data.n_test)
    history = run_centralized_baseline(
        model, pool[:n_cl], rep["k_cl_epochs"], eval_set, cost,
        snr_db=cfg.fed.downlink_snr_db, lr=cfg.train.lr, batch_size=cfg.train.batch_size,
        seed=stage_seed(cfg.seed, f"cl-{t0}"),
        eval_noise_seed=stage_seed(cfg.seed, "tuning-eval"))
    exp.write_jsonl(ws.metrics("cl-history"), history)
    exp.write_report(ws.report("central-baseline"),
                     {**rep, "n_cl_samples_used": n_cl, "config_hash": cfg.config_hash(),
                      "final_nmse_db": history[-1]["nmse_db"]})
    print(f"centralized baseline: {n_cl} samples, {rep['k_cl_epochs']} epochs, "
          f"final NMSE {history[-1]['nmse_db']:.2f} dB")
    return 0


def cmd_evaluate(args) -> int:
    cfg, ws = _load(args)
    model = _load_swtcan(cfg, args.checkpoint or ws.checkpoint("pretrained"))
    samples = _load_samples(cfg, args.data, "target", "test", cfg.data.n_test)
    linear, db = evaluate_nmse(model, samples, cfg.train.snr_db,
                               stage_seed(cfg.seed, "evaluate"))
    exp.write_report(ws.report("evaluate"), {
        "nmse_linear": linear, "nmse_db": db, "n_samples": len(samples),
        "config_hash": cfg.config_hash(),
    })
    print(f"NMSE {db:.3f} dB over {len(samples)} samples")
    return 0


def cmd_ablation(args) -> int:
    cfg, ws = _load(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    report = exp.run_pretraining_ablation(cfg, seeds, ws)
    rows = exp.read_jsonl(ws.metrics("ablation"))
    render_series(rows, "seed", "nmse_db", ws.figure("ablation"),
                  group_key="scheme", title=f"pre-training ablation, B={report['feedback_bits']}")
    for scheme, vals in report["schemes"].items():
        print(f"scheme {scheme}: median NMSE {vals['median_nmse_db']:.2f} dB")
    return 0


def cmd_plot(args) -> int:
    rows = exp.read_jsonl(args.metrics)
    if not rows:
        raise ConfigError(f"{args.metrics}: empty metrics file")
    out = args.plot_out or Path(args.metrics).with_suffix("")
    png, csv_path = render_series(rows, args.x, args.y, Path(out),
                                  group_key=args.group)
    print(f"wrote {png} and {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcsi",
        description="CSI acquisition: generative pre-training and federated tuning at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a channel dataset split")
    p.add_argument("--role", default="target")
    p.add_argument("--split", default="train")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--path", type=Path, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain-vae", help="train the channel generator (two-stage)")
    p.add_argument("--pretrain-data", type=Path, default=None)
    p.add_argument("--finetune-data", type=Path, default=None)
    p.add_argument("--no-finetune", action="store_true")
    p.add_argument("--tag", default="vae")
    p.set_defaults(func=cmd_pretrain_vae)

    p = sub.add_parser("gen-synthetic", help="sample a synthetic corpus from the generator")
    p.add_argument("--vae", type=Path, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--label", default="generated")
    p.add_argument("--path", type=Path, default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("pretrain-swtcan", help="pre-train the acquisition network")
    p.add_argument("--train-data", type=Path, default=None)
    p.add_argument("--val-data", type=Path, default=None)
    p.add_argument("--tag", default="pretrained")
    p.set_defaults(func=cmd_pretrain_swtcan)

    p = sub.add_parser("fedtune", help="federated fine-tuning with over-the-air aggregation")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.set_defaults(func=cmd_fedtune)

    p = sub.add_parser("central-baseline", help="budget-matched centralized fine-tuning")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--t0", type=int, default=None)
    p.set_defaults(func=cmd_central_baseline)

    p = sub.add_parser("evaluate", help="NMSE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation-pretrain", help="four-scheme pre-training ablation")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("plot", help="render a metrics file to PNG + CSV")
    p.add_argument("--metrics", type=Path, required=True)
    p.add_argument("--x", default="round")
    p.add_argument("--y", default="nmse_db")
    p.add_argument("--group", default=None)
    p.add_argument("--plot-out", type=Path, default=None)
    p.set_defaults(func=cmd_plot)

    for _, sp in sub.choices.items():
        _add_common(sp)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (IntegrityError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
