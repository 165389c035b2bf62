"""Experiment recipes: dataset splits, pre-training ablation, feedback sweep, FL vs CL.

Every recipe derives all of its randomness from the config seed through
stage_seed, writes JSON-lines metrics plus a JSON report under the workspace,
and stamps both with the resolved config hash so artifacts re-validate against
the configuration that produced them. Reruns with the same seed are
byte-identical.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import budget as budget_mod
from .channel import ChannelSample, resize_scenario, generate_dataset
from .config import ExperimentConfig, stage_seed
from .datasets import save_checkpoint, save_dataset
from .federated import (FedConfig, make_shards, run_centralized_baseline,
                        run_federated_tuning)
from .swtcan import (Swtcan, TrainSettings, evaluate_nmse, partition_params,
                     train_e2e)
from .vae import (ChannelVae, VaeTrainSettings, finetune_vae, generate,
                  train_vae)

SCHEMES = ("A", "B", "C", "Proposed")


@dataclass
class Workspace:
    """Output layout of one experiment run."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        for sub in ("data", "checkpoints", "metrics", "reports", "figures"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def data(self, name: str) -> Path:
        return self.root / "data" / f"{name}.npz"

    def checkpoint(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.npz"

    def metrics(self, name: str) -> Path:
        return self.root / "metrics" / f"{name}.jsonl"

    def report(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.json"

    def figure(self, name: str) -> Path:
        return self.root / "figures" / name


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def make_split(cfg: ExperimentConfig, role: str, split: str, n: int) -> list[ChannelSample]:
    """Generate one dataset split; the split name salts the scenario seed."""
    scenario = cfg.scenarios[role]
    return generate_dataset(resize_scenario(scenario, seed=stage_seed(scenario.seed, split)), n)


def build_model(cfg: ExperimentConfig, init_seed: int) -> Swtcan:
    torch.manual_seed(init_seed)
    return Swtcan(cfg.swtcan)


def _train_settings(cfg: ExperimentConfig, seed: int, epochs: int | None = None) -> TrainSettings:
    return dataclasses.replace(cfg.train, seed=seed,
                               epochs=cfg.train.epochs if epochs is None else epochs)


def fit_generator(cfg: ExperimentConfig, seed: int, scarce, abundant=None) -> ChannelVae:
    """Train the channel generator: two-stage when abundant data is given.

    Without an abundant corpus the generator trains on the scarce set alone for
    the combined epoch budget of the two stages, so both variants see the same
    number of passes.
    """
    torch.manual_seed(stage_seed(seed, "vae-init"))
    vae = ChannelVae(cfg.vae)
    plan = cfg.vae_train
    if abundant is not None:
        train_vae(vae, abundant, VaeTrainSettings(
            epochs=plan.epochs, batch_size=plan.batch_size, lr=plan.lr,
            seed=stage_seed(seed, "vae-pretrain")))
        finetune_vae(vae, scarce, VaeTrainSettings(
            epochs=plan.finetune_epochs, batch_size=plan.batch_size,
            lr=plan.finetune_lr, seed=stage_seed(seed, "vae-finetune")))
    else:
        train_vae(vae, scarce, VaeTrainSettings(
            epochs=plan.epochs + plan.finetune_epochs, batch_size=plan.batch_size,
            lr=plan.lr, seed=stage_seed(seed, "vae-scarce")))
    return vae


def run_pretraining_ablation(cfg: ExperimentConfig, seeds: list[int] | None = None,
                             workspace: Workspace | None = None) -> dict:
    """Four pre-training schemes, identical network config/seed, one test set.

    A: abundant mismatched samples only. B: the scarce in-cell set only.
    C: generator fit on the scarce set, synthetic corpus for pre-training.
    Proposed: generator pre-trained on the mismatched corpus, fine-tuned on the
    scarce set, then the synthetic corpus.
    """
    seeds = list(seeds) if seeds else [cfg.seed]
    ws = workspace or Workspace(cfg.out_dir)
    cfg_hash = cfg.config_hash()

    rows, per_scheme = [], {s: [] for s in SCHEMES}
    train_histories = {}
    for seed in seeds:
        abundant = make_split(cfg, "pretrain", f"abundant-{seed}", cfg.data.n_train)
        scarce = make_split(cfg, "target", f"scarce-{seed}", cfg.data.n_scarce)
        test = make_split(cfg, "target", "test", cfg.data.n_test)
        eval_seed = stage_seed(cfg.seed, "ablation-eval")

        synth_c = generate(
            fit_generator(cfg, seed, scarce),
            cfg.data.n_synthetic, torch.Generator().manual_seed(stage_seed(seed, "gen-c")),
            label="generated-scarce-only")
        synth_p = generate(
            fit_generator(cfg, seed, scarce, abundant),
            cfg.data.n_synthetic, torch.Generator().manual_seed(stage_seed(seed, "gen-p")),
            label="generated-two-stage")

        corpora = {"A": abundant, "B": scarce, "C": synth_c, "Proposed": synth_p}
        for scheme in SCHEMES:
            model = build_model(cfg, stage_seed(seed, "swtcan-init"))
            corpus = corpora[scheme]
            _, hist = train_e2e(model, corpus, corpus,
                                _train_settings(cfg, stage_seed(seed, "swtcan-train")))
            _, test_db = evaluate_nmse(model, test, cfg.train.snr_db, eval_seed)
            rows.append({
                "scheme": scheme, "seed": seed, "nmse_db": test_db,
                "n_pretrain_samples": len(corpus),
                "feedback_bits": cfg.swtcan.feedback_bits,
                "config_hash": cfg_hash,
            })
            per_scheme[scheme].append(test_db)
            if seed == seeds[0]:
                train_histories[scheme] = hist
                save_checkpoint(model, ws.checkpoint(f"ablation-{scheme}"),
                                config_hash=cfg_hash, epoch=len(hist),
                                val_nmse_db=test_db, partition_spec="all")

    report = {
        "feedback_bits": cfg.swtcan.feedback_bits,
        "seeds": seeds,
        "config_hash": cfg_hash,
        "schemes": {
            s: {"nmse_db": per_scheme[s], "median_nmse_db": float(np.median(per_scheme[s]))}
            for s in SCHEMES
        },
        "epochs_per_scheme": cfg.train.epochs,
    }
    write_jsonl(ws.metrics("ablation"), rows)
    for scheme, hist in train_histories.items():
        write_jsonl(ws.metrics(f"ablation-train-{scheme}"), hist)
    write_report(ws.report("ablation"), report)
    return report


def run_feedback_sweep(cfg: ExperimentConfig, bits_list: list[int],
                       seeds: list[int] | None = None,
                       workspace: Workspace | None = None) -> dict:
    """Converged validation NMSE as a function of the feedback bit budget."""
    seeds = list(seeds) if seeds else [cfg.seed]
    ws = workspace or Workspace(cfg.out_dir)
    cfg_hash = cfg.config_hash()

    train = make_split(cfg, "target", "train", cfg.data.n_train)
    val = make_split(cfg, "target", "val", cfg.data.n_val)
    test = make_split(cfg, "target", "test", cfg.data.n_test)
    eval_seed = stage_seed(cfg.seed, "sweep-eval")

    rows, medians = [], {}
    for bits in bits_list:
        swt = dataclasses.replace(cfg.swtcan, feedback_bits=bits)
        vals = []
        for seed in seeds:
            torch.manual_seed(stage_seed(seed, f"sweep-init-{bits}"))
            model = Swtcan(swt)
            _, hist = train_e2e(model, train, val,
                                _train_settings(cfg, stage_seed(seed, f"sweep-train-{bits}")))
            best_val = min(h["val_nmse_db"] for h in hist)
            _, test_db = evaluate_nmse(model, test, cfg.train.snr_db, eval_seed)
            rows.append({
                "feedback_bits": bits, "seed": seed,
                "val_nmse_db": best_val, "test_nmse_db": test_db,
                "config_hash": cfg_hash,
            })
            vals.append(best_val)
        medians[bits] = float(np.median(vals))

    report = {
        "bits": bits_list, "seeds": seeds,
        "median_val_nmse_db": {str(b): medians[b] for b in bits_list},
        "config_hash": cfg_hash,
    }
    write_jsonl(ws.metrics("feedback-sweep"), rows)
    write_report(ws.report("feedback-sweep"), report)
    return report


def pretrain_for_tuning(cfg: ExperimentConfig, workspace: Workspace | None = None) -> Swtcan:
    """The checkpoint federated tuning starts from: mismatched-corpus pre-training."""
    abundant = make_split(cfg, "pretrain", "abundant", cfg.data.n_train)
    model = build_model(cfg, stage_seed(cfg.seed, "swtcan-init"))
    train_e2e(model, abundant, abundant,
              _train_settings(cfg, stage_seed(cfg.seed, "pretrain")))
    if workspace is not None:
        save_checkpoint(model, workspace.checkpoint("pretrained"),
                        config_hash=cfg.config_hash(), epoch=cfg.train.epochs,
                        partition_spec="all")
    return model


def run_fl_vs_cl(cfg: ExperimentConfig, workspace: Workspace | None = None,
                 pretrained: Swtcan | None = None) -> dict:
    """Budget-matched comparison of federated tuning against centralized learning.

    Both arms start from the same pre-trained model and see target-scenario
    data. The CL arm is evaluated at several uplink budgets T0*d; for each, the
    budget module converts the uplink budget into a sample count and the
    matched compute time into an epoch count.
    """
    ws = workspace or Workspace(cfg.out_dir)
    cfg_hash = cfg.config_hash()
    if pretrained is None:
        pretrained = pretrain_for_tuning(cfg, ws)

    partition = partition_params(pretrained, cfg.partition_spec)
    cost = budget_mod.CostModel(
        d=partition.d, total_params=partition.total,
        n_subcarriers=cfg.n_subcarriers, n_bs=cfg.geometry.n_bs,
        zeta_ue_flops=cfg.cost.zeta_ue_flops, zeta_bs_flops=cfg.cost.zeta_bs_flops,
        kappa_ue_flops_s=cfg.cost.kappa_ue_flops_s, gamma=cfg.cost.gamma,
        samples_per_ue=cfg.fed.samples_per_ue, local_epochs=cfg.fed.local_epochs,
    )
    write_report(ws.report("budget"), {**budget_mod.make_report(cost, cfg.fed.rounds),
                                       "config_hash": cfg_hash})

    pool = make_split(cfg, "target", "fl-pool", cfg.fed.n_ues * cfg.fed.samples_per_ue)
    eval_set = make_split(cfg, "target", "test", cfg.data.n_test)
    eval_seed = stage_seed(cfg.seed, "tuning-eval")

    fl_model = copy.deepcopy(pretrained)
    shards = make_shards(pool, cfg.fed.n_ues, cfg.fed.samples_per_ue)
    fl_history = run_federated_tuning(fl_model, partition, shards, cfg.fed,
                                      eval_set, cost, eval_noise_seed=eval_seed)
    write_jsonl(ws.metrics("fl-history"), fl_history)
    save_checkpoint(fl_model, ws.checkpoint("fedtuned"), config_hash=cfg_hash,
                    epoch=cfg.fed.rounds, partition_spec=cfg.partition_spec,
                    val_nmse_db=fl_history[-1]["nmse_db"] if fl_history else math.nan)

    _, start_db = evaluate_nmse(pretrained, eval_set, cfg.fed.downlink_snr_db, eval_seed)
    cl_points = []
    for frac in cfg.cl_budget_fractions:
        t0 = max(1, round(frac * cfg.fed.rounds))
        n_cl = budget_mod.cl_samples_for_budget(t0, cost.d, cost.n_subcarriers, cost.n_bs)
        n_cl = min(n_cl, len(pool))
        tau = budget_mod.fl_compute_time(t0, cost.samples_per_ue, cost.local_epochs,
                                         cost.zeta_ue_flops, cost.kappa_ue_flops_s)
        k_cl = budget_mod.cl_epochs_for_time(tau, cost.kappa_bs_flops_s, n_cl,
                                             cost.zeta_bs_flops)
        cl_model = copy.deepcopy(pretrained)
        hist = run_centralized_baseline(
            cl_model, pool[:n_cl], k_cl, eval_set, cost,
            snr_db=cfg.fed.downlink_snr_db, lr=cfg.train.lr,
            batch_size=cfg.train.batch_size,
            seed=stage_seed(cfg.seed, f"cl-{t0}"), eval_noise_seed=eval_seed,
        )
        cl_points.append({
            "t0": t0, "n_cl_samples": n_cl, "k_cl_epochs": k_cl,
            "uplink_reals_cum": cost.cl_reals_per_sample * n_cl,
            "nmse_db": min(h["nmse_db"] for h in hist),
            "wall_model_seconds": hist[-1]["wall_model_seconds"],
        })
    write_jsonl(ws.metrics("cl-curve"), cl_points)

    cl_final = cl_points[-1]
    fl_match = next((h for h in fl_history if h["nmse_db"] <= cl_final["nmse_db"]), None)
    ratio = (fl_match["uplink_reals_cum"] / cl_final["uplink_reals_cum"]
             if fl_match and cl_final["uplink_reals_cum"] > 0 else math.inf)

    report = {
        "config_hash": cfg_hash,
        "gamma": cfg.cost.gamma,
        "d": cost.d,
        "total_params": cost.total_params,
        "start_nmse_db": start_db,
        "fl_final_nmse_db": fl_history[-1]["nmse_db"] if fl_history else start_db,
        "fl_best_nmse_db": min((h["nmse_db"] for h in fl_history), default=start_db),
        "cl_points": cl_points,
        "cl_final_nmse_db": cl_final["nmse_db"],
        "n_cl_samples": cl_final["n_cl_samples"],
        "k_cl_epochs": cl_final["k_cl_epochs"],
        "fl_uplink_at_cl_final_nmse": fl_match["uplink_reals_cum"] if fl_match else None,
        "overhead_ratio_at_cl_final_nmse": ratio,
    }
    write_report(ws.report("fl-vs-cl"), report)
    return report


def export_split(cfg: ExperimentConfig, role: str, split: str, n: int,
                 path: Path) -> dict:
    """Generate one split and write it as a dataset file."""
    samples = make_split(cfg, role, split, n)
    scenario = cfg.scenarios[role]
    return save_dataset(samples, path, seed=stage_seed(scenario.seed, split),
                        config_hash=cfg.config_hash(), split=split)
