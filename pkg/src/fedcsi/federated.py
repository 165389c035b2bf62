"""Federated fine-tuning of the trainable parameter subset, plus the centralized baseline.

Each round: sample a client fraction, run K epochs of local SGD on every
client's private samples (trainable coordinates only), aggregate the model
deltas as one noisy superposed vector (over-the-air computation), then apply an
adaptive server update with momentum and a max-stabilized second moment. The
centralized baseline instead trains the whole model on samples bought with the
same uplink budget for as many epochs as fit in the same modeled compute time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import torch
from torch.func import functional_call

from .budget import CostModel
from .errors import DivergenceError
from .swtcan import (ParamPartition, Swtcan, TrainSettings, evaluate_nmse,
                     loss_nmse, samples_to_tensor, train_e2e)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FedConfig:
    """Federated-tuning hyperparameters.

    Defaults follow the full-scale setting (600 UEs, 10% participation, K=2,
    eta_l=1e-3, eta=1, beta1=0.9, beta2=0.99); desk-scale experiment presets
    override the counts and the server step size.
    """

    n_ues: int = 600
    participation: float = 0.1
    local_epochs: int = 2       # K
    eta_l: float = 1e-3
    eta: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    rounds: int = 50            # T
    aircomp_snr_db: float = 20.0
    downlink_snr_db: float = 20.0
    samples_per_ue: int = 10    # N_FL^s
    variance_rule: str = "stabilized"  # or "paper-literal"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.participation <= 1:
            raise ValueError("participation must be in (0, 1]")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.variance_rule not in ("stabilized", "paper-literal"):
            raise ValueError(f"unknown variance_rule {self.variance_rule!r}")


@dataclass
class FedState:
    """Server-side optimizer state over the trainable vector."""

    t: int
    theta: torch.Tensor
    m: torch.Tensor
    v: torch.Tensor

    @classmethod
    def initial(cls, theta: torch.Tensor) -> "FedState":
        return cls(t=0, theta=theta.clone(),
                   m=torch.zeros_like(theta), v=torch.zeros_like(theta))


@dataclass
class ClientShard:
    """One UE's private local dataset."""

    ue_id: int
    local_samples: list

    def __post_init__(self):
        if not self.local_samples:
            raise ValueError(f"UE {self.ue_id} has an empty shard")


def make_shards(samples: list, n_ues: int, samples_per_ue: int) -> list[ClientShard]:
    """Deal out samples to UEs in index order; requires enough samples."""
    needed = n_ues * samples_per_ue
    if len(samples) < needed:
        raise ValueError(f"need {needed} samples for {n_ues} UEs, got {len(samples)}")
    return [
        ClientShard(ue_id=u, local_samples=samples[u * samples_per_ue:(u + 1) * samples_per_ue])
        for u in range(n_ues)
    ]


def sample_clients(n_ues: int, participation: float, rng: np.random.Generator) -> list[int]:
    """Uniform sampling without replacement; |S| = round(n_ues * participation)."""
    size = round(n_ues * participation)
    if size < 1:
        raise ValueError("participation too small: no clients selected")
    return sorted(rng.choice(n_ues, size=size, replace=False).tolist())


class LocalObjective(Protocol):
    """Local training loss as a function of the trainable vector."""

    def loss(self, theta: torch.Tensor, samples: torch.Tensor,
             rng: torch.Generator | None) -> torch.Tensor: ...


def local_update(objective: LocalObjective, theta0: torch.Tensor, samples: torch.Tensor,
                 k_epochs: int, eta_l: float,
                 rng: torch.Generator | None = None) -> torch.Tensor:
    """K epochs of plain SGD from theta0; returns the model difference.

    Raises DivergenceError on non-finite gradients; callers treat that UE as
    dropped from the round.
    """
    theta = theta0.detach().clone().requires_grad_(True)
    for _ in range(k_epochs):
        loss = objective.loss(theta, samples, rng)
        (grad,) = torch.autograd.grad(loss, theta)
        if not torch.isfinite(grad).all():
            raise DivergenceError("non-finite local gradient")
        theta = (theta - eta_l * grad).detach().requires_grad_(True)
    return (theta - theta0).detach()


def aircomp_aggregate(deltas: list[torch.Tensor], snr_db: float,
                      rng: np.random.Generator | None = None) -> torch.Tensor:
    """Mean of client deltas plus aggregation noise.

    Per-coordinate noise variance is the mean signal power of the stacked
    deltas divided by the linear SNR (perfect power control). snr_db=inf
    returns the exact mean.
    """
    if not deltas:
        raise ValueError("aircomp needs at least one delta")
    if any(d.shape != deltas[0].shape for d in deltas):
        raise ValueError("delta dimension mismatch")
    stack = torch.stack(deltas)
    mean = stack.mean(dim=0)
    if math.isinf(snr_db):
        return mean
    if rng is None:
        raise ValueError("rng required when aggregation noise is enabled")
    noise_var = stack.square().mean().item() / 10.0 ** (snr_db / 10.0)
    noise = rng.normal(0.0, math.sqrt(noise_var), size=mean.shape[0])
    return mean + torch.from_numpy(noise).to(mean.dtype)


def server_update(state: FedState, delta: torch.Tensor, cfg: FedConfig) -> FedState:
    """Adaptive server step: momentum plus max-stabilized second moment.

    The "paper-literal" rule accumulates v_t = max{v_{t-1} + (1-beta2)*delta^2,
    v_{t-1}} (an unbounded sum); the default "stabilized" rule uses the EMA
    recursion before the element-wise max.
    """
    if not torch.isfinite(delta).all():
        raise DivergenceError("non-finite aggregated delta")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * delta
    if cfg.variance_rule == "paper-literal":
        candidate = state.v + (1.0 - cfg.beta2) * delta.square()
    else:
        candidate = cfg.beta2 * state.v + (1.0 - cfg.beta2) * delta.square()
    v = torch.maximum(candidate, state.v)
    theta = state.theta + cfg.eta * m / (v.sqrt() + cfg.epsilon)
    if not torch.isfinite(theta).all():
        raise DivergenceError("non-finite server parameters")
    return FedState(t=state.t + 1, theta=theta, m=m, v=v)


def run_rounds(
    objective: LocalObjective,
    theta0: torch.Tensor,
    shards: list[ClientShard],
    cfg: FedConfig,
    eval_fn: Callable[[torch.Tensor], float],
    seconds_per_round: float = 0.0,
) -> tuple[torch.Tensor, list[dict]]:
    """Generic synchronous federated loop over an arbitrary local objective.

    Returns the final trainable vector and one history record per round:
    {round, nmse_db, uplink_reals_cum, wall_model_seconds}. Local updates are
    aggregated in fixed ue-id order so replay is bit-exact.
    """
    shard_tensors = {s.ue_id: samples_to_tensor(s.local_samples) for s in shards}
    state = FedState.initial(theta0)
    d = theta0.numel()
    history: list[dict] = []
    uplink = 0
    for t in range(1, cfg.rounds + 1):
        round_rng = np.random.default_rng((cfg.seed, 1, t))
        selected = sample_clients(len(shards), cfg.participation, round_rng)
        deltas = []
        for u in selected:
            ue_rng = torch.Generator().manual_seed(
                (cfg.seed * 1_000_003 + t * 4093 + u) % (2 ** 63)
            )
            try:
                deltas.append(local_update(
                    objective, state.theta, shard_tensors[u],
                    cfg.local_epochs, cfg.eta_l, ue_rng,
                ))
            except DivergenceError:
                logger.warning("UE %d dropped from round %d (non-finite gradient)", u, t)
        if deltas:
            agg_rng = np.random.default_rng((cfg.seed, 2, t))
            delta = aircomp_aggregate(deltas, cfg.aircomp_snr_db, agg_rng)
            state = server_update(state, delta, cfg)
            uplink += d
        else:
            logger.warning("round %d skipped: every selected UE dropped", t)
        history.append({
            "round": t,
            "nmse_db": eval_fn(state.theta),
            "uplink_reals_cum": uplink,
            "wall_model_seconds": t * seconds_per_round,
        })
    return state.theta, history


class SwtcanObjective:
    """Local NMSE loss through the full acquisition chain, trainable subset only.

    Frozen parameters are read from the module and never touched; the
    trainable ones are injected as views of the flat vector, so gradients flow
    only into that vector.
    """

    def __init__(self, model: Swtcan, partition: ParamPartition, snr_db: float):
        self.model = model
        self.partition = partition
        self.snr_db = snr_db
        params = dict(model.named_parameters())
        self.shapes = [params[n].shape for n in partition.trainable_names]
        self.sizes = [params[n].numel() for n in partition.trainable_names]

    def vector_from_model(self) -> torch.Tensor:
        params = dict(self.model.named_parameters())
        return torch.cat([
            params[n].detach().reshape(-1) for n in self.partition.trainable_names
        ])

    @torch.no_grad()
    def vector_to_model(self, theta: torch.Tensor) -> None:
        params = dict(self.model.named_parameters())
        for name, piece in zip(self.partition.trainable_names, self._split(theta)):
            params[name].copy_(piece)

    def _split(self, theta: torch.Tensor) -> list[torch.Tensor]:
        return [
            piece.view(shape)
            for piece, shape in zip(torch.split(theta, self.sizes), self.shapes)
        ]

    def loss(self, theta: torch.Tensor, samples: torch.Tensor,
             rng: torch.Generator | None) -> torch.Tensor:
        overrides = dict(zip(self.partition.trainable_names, self._split(theta)))
        h_hat = functional_call(
            self.model, overrides, (samples,),
            {"snr_db": self.snr_db, "noise_rng": rng},
        )
        return loss_nmse(h_hat, samples.to(h_hat.dtype))


def run_federated_tuning(
    model: Swtcan,
    partition: ParamPartition,
    shards: list[ClientShard],
    cfg: FedConfig,
    eval_set: list,
    cost: CostModel | None = None,
    eval_noise_seed: int = 12345,
) -> list[dict]:
    """Algorithm wrapper for the acquisition network; mutates the model in place."""
    if len(shards) != cfg.n_ues:
        raise ValueError(f"expected {cfg.n_ues} shards, got {len(shards)}")
    objective = SwtcanObjective(model, partition, cfg.downlink_snr_db)

    def eval_fn(theta: torch.Tensor) -> float:
        objective.vector_to_model(theta)
        _, db = evaluate_nmse(model, eval_set, cfg.downlink_snr_db, eval_noise_seed)
        return db

    seconds = (cost.samples_per_ue * cost.local_epochs * cost.zeta_ue_flops
               / cost.kappa_ue_flops_s) if cost is not None else 0.0
    theta, history = run_rounds(
        objective, objective.vector_from_model(), shards, cfg, eval_fn, seconds,
    )
    objective.vector_to_model(theta)
    return history


def run_centralized_baseline(
    model: Swtcan,
    collected_samples: list,
    k_cl_epochs: int,
    eval_set: list,
    cost: CostModel,
    snr_db: float = 20.0,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    eval_noise_seed: int = 12345,
) -> list[dict]:
    """Budget-matched centralized fine-tuning of the full parameter set.

    The whole sample upload (2*P*N_BS reals each) is booked before training;
    each epoch advances the modeled clock by N_CL^s*zeta_BS/kappa_BS seconds.
    """
    upload = cost.cl_reals_per_sample * len(collected_samples)
    sec_per_epoch = len(collected_samples) * cost.zeta_bs_flops / cost.kappa_bs_flops_s
    _, start_db = evaluate_nmse(model, eval_set, snr_db, eval_noise_seed)
    history = [{
        "round": 0, "nmse_db": start_db,
        "uplink_reals_cum": upload, "wall_model_seconds": 0.0,
    }]
    if k_cl_epochs == 0 or not collected_samples:
        return history
    settings = TrainSettings(epochs=k_cl_epochs, batch_size=batch_size, lr=lr,
                             snr_db=snr_db, seed=seed, cosine_decay=False,
                             eval_noise_seed=eval_noise_seed)
    _, train_hist = train_e2e(model, collected_samples, eval_set, settings)
    for rec in train_hist:
        epoch = rec["epoch"] + 1
        history.append({
            "round": epoch, "nmse_db": rec["val_nmse_db"],
            "uplink_reals_cum": upload, "wall_model_seconds": epoch * sec_per_epoch,
        })
    return history
