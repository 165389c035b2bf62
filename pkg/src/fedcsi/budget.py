"""Uplink-overhead and compute-time accounting for federated tuning vs. centralized learning.

Federated tuning uploads one superposed d-vector of trainable-parameter deltas
per global epoch (d reals). Centralized learning instead uploads raw CSI samples
at 2*P*N_BS reals each, and gets a training-epoch budget from matching the
modeled compute time of the federated run. Fractional sample/epoch counts are
floored; that choice is recorded in every report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostModel:
    """Measured cost inputs for the budget comparison.

    FLOP counts are declared measurement inputs, not recomputed from the
    network graph.
    """

    d: int                      # trainable scalar count
    total_params: int
    n_subcarriers: int          # P
    n_bs: int
    zeta_ue_flops: float = 2.6e9    # one local sample, fwd+bwd on trainable subset
    zeta_bs_flops: float = 3.4e9    # one sample, fwd+bwd on the full model
    kappa_ue_flops_s: float = 2.6e12
    gamma: float = 1.0          # BS-to-UE compute-speed ratio
    samples_per_ue: int = 10    # N_FL^s
    local_epochs: int = 2       # K

    def __post_init__(self):
        for name in ("d", "total_params", "n_subcarriers", "n_bs",
                     "zeta_ue_flops", "zeta_bs_flops", "kappa_ue_flops_s",
                     "gamma", "samples_per_ue", "local_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"CostModel.{name} must be positive")

    @property
    def kappa_bs_flops_s(self) -> float:
        return self.gamma * self.kappa_ue_flops_s

    @property
    def cl_reals_per_sample(self) -> int:
        return 2 * self.n_subcarriers * self.n_bs


@dataclass
class BudgetLedger:
    """Additive log of uplink real numbers and modeled compute seconds."""

    entries: list[tuple[str, str, float]] = field(default_factory=list)

    def add_uplink(self, label: str, reals: float) -> None:
        self.entries.append((label, "uplink_reals", float(reals)))

    def add_compute(self, label: str, seconds: float) -> None:
        self.entries.append((label, "model_seconds", float(seconds)))

    @property
    def uplink_reals_cum(self) -> int:
        return int(sum(a for _, kind, a in self.entries if kind == "uplink_reals"))

    @property
    def wall_model_seconds(self) -> float:
        return sum(a for _, kind, a in self.entries if kind == "model_seconds")


def fl_uplink_overhead(t0: int, d: int) -> int:
    """Uplink reals for t0 global epochs of federated tuning: t0 * d."""
    if t0 < 0:
        raise ValueError("t0 must be >= 0")
    return t0 * d


def cl_samples_for_budget(t0: int, d: int, n_subcarriers: int, n_bs: int) -> int:
    """CSI samples centralized learning can collect for the same uplink budget.

    floor(t0 * d / (2 * P * N_BS)); one raw sample costs 2*P*N_BS reals.
    """
    per_sample = 2 * n_subcarriers * n_bs
    if per_sample <= 0:
        raise ValueError("P * N_BS must be positive")
    return (t0 * d) // per_sample


def fl_compute_time(t0: int, samples_per_ue: int, local_epochs: int,
                    zeta_ue_flops: float, kappa_ue_flops_s: float) -> float:
    """Modeled UE compute time of t0 federated rounds: t0*N_FL^s*K*zeta_UE/kappa_UE."""
    if kappa_ue_flops_s <= 0:
        raise ValueError("kappa_ue_flops_s must be > 0")
    return t0 * samples_per_ue * local_epochs * zeta_ue_flops / kappa_ue_flops_s


def cl_epochs_for_time(tau_s: float, kappa_bs_flops_s: float,
                       n_cl_samples: int, zeta_bs_flops: float) -> int:
    """Centralized epochs fitting in the same compute time: floor(tau*kappa_BS/(N_CL^s*zeta_BS))."""
    if n_cl_samples == 0:
        logger.warning("CL sample budget is zero; defining K_CL = 0 epochs")
        return 0
    if n_cl_samples < 0:
        raise ValueError("n_cl_samples must be >= 0")
    return math.floor(tau_s * kappa_bs_flops_s / (n_cl_samples * zeta_bs_flops))


def trainable_fraction(d: int, total_params: int) -> float:
    """Fraction of model scalars left trainable, d / |theta|."""
    if total_params <= 0:
        raise ValueError("total_params must be positive")
    return d / total_params


def make_report(cost: CostModel, t0: int) -> dict:
    """All derived budget quantities for a t0-round comparison, as one JSON-able dict."""
    n_cl = cl_samples_for_budget(t0, cost.d, cost.n_subcarriers, cost.n_bs)
    tau = fl_compute_time(t0, cost.samples_per_ue, cost.local_epochs,
                          cost.zeta_ue_flops, cost.kappa_ue_flops_s)
    k_cl = cl_epochs_for_time(tau, cost.kappa_bs_flops_s, n_cl, cost.zeta_bs_flops)
    return {
        "t0": t0,
        "d": cost.d,
        "total_params": cost.total_params,
        "trainable_fraction": trainable_fraction(cost.d, cost.total_params),
        "fl_uplink_reals": fl_uplink_overhead(t0, cost.d),
        "cl_reals_per_sample": cost.cl_reals_per_sample,
        "n_cl_samples": n_cl,
        "tau_seconds": tau,
        "gamma": cost.gamma,
        "k_cl_epochs": k_cl,
        "rounding": "floor on n_cl_samples and k_cl_epochs",
    }
