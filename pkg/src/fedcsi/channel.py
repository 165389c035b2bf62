"""Synthetic clustered multipath MIMO-OFDM channels and the pilot observation model.

Channels live in two domains: the frequency-spatial matrix ``H_s`` (subcarriers x
antennas) produced by the multipath synthesizer, and the frequency-angular matrix
``H_a = H_s @ F`` obtained through a unitary 2-D DFT matched to the planar array.
Everything downstream (compression, generation, federated tuning) consumes ``H_a``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array at the base station."""

    n_rows: int = 8
    n_cols: int = 8
    element_spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"array dims must be >= 1, got {self.n_rows}x{self.n_cols}")

    @property
    def n_bs(self) -> int:
        return self.n_rows * self.n_cols


@dataclass(frozen=True)
class ScenarioConfig:
    """Cluster statistics for one propagation scenario.

    Distinct labels must describe distinct statistics; use :func:`scenario_preset`
    for the built-in families instead of hand-rolling labels.
    """

    label: str
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    n_subcarriers: int = 32
    carrier_freq_hz: float = 28e9
    subcarrier_spacing_hz: float = 240e3
    delay_spread_s: float = 30e-9
    n_clusters: int = 4
    rays_per_cluster: int = 8
    angular_spread_deg: float = 5.0
    los: bool = False
    # uniform ranges (degrees) the per-sample cluster centers are drawn from
    az_center_range_deg: tuple[float, float] = (-60.0, 60.0)
    el_center_range_deg: tuple[float, float] = (-20.0, 20.0)
    rician_k: float = 10.0  # linear LOS-to-NLOS power ratio, used when los=True
    seed: int = 0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.delay_spread_s <= 0:
            raise ValueError("delay_spread_s must be > 0")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.rays_per_cluster < 1:
            raise ValueError("rays_per_cluster must be >= 1")


# Preset cluster-statistics families. The labels are "-like" because they mimic
# the diversity of standardized delay-line families (cluster count, spread, LOS)
# without claiming 3GPP-exact tables.
_PRESETS: dict[str, dict] = {
    "A-like": dict(
        n_clusters=6, rays_per_cluster=8, angular_spread_deg=5.0, los=False,
        az_center_range_deg=(-60.0, 60.0), el_center_range_deg=(-20.0, 20.0),
    ),
    "B-like": dict(
        n_clusters=3, rays_per_cluster=8, angular_spread_deg=2.0, los=True,
        az_center_range_deg=(5.0, 70.0), el_center_range_deg=(0.0, 30.0),
    ),
    "C-like": dict(
        n_clusters=10, rays_per_cluster=6, angular_spread_deg=10.0, los=False,
        az_center_range_deg=(-70.0, 70.0), el_center_range_deg=(-30.0, 30.0),
    ),
}


def scenario_preset(label: str, **overrides) -> ScenarioConfig:
    """Build a ScenarioConfig from one of the named presets."""
    if label not in _PRESETS:
        raise KeyError(f"unknown scenario preset {label!r}; available: {sorted(_PRESETS)}")
    kwargs = dict(_PRESETS[label])
    kwargs.update(overrides)
    return ScenarioConfig(label=label, **kwargs)


@dataclass
class ChannelSample:
    """One frequency-angular CSI realization."""

    h_a: np.ndarray  # complex, (P, N_BS)
    scenario_label: str = ""

    def __post_init__(self):
        self.h_a = np.asarray(self.h_a)
        if self.h_a.ndim != 2:
            raise ValueError(f"h_a must be 2-D, got shape {self.h_a.shape}")
        if not np.all(np.isfinite(self.h_a)):
            raise ValueError("h_a contains non-finite entries")
        if np.linalg.norm(self.h_a) == 0:
            raise ValueError("h_a has zero Frobenius norm")


@dataclass
class Observation:
    """Received pilot signal Y (P x M) at a given SNR."""

    y: np.ndarray
    snr_db: float

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observation contains non-finite entries")


@dataclass
class PathSet:
    """Flat list of propagation paths (cluster/ray structure already expanded)."""

    gains: np.ndarray       # complex, (n_paths,)
    delays_s: np.ndarray    # (n_paths,)
    azimuths: np.ndarray    # radians, (n_paths,)
    elevations: np.ndarray  # radians, (n_paths,)


def steering_vector(geometry: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """UPA response for a direction, flattened row-major (row index varies slowest).

    Uses direction cosines u = sin(az)cos(el) across columns and v = sin(el)
    across rows, so broadside (az=el=0) gives the all-ones vector. The result is
    kron(a_rows, a_cols) of the two 1-D phase progressions.
    """
    u = np.sin(azimuth) * np.cos(elevation)
    v = np.sin(elevation)
    d = geometry.element_spacing
    a_rows = np.exp(1j * TWO_PI * d * v * np.arange(geometry.n_rows))
    a_cols = np.exp(1j * TWO_PI * d * u * np.arange(geometry.n_cols))
    return np.kron(a_rows, a_cols)


def synthesize_channel(paths: PathSet, scenario: ScenarioConfig) -> np.ndarray:
    """Sum-of-paths frequency-spatial channel H_s, shape (P, N_BS).

    H_s[p, :] = sum_l g_l * exp(-j 2 pi f_p tau_l) * a(az_l, el_l)^T with
    f_p = p * subcarrier_spacing.
    """
    geom = scenario.geometry
    p_idx = np.arange(scenario.n_subcarriers)
    freqs = p_idx * scenario.subcarrier_spacing_hz
    # (n_paths, N_BS) steering rows
    steer = np.stack([
        steering_vector(geom, az, el)
        for az, el in zip(paths.azimuths, paths.elevations)
    ])
    # (P, n_paths) per-subcarrier path phasors
    phasors = paths.gains[None, :] * np.exp(-1j * TWO_PI * np.outer(freqs, paths.delays_s))
    return phasors @ steer


def draw_paths(scenario: ScenarioConfig, rng: np.random.Generator) -> PathSet:
    """Draw one realization of cluster/ray gains, delays and angles.

    Cluster powers decay exponentially with delay and sum to one, so the
    synthesized channel has unit average per-element power. With los=True the
    first cluster collapses to a single zero-delay ray holding K/(K+1) of the
    power.
    """
    n_c = scenario.n_clusters
    spread = np.deg2rad(scenario.angular_spread_deg)
    az_lo, az_hi = np.deg2rad(scenario.az_center_range_deg)
    el_lo, el_hi = np.deg2rad(scenario.el_center_range_deg)

    delays = rng.exponential(scenario.delay_spread_s, size=n_c)
    centers_az = rng.uniform(az_lo, az_hi, size=n_c)
    centers_el = rng.uniform(el_lo, el_hi, size=n_c)
    powers = np.exp(-delays / scenario.delay_spread_s)

    if scenario.los:
        delays[0] = 0.0
        k = scenario.rician_k
        if n_c > 1:
            powers[0] = 0.0
            powers = powers / powers.sum() / (k + 1.0)
        powers[0] = k / (k + 1.0) if n_c > 1 else 1.0
    else:
        powers = powers / powers.sum()

    gains, taus, azs, els = [], [], [], []
    for i in range(n_c):
        if scenario.los and i == 0:
            phase = rng.uniform(0.0, TWO_PI)
            gains.append(np.sqrt(powers[0]) * np.exp(1j * phase))
            taus.append(delays[0])
            azs.append(centers_az[0])
            els.append(centers_el[0])
            continue
        n_r = scenario.rays_per_cluster
        ray_gain = rng.standard_normal((n_r, 2)) @ np.array([1.0, 1.0j]) / np.sqrt(2.0)
        gains.extend(np.sqrt(powers[i] / n_r) * ray_gain)
        taus.extend(np.full(n_r, delays[i]))
        azs.extend(centers_az[i] + spread * rng.standard_normal(n_r))
        els.extend(centers_el[i] + spread * rng.standard_normal(n_r))

    return PathSet(
        gains=np.asarray(gains, dtype=complex),
        delays_s=np.asarray(taus, dtype=float),
        azimuths=np.asarray(azs, dtype=float),
        elevations=np.asarray(els, dtype=float),
    )


def generate_channel(scenario: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """One frequency-spatial channel realization H_s, shape (P, N_BS)."""
    return synthesize_channel(draw_paths(scenario, rng), scenario)


@functools.lru_cache(maxsize=8)
def _dft_matrix(n_rows: int, n_cols: int) -> np.ndarray:
    """Unitary 2-D DFT matched to the UPA factorization: kron(F_rows, F_cols)."""
    def unitary_dft(n):
        k = np.arange(n)
        return np.exp(-1j * TWO_PI * np.outer(k, k) / n) / np.sqrt(n)

    return np.kron(unitary_dft(n_rows), unitary_dft(n_cols))


def to_angular(h_s: np.ndarray, geometry: ArrayGeometry) -> np.ndarray:
    """Frequency-angular channel H_a = H_s @ F with unitary F."""
    if h_s.shape[1] != geometry.n_bs:
        raise ValueError(f"H_s has {h_s.shape[1]} columns, geometry has {geometry.n_bs} elements")
    return h_s @ _dft_matrix(geometry.n_rows, geometry.n_cols)


def from_angular(h_a: np.ndarray, geometry: ArrayGeometry) -> np.ndarray:
    """Exact inverse of :func:`to_angular` (F is unitary)."""
    if h_a.shape[1] != geometry.n_bs:
        raise ValueError(f"H_a has {h_a.shape[1]} columns, geometry has {geometry.n_bs} elements")
    return h_a @ _dft_matrix(geometry.n_rows, geometry.n_cols).conj().T


def observe(
    h_a: np.ndarray,
    pilot: np.ndarray,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> Observation:
    """Apply the pilot observation model Y = H_a @ X + N.

    Noise power is calibrated so that ||H_a X||_F^2 / E||N||_F^2 equals the
    requested linear SNR. snr_db=inf disables noise and returns the exact
    product.
    """
    pilot = np.asarray(pilot)
    if not np.all(np.isfinite(pilot)):
        raise ValueError("pilot contains non-finite entries")
    if pilot.shape[0] != h_a.shape[1]:
        raise ValueError(f"pilot rows {pilot.shape[0]} != channel columns {h_a.shape[1]}")

    y0 = h_a @ pilot
    if np.isinf(snr_db):
        return Observation(y=y0, snr_db=snr_db)
    if rng is None:
        raise ValueError("rng required when noise is enabled")
    sig_power = np.linalg.norm(y0) ** 2
    noise_var = sig_power / (y0.size * 10.0 ** (snr_db / 10.0))
    noise = np.sqrt(noise_var / 2.0) * (
        rng.standard_normal(y0.shape) + 1j * rng.standard_normal(y0.shape)
    )
    return Observation(y=y0 + noise, snr_db=snr_db)


def nmse(h_hat: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    """Normalized mean squared error, returned as (linear, dB)."""
    ref = np.linalg.norm(h) ** 2
    if ref == 0:
        raise ValueError("reference channel has zero norm")
    linear = float(np.linalg.norm(h_hat - h) ** 2 / ref)
    db = 10.0 * np.log10(linear) if linear > 0 else -np.inf
    return linear, db


def generate_dataset(scenario: ScenarioConfig, n_samples: int) -> list[ChannelSample]:
    """Draw independent angular-domain samples with index-derived seeds.

    Sample i uses default_rng((scenario.seed, i)), so regeneration and
    parallelization by index are bitwise-identical to the serial order.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = []
    for i in range(n_samples):
        rng = np.random.default_rng((scenario.seed, i))
        h_s = generate_channel(scenario, rng)
        samples.append(ChannelSample(h_a=to_angular(h_s, scenario.geometry), scenario_label=scenario.label))
    return samples


def angular_power_profile(samples: list[ChannelSample] | np.ndarray) -> np.ndarray:
    """Mean power per angular bin, normalized to sum to one. Length N_BS."""
    if isinstance(samples, np.ndarray):
        stack = samples
    else:
        stack = np.stack([s.h_a for s in samples])
    profile = np.mean(np.abs(stack) ** 2, axis=(0, 1))
    return profile / profile.sum()


def profile_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two normalized angular profiles."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def resize_scenario(scenario: ScenarioConfig, **overrides) -> ScenarioConfig:
    """Copy a scenario with some fields replaced (seed, sizes, geometry, ...)."""
    return replace(scenario, **overrides)
