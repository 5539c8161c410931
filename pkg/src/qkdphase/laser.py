"""Gain-switched laser drive, photon-lifetime estimates and simulated AMZI fringes.

Units: currents in mA, frequency in GHz, times in ps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fringe import FringeDataset, Normalization, snr_noise_std

CONFIG_KEYS = ("i_pp_ma", "i_dc_ma", "i_th_ma", "f_ghz", "phi_ld_rad")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DriveConfig:
    """Sinusoidal drive ``I_pp/2 cos(2 pi f t + phi_ld) + I_dc``."""

    i_pp: float
    i_dc: float
    i_th: float
    f: float
    phi_ld: float = 0.0

    def __post_init__(self):
        if not self.i_pp > 0:
            raise ConfigError(f"i_pp must be > 0, got {self.i_pp}")
        if not self.i_th > 0:
            raise ConfigError(f"i_th must be > 0, got {self.i_th}")
        if not self.f > 0:
            raise ConfigError(f"f must be > 0, got {self.f}")

    @property
    def period_ps(self) -> float:
        return 1e3 / self.f

    @property
    def i_min(self) -> float:
        return self.i_dc - self.i_pp / 2

    def current(self, t_ps):
        """Total drive current at time ``t_ps``."""
        t = np.asarray(t_ps, dtype=float)
        return self.i_pp / 2 * np.cos(2 * np.pi * self.f * 1e-3 * t + self.phi_ld) + self.i_dc

    @classmethod
    def at_excitation(cls, lam: float, i_pp: float, i_th: float, f: float, phi_ld: float = 0.0) -> "DriveConfig":
        """Drive whose normalized minimum excitation equals ``lam``."""
        return cls(i_pp, i_th * (1 + lam) + i_pp / 2, i_th, f, phi_ld)

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, object]) -> "DriveConfig":
        unknown = sorted(set(cfg) - set(CONFIG_KEYS))
        missing = [k for k in CONFIG_KEYS[:4] if k not in cfg]
        if unknown or missing:
            parts = []
            if missing:
                parts.append("missing keys: " + ", ".join(missing))
            if unknown:
                parts.append("unknown keys: " + ", ".join(unknown))
            raise ConfigError("; ".join(parts))
        bad = [k for k in cfg if isinstance(cfg[k], bool) or not isinstance(cfg[k], (int, float))]
        if bad:
            raise ConfigError("non-numeric values for keys: " + ", ".join(sorted(bad)))
        return cls(float(cfg["i_pp_ma"]), float(cfg["i_dc_ma"]), float(cfg["i_th_ma"]),
                   float(cfg["f_ghz"]), float(cfg.get("phi_ld_rad", 0.0)))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DriveConfig":
        """Load from a JSON object or a flat TOML table."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
            try:
                cfg = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        else:
            try:
                cfg = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: expected a key-value table")
        return cls.from_mapping(cfg)

    def to_mapping(self) -> dict:
        return dict(zip(CONFIG_KEYS, (self.i_pp, self.i_dc, self.i_th, self.f, self.phi_ld)))


# Drive used in the reference experiment: 92.3 mA nominal swing, -1 dB at 10 GHz.
REFERENCE_I_PP_NOMINAL = 92.3
REFERENCE_RESPONSE_DB = -1.0
REFERENCE_I_PP = 73.3
REFERENCE_I_TH = 9.5
REFERENCE_F_GHZ = 10.0


def net_current(nominal_i_pp: float, response_db: float) -> float:
    """Current actually reaching the active layer given the modulation response in dB."""
    if not nominal_i_pp > 0:
        raise ValueError(f"nominal current must be > 0, got {nominal_i_pp}")
    return nominal_i_pp * 10 ** (response_db / 10)


def normalized_min_excitation(drive: DriveConfig) -> float:
    """``(I_min - I_th) / I_th`` at the bottom of the sinusoid."""
    return (drive.i_min - drive.i_th) / drive.i_th


def turn_off_duration(drive: DriveConfig) -> float:
    """Time per period (ps) during which the drive current is below threshold."""
    x = (drive.i_th - drive.i_dc) / (drive.i_pp / 2)
    if x <= -1:
        return 0.0
    if x >= 1:
        return drive.period_ps
    return (2 * math.pi - 2 * math.acos(x)) / (2 * math.pi * drive.f) * 1e3


def effective_photon_lifetime(lambda_norm: float, tau_ph: float) -> float:
    """Gain-modified photon lifetime ``-tau_ph / lambda``, in ps.

    Returns ``math.inf`` for ``lambda >= 0``, where net gain stops the decay.
    """
    if not tau_ph > 0:
        raise ValueError(f"tau_ph must be > 0, got {tau_ph}")
    if lambda_norm >= 0:
        return math.inf
    return -tau_ph / lambda_norm


def lifetime_within_turn_off(drive: DriveConfig, tau_ph: float) -> bool:
    """Operating guide: the effective photon lifetime must be shorter than the turn-off duration."""
    return effective_photon_lifetime(normalized_min_excitation(drive), tau_ph) < turn_off_duration(drive)


@dataclass(frozen=True)
class LaserDynamicsParams:
    """Linearized photon-density decay: net rate ``modal_gain_proxy * lambda / tau_ph``."""

    tau_ph: float = 3.0
    n_sp: float = 0.0
    modal_gain_proxy: float = 1.0

    def __post_init__(self):
        if not self.tau_ph > 0:
            raise ValueError(f"tau_ph must be > 0, got {self.tau_ph}")
        if self.n_sp < 0:
            raise ValueError(f"n_sp must be >= 0, got {self.n_sp}")


def decay_photon_density(s0: float, lambda_norm: float, params: LaserDynamicsParams, t):
    """Closed-form solution of ``dS/dt = (lambda / tau_ph) S + n_sp`` from ``S(0) = s0``."""
    if s0 < 0:
        raise ValueError(f"s0 must be >= 0, got {s0}")
    t = np.asarray(t, dtype=float)
    rate = params.modal_gain_proxy * lambda_norm / params.tau_ph
    x = rate * t
    # expm1(x)/x -> 1 as x -> 0 keeps the rate = 0 case on the same formula
    with np.errstate(invalid="ignore", divide="ignore"):
        growth = np.where(x == 0, 1.0, np.expm1(x) / np.where(x == 0, 1.0, x))
    s = s0 * np.exp(x) + params.n_sp * t * growth
    s = np.maximum(s, 0.0)
    return float(s) if s.ndim == 0 else s


@dataclass(frozen=True)
class GaussianWalk:
    """Pulse-to-pulse phase increments drawn from ``Normal(theta0, sigma^2)``."""

    sigma: float
    theta0: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class UniformRandom:
    """Independent uniform phase per pulse (fully randomized source)."""


PhaseModel = Union[GaussianWalk, UniformRandom]


@dataclass(frozen=True, eq=False)
class PulseTrain:
    phases: np.ndarray
    model: PhaseModel
    seed: int

    def __len__(self):
        return self.phases.size

    def increments(self) -> np.ndarray:
        """Adjacent-pulse phase differences wrapped to (-pi, pi]."""
        return _wrap(np.diff(self.phases))


def _wrap(theta):
    w = np.remainder(np.asarray(theta) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def simulate_phase_train(model: PhaseModel, length: int, seed: int) -> PulseTrain:
    """Per-pulse optical phases wrapped to (-pi, pi].

    Uses numpy's PCG64 generator seeded with ``seed``; output is reproducible
    bit-for-bit for a given (model, length, seed).
    """
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    rng = np.random.default_rng(seed)
    if isinstance(model, GaussianWalk):
        start = rng.uniform(-np.pi, np.pi)
        steps = rng.normal(model.theta0, model.sigma, size=length - 1)
        phases = _wrap(start + np.concatenate([[0.0], np.cumsum(steps)]))
    elif isinstance(model, UniformRandom):
        phases = _wrap(rng.uniform(-np.pi, np.pi, size=length))
    else:
        raise TypeError(f"unknown phase model {model!r}")
    phases.flags.writeable = False
    return PulseTrain(phases, model, seed)


def default_phase_points(n: int = 41) -> np.ndarray:
    """Phase-modulator settings evenly covering one fringe period."""
    return np.linspace(0.0, 2 * math.pi, n, endpoint=False)


def simulate_amzi_fringe(train: PulseTrain, phase_points: Sequence[float], accumulations: int = 256,
                         snr_db: float | None = None, seed: int = 0,
                         instrument_visibility: float = 1.0, amplitude_ratio: float = 1.0) -> FringeDataset:
    """Accumulated output of a one-period-delay interferometer.

    Each phase setting averages ``1/2 (1 + V cos(delta_n + phi))`` over its own
    window of ``accumulations`` adjacent-pulse pairs; windows advance along the
    train and wrap around when it is too short, so a train of
    ``accumulations + 1`` pulses reuses one window for every setting.  ``V``
    combines the instrument visibility and the amplitude imbalance
    ``2r / (1 + r^2)``.  Additive Gaussian noise is set by ``snr_db`` relative
    to the mean intensity 0.5 (see :func:`snr_noise_std`); ``None`` disables it.
    The trace is finally rescaled so its average is 0.5, as done for measured
    traces.
    """
    if accumulations < 1:
        raise ValueError(f"accumulations must be >= 1, got {accumulations}")
    if len(train) < accumulations + 1:
        raise ValueError(f"train has {len(train)} pulses; need at least {accumulations + 1}")
    if not 0 <= instrument_visibility <= 1:
        raise ValueError(f"instrument_visibility must be in [0, 1], got {instrument_visibility}")
    if amplitude_ratio <= 0:
        raise ValueError(f"amplitude_ratio must be > 0, got {amplitude_ratio}")
    phi = np.asarray(phase_points, dtype=float)
    delta = np.diff(train.phases)
    n_pairs = delta.size
    idx = (np.arange(phi.size)[:, None] * accumulations + np.arange(accumulations)[None, :]) % n_pairs
    window = delta[idx]
    contrast = instrument_visibility * 2 * amplitude_ratio / (1 + amplitude_ratio**2)
    intensity = 0.5 * (1 + contrast * np.cos(window + phi[:, None]).mean(axis=1))
    if snr_db is not None and math.isfinite(snr_db):
        rng = np.random.default_rng([seed, 1])
        intensity = intensity + rng.normal(0.0, snr_noise_std(snr_db), size=phi.size)
    mean = intensity.mean()
    if mean > 0:
        intensity = intensity * (0.5 / mean)
    return FringeDataset(phi, intensity, None, Normalization.MEAN_HALF)


def derived_quantities(drive: DriveConfig, tau_ph: float = 3.0) -> dict:
    lam = normalized_min_excitation(drive)
    tau_eff = effective_photon_lifetime(lam, tau_ph)
    return {
        "drive": drive.to_mapping(),
        "lambda": lam,
        "turn_off_ps": turn_off_duration(drive),
        "tau_ph_ps": tau_ph,
        "tau_eff_ps": None if math.isinf(tau_eff) else tau_eff,
        "lifetime_within_turn_off": lifetime_within_turn_off(drive, tau_ph),
    }


def load_reference_visibilities() -> list[dict]:
    """Measured (lambda, visibility) pairs quoted for the reference DFB laser."""
    import csv
    from importlib import resources

    text = resources.files("qkdphase").joinpath("data/measured_visibility.csv").read_text(encoding="utf-8")
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    return [{"lambda": float(r["lambda"]), "visibility": float(r["visibility"]), "note": r["note"]}
            for r in rows]
