"""Security metrics for partially phase-randomized sources and the visibility targets they imply."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .fockspace import (
    PhaseDistribution,
    StateSpec,
    build_rho_X,
    build_rho_Z,
    build_single_mode_state,
    uhlmann_fidelity,
)
from .fringe import sigma_to_visibility

DEFAULT_N_MAX = 16
DEFAULT_REL_TOL = 1e-2
# metrics are probabilities of order 1; differences below this are eigensolver round-off
ROUNDOFF_ATOL = 1e-13


def default_sigma_grid(stop: float = 8.0, step: float = 0.1) -> np.ndarray:
    """0, 0.1, ..., 8.0 rounded to the step so grid values print cleanly."""
    n = int(round(stop / step))
    return np.round(np.arange(n + 1) * step, 10)


class Metric(str, Enum):
    COIN_IMBALANCE = "coin_imbalance"
    DECOY_DISTINGUISHABILITY = "decoy_distinguishability"
    DISCRIMINATION_PC = "discrimination_pc"


@dataclass(frozen=True)
class CoinImbalanceResult:
    delta: float
    mu: float
    theta0: float
    sigma: float
    n_max: int


class ConvergenceError(RuntimeError):
    """No grid point satisfies the relative-error criterion."""


@dataclass(frozen=True)
class TargetVisibility:
    metric: Metric
    params: Mapping[str, float]
    sigma_star: float
    visibility_star: float
    rel_tol: float = DEFAULT_REL_TOL
    asymptote: float = float("nan")
    sigmas: tuple = field(default=(), repr=False)
    values: tuple = field(default=(), repr=False)
    rel_errors: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "params": dict(self.params),
            "sigma_star": self.sigma_star,
            "visibility_star": self.visibility_star,
            "rel_tol": self.rel_tol,
            "asymptote": self.asymptote,
        }


def coin_imbalance(mu: float, theta0: float = 0.0, sigma: float = 0.0,
                   n_max: int = DEFAULT_N_MAX) -> CoinImbalanceResult:
    """Quantum-coin imbalance ``(1 - F(rho_X, rho_Z)) / 2``.

    ``sigma=math.inf`` evaluates the fully phase-randomized states directly.
    """
    phase = PhaseDistribution(theta0, sigma)
    rho_x = build_rho_X(mu, phase.sigma, n_max)
    rho_z = build_rho_Z(mu, phase, n_max)
    delta = (1.0 - uhlmann_fidelity(rho_x, rho_z)) / 2
    return CoinImbalanceResult(max(delta, 0.0), mu, phase.theta0, phase.sigma, n_max)


def loss_adjusted_imbalance(delta: float, eta: float, mu: float) -> float:
    """Imbalance rescaled for an eavesdropper who exploits channel loss: ``delta / (eta mu)``."""
    if not 0 < eta <= 1:
        raise ValueError(f"transmittance eta must be in (0, 1], got {eta}")
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    return delta / (eta * mu)


def signal_decoy_states(mu: float, nu: float, theta0: float, sigma: float,
                        n_max: int = DEFAULT_N_MAX):
    """Fast-component states of signal (``a1^2 = mu/2``) and decoy (``a2^2 = nu/2``).

    The central phase ``theta0`` is carried by the signal only.
    """
    if mu < 0 or nu < 0:
        raise ValueError(f"mean photon numbers must be >= 0, got mu={mu}, nu={nu}")
    rho1 = build_single_mode_state(StateSpec(math.sqrt(mu / 2), PhaseDistribution(theta0, sigma), n_max))
    rho2 = build_single_mode_state(StateSpec(math.sqrt(nu / 2), PhaseDistribution(0.0, sigma), n_max))
    return rho1, rho2


def decoy_distinguishability(mu: float, nu: float, theta0: float = math.pi, sigma: float = 0.0,
                             n_max: int = DEFAULT_N_MAX) -> float:
    """``(1 - F(rho1, rho2)) / 2`` between signal and decoy pulses."""
    rho1, rho2 = signal_decoy_states(mu, nu, theta0, sigma, n_max)
    return max((1.0 - uhlmann_fidelity(rho1, rho2)) / 2, 0.0)


def relative_error(value: float, asymptote: float) -> float:
    """``|value - asymptote| / asymptote``, zero when the two agree to round-off."""
    if abs(value - asymptote) <= ROUNDOFF_ATOL:
        return 0.0
    if asymptote == 0:
        return math.inf
    return abs(value - asymptote) / abs(asymptote)


def find_convergence_sigma(metric: Callable[[float], float], rel_tol: float = DEFAULT_REL_TOL,
                           sigma_grid: Optional[Sequence[float]] = None,
                           asymptote: Optional[float] = None,
                           kind: Metric = Metric.COIN_IMBALANCE,
                           params: Optional[Mapping[str, float]] = None) -> TargetVisibility:
    """Smallest grid sigma from which the metric stays within ``rel_tol`` of its asymptote.

    The asymptote defaults to ``metric(inf)`` (the uniform-phase states).  The
    grid is scanned from the top down and the scan stops at the first point
    that violates the tolerance, so the result is also the first point of the
    converged tail when the metric is not monotone.
    """
    grid = np.asarray(default_sigma_grid() if sigma_grid is None else sigma_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("sigma_grid must be a non-empty increasing sequence")
    if asymptote is None:
        asymptote = metric(math.inf)
    sigmas, values, errors = [], [], []
    star = None
    for s in grid[::-1]:
        value = metric(float(s))
        err = relative_error(value, asymptote)
        sigmas.append(float(s))
        values.append(value)
        errors.append(err)
        if err > rel_tol:
            break
        star = float(s)
    if star is None:
        raise ConvergenceError(
            f"metric never within rel_tol={rel_tol} of asymptote {asymptote:.6g} on the grid "
            f"(relative error {errors[0]:.3g} at sigma={sigmas[0]})")
    return TargetVisibility(kind, dict(params or {}), star, sigma_to_visibility(star), rel_tol, asymptote,
                            tuple(sigmas[::-1]), tuple(values[::-1]), tuple(errors[::-1]))


def coin_imbalance_target(mu: float, theta0: float, n_max: int = DEFAULT_N_MAX,
                          rel_tol: float = DEFAULT_REL_TOL,
                          sigma_grid: Optional[Sequence[float]] = None) -> TargetVisibility:
    return find_convergence_sigma(
        lambda s: coin_imbalance(mu, theta0, s, n_max).delta, rel_tol, sigma_grid,
        kind=Metric.COIN_IMBALANCE, params={"mu": mu, "theta0": theta0, "n_max": n_max})


def decoy_target(mu: float, nu: float, theta0: float = math.pi, n_max: int = DEFAULT_N_MAX,
                 rel_tol: float = DEFAULT_REL_TOL,
                 sigma_grid: Optional[Sequence[float]] = None) -> TargetVisibility:
    return find_convergence_sigma(
        lambda s: decoy_distinguishability(mu, nu, theta0, s, n_max), rel_tol, sigma_grid,
        kind=Metric.DECOY_DISTINGUISHABILITY,
        params={"mu": mu, "nu": nu, "theta0": theta0, "n_max": n_max})


@lru_cache(maxsize=64)
def _cached_coin_targets(mu: float, n_max: int, rel_tol: float) -> tuple:
    return tuple(coin_imbalance_target(mu, th, n_max, rel_tol) for th in (0.0, math.pi))


@lru_cache(maxsize=64)
def _cached_decoy_target(mu: float, nu: float, n_max: int, rel_tol: float) -> TargetVisibility:
    return decoy_target(mu, nu, math.pi, n_max, rel_tol)


def coin_imbalance_visibility_target(mu: float, n_max: int = DEFAULT_N_MAX,
                                     rel_tol: float = DEFAULT_REL_TOL) -> TargetVisibility:
    """Strictest coin-imbalance target over central phases 0 and pi (largest sigma*)."""
    return max(_cached_coin_targets(float(mu), int(n_max), float(rel_tol)), key=lambda t: t.sigma_star)


def decoy_visibility_target(mu: float, nu: float, n_max: int = DEFAULT_N_MAX,
                            rel_tol: float = DEFAULT_REL_TOL) -> TargetVisibility:
    """Signal/decoy target at the most distinguishable central phase (pi)."""
    return _cached_decoy_target(float(mu), float(nu), int(n_max), float(rel_tol))


def sweep(metric: Callable[[float], float], sigmas: Iterable[float]) -> list[tuple[float, float]]:
    return [(float(s), metric(float(s))) for s in sigmas]
