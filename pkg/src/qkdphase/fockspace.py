"""Partially phase-randomized coherent states in a truncated photon-number basis.

Single-mode states live on ``|0>, ..., |n_max>``.  Two-mode (time-bin) states
use the fast/slow product basis ``|M-m>_F |m>_S`` truncated by the *total*
photon number ``M <= n_max``, ordered by ``M`` and then by the slow-mode count
``m``.

Phase averaging enters every builder through :func:`gaussian_phase_factor`, so
the same code produces coherent (``sigma=0``), partially randomized and fully
randomized (``PhaseDistribution.uniform()``) states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import stats

__all__ = [
    "PhaseDistribution",
    "SingleMode",
    "TwoModeTimeBin",
    "FockOperator",
    "StateSpec",
    "gaussian_phase_factor",
    "log_factorials",
    "build_single_mode_state",
    "build_uniform_single_mode_state",
    "build_rho_Z",
    "build_rho_X",
    "coherent_ket",
    "two_mode_product_ket",
    "matrix_sqrt_psd",
    "uhlmann_fidelity",
]

EIG_CLAMP = 1e-10
HERMITIAN_ATOL = 1e-12


def wrap_phase(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2 * math.pi
    return wrapped


@dataclass(frozen=True)
class PhaseDistribution:
    """Gaussian law for the optical phase, centred on ``theta0`` with width ``sigma``.

    ``sigma = inf`` is the fully randomized (uniform) limit; use
    :meth:`uniform` to build it.
    """

    theta0: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "theta0", wrap_phase(float(self.theta0)))
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def uniform(cls, theta0: float = 0.0) -> "PhaseDistribution":
        return cls(theta0=theta0, sigma=math.inf)

    @property
    def is_uniform(self) -> bool:
        return math.isinf(self.sigma)


def gaussian_phase_factor(k: int, phase: PhaseDistribution) -> complex:
    """Characteristic function ``<exp(i k theta)>`` of the phase law."""
    if k == 0:
        return 1.0 + 0.0j
    if phase.is_uniform:
        return 0.0j
    return complex(np.exp(-0.5 * k * k * phase.sigma**2 + 1j * k * phase.theta0))


def _phase_factor_matrix(diff: np.ndarray, phase: PhaseDistribution) -> np.ndarray:
    # vectorized gaussian_phase_factor over an integer array of photon-number differences
    if phase.is_uniform:
        return (diff == 0).astype(complex)
    return np.exp(-0.5 * diff**2 * phase.sigma**2 + 1j * diff * phase.theta0)


@lru_cache(maxsize=None)
def _log_factorial_table(n: int) -> np.ndarray:
    table = np.zeros(n + 1)
    if n > 0:
        table[1:] = np.cumsum(np.log(np.arange(1, n + 1)))
    table.flags.writeable = False
    return table


def log_factorials(n: int) -> np.ndarray:
    """``log(k!)`` for ``k = 0..n`` as a cumulative sum (no overflow past 20!)."""
    return _log_factorial_table(int(n))


@dataclass(frozen=True)
class SingleMode:
    n_max: int

    @property
    def dim(self) -> int:
        return self.n_max + 1

    @property
    def labels(self) -> list[int]:
        return list(range(self.n_max + 1))


@dataclass(frozen=True)
class TwoModeTimeBin:
    """Fast/slow time-bin modes truncated at total photon number ``n_max_total``."""

    n_max_total: int

    @property
    def dim(self) -> int:
        return (self.n_max_total + 1) * (self.n_max_total + 2) // 2

    @property
    def labels(self) -> list[tuple[int, int]]:
        """``(fast, slow)`` photon numbers for each basis index."""
        return [(M - m, m) for M in range(self.n_max_total + 1) for m in range(M + 1)]

    def index(self, fast: int, slow: int) -> int:
        M = fast + slow
        if fast < 0 or slow < 0 or M > self.n_max_total:
            raise IndexError(f"|{fast}>_F|{slow}>_S outside truncation {self.n_max_total}")
        return M * (M + 1) // 2 + slow

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        labels = np.array(self.labels, dtype=int)
        return labels[:, 0], labels[:, 1]


Basis = Union[SingleMode, TwoModeTimeBin]


@dataclass(frozen=True, eq=False)
class FockOperator:
    """Hermitian operator on a truncated photon-number basis.

    ``tail_mass`` is the probability weight lost to truncation (zero for
    operators that are not density matrices).  Builders do not renormalize.
    """

    matrix: np.ndarray
    basis: Basis
    tail_mass: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"matrix shape {m.shape} does not match basis dim {self.basis.dim}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_hermitian(self, atol: float = HERMITIAN_ATOL) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, rtol=0, atol=atol))

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()


@dataclass(frozen=True)
class StateSpec:
    """A single-mode state: coherent amplitude, phase law and cutoff."""

    amplitude: float
    phase: PhaseDistribution = PhaseDistribution()
    n_max: int = 16

    @classmethod
    def from_mean_photon_number(cls, mean: float, phase: PhaseDistribution = PhaseDistribution(),
                                n_max: int = 16) -> "StateSpec":
        if mean < 0:
            raise ValueError(f"mean photon number must be >= 0, got {mean}")
        return cls(math.sqrt(mean), phase, n_max)

    @property
    def mean_photon_number(self) -> float:
        return self.amplitude**2


def _poisson_tail(mean: float, n_max: int) -> float:
    return float(stats.poisson.sf(n_max, mean)) if mean > 0 else 0.0


def _amplitude_vector(mean: float, n_max: int) -> np.ndarray:
    """``mean**(n/2) / sqrt(n!)`` for n = 0..n_max; ``0**0 == 1`` keeps the vacuum term."""
    n = np.arange(n_max + 1)
    return np.power(math.sqrt(mean), n) * np.exp(-0.5 * log_factorials(n_max))


def build_single_mode_state(spec: StateSpec) -> FockOperator:
    """Phase-averaged coherent state ``e^{-a^2} a^{m+n} <e^{i(m-n)theta}> / sqrt(m! n!)``."""
    if spec.amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {spec.amplitude}")
    if spec.n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {spec.n_max}")
    mean = spec.amplitude**2
    v = _amplitude_vector(mean, spec.n_max)
    n = np.arange(spec.n_max + 1)
    phase = _phase_factor_matrix(n[:, None] - n[None, :], spec.phase)
    rho = math.exp(-mean) * np.outer(v, v) * phase
    return FockOperator(rho, SingleMode(spec.n_max), _poisson_tail(mean, spec.n_max), "single-mode")


def build_uniform_single_mode_state(mean: float, n_max: int = 16) -> FockOperator:
    """Fully phase-randomized state: the diagonal Poisson mixture."""
    if mean < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mean}")
    p = stats.poisson.pmf(np.arange(n_max + 1), mean) if mean > 0 else np.eye(1, n_max + 1)[0]
    return FockOperator(np.diag(p), SingleMode(n_max), _poisson_tail(mean, n_max), "poisson")


def build_rho_Z(mu: float, phase: PhaseDistribution, n_max: int = 16) -> FockOperator:
    """Z-basis time-bin state: the pulse sits in the fast or the slow bin with equal weight."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    basis = TwoModeTimeBin(n_max)
    u = _amplitude_vector(mu, n_max)
    M = np.arange(n_max + 1)
    block = 0.5 * math.exp(-mu) * np.outer(u, u) * _phase_factor_matrix(M[:, None] - M[None, :], phase)
    fast_idx = np.array([basis.index(k, 0) for k in M])
    slow_idx = np.array([basis.index(0, k) for k in M])
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    rho[np.ix_(fast_idx, fast_idx)] += block
    rho[np.ix_(slow_idx, slow_idx)] += block
    return FockOperator(rho, basis, _poisson_tail(mu, n_max), "rho_Z")


def build_rho_X(mu: float, sigma: float, n_max: int = 16) -> FockOperator:
    """X-basis time-bin state: equal mixture of ``|a>|a>`` and ``|a>|-a>``, ``a^2 = mu/2``.

    The central phase is fixed to zero; pass ``sigma=math.inf`` for the
    uniform limit.
    """
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    basis = TwoModeTimeBin(n_max)
    fast, slow = basis.arrays()
    total = fast + slow
    lf = log_factorials(n_max)
    v = np.power(math.sqrt(mu / 2), total) * np.exp(-0.5 * (lf[fast] + lf[slow]))
    parity = 1 + (-1.0) ** (slow[:, None] - slow[None, :])
    phase = PhaseDistribution(0.0, sigma)
    decay = _phase_factor_matrix(total[:, None] - total[None, :], phase)
    rho = 0.5 * math.exp(-mu) * np.outer(v, v) * parity * decay
    return FockOperator(rho, basis, _poisson_tail(mu, n_max), "rho_X")


def coherent_ket(alpha: complex, n_max: int) -> np.ndarray:
    """Truncated coherent state vector (not renormalized)."""
    n = np.arange(n_max + 1)
    return np.exp(-abs(alpha) ** 2 / 2) * np.power(complex(alpha), n) * np.exp(-0.5 * log_factorials(n_max))


def two_mode_product_ket(fast: np.ndarray, slow: np.ndarray, basis: TwoModeTimeBin) -> np.ndarray:
    """Project ``fast (x) slow`` onto the total-number-truncated time-bin basis."""
    f, s = basis.arrays()
    return fast[f] * slow[s]


def _as_matrix(a) -> np.ndarray:
    return np.asarray(a.matrix if isinstance(a, FockOperator) else a)


def matrix_sqrt_psd(A, clamp: float = EIG_CLAMP):
    """Principal square root of a Hermitian PSD matrix via eigendecomposition.

    Eigenvalues down to ``-clamp * max(1, ||A||)`` are treated as rounding noise
    and set to zero, as are positive ones inside the eigensolver's round-off band.  Returns the same type as the input.
    """
    m = _as_matrix(A)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if not np.allclose(m, m.conj().T, rtol=0, atol=1e-10 * scale):
        raise ValueError("matrix is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    if w.size and w.min() < -clamp * scale:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    # eigenvalues inside the solver's round-off band are zero in exact arithmetic; leaving them
    # in would turn ~1e-17 noise into ~1e-9 after the square root
    floor = 8 * m.shape[0] * np.finfo(float).eps * float(np.abs(w).max(initial=0.0))
    w = np.where(w > floor, w, 0.0)
    root = (v * np.sqrt(w)) @ v.conj().T
    if isinstance(A, FockOperator):
        return FockOperator(root, A.basis, 0.0, f"sqrt({A.label})")
    return root


def uhlmann_fidelity(rho, tau) -> float:
    """Root fidelity ``Tr sqrt(sqrt(rho) tau sqrt(rho))``.

    Evaluated as the nuclear norm of ``sqrt(rho) sqrt(tau)``, which is exactly
    symmetric in its arguments.
    """
    if isinstance(rho, FockOperator) and isinstance(tau, FockOperator) and rho.basis != tau.basis:
        raise ValueError(f"basis mismatch: {rho.basis} vs {tau.basis}")
    a, b = _as_matrix(rho), _as_matrix(tau)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    overlap = matrix_sqrt_psd(a) @ matrix_sqrt_psd(b)
    return float(np.linalg.svd(overlap, compute_uv=False).sum())
