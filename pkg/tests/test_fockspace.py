import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkdphase.fockspace import (
    FockOperator,
    PhaseDistribution,
    SingleMode,
    StateSpec,
    TwoModeTimeBin,
    build_rho_X,
    build_rho_Z,
    build_single_mode_state,
    build_uniform_single_mode_state,
    gaussian_phase_factor,
    log_factorials,
    matrix_sqrt_psd,
    uhlmann_fidelity,
    wrap_phase,
)

import _oracles as orc


def single(a2, theta0=0.0, sigma=0.0, n_max=16):
    return build_single_mode_state(StateSpec(math.sqrt(a2), PhaseDistribution(theta0, sigma), n_max))


def random_density(rng, d, rank=None):
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# --- phase distribution -----------------------------------------------------------------------

def test_phase_distribution_wraps_and_validates():
    assert PhaseDistribution(3 * math.pi).theta0 == pytest.approx(math.pi)
    assert PhaseDistribution(-math.pi).theta0 == pytest.approx(math.pi)
    assert PhaseDistribution.uniform().is_uniform
    with pytest.raises(ValueError):
        PhaseDistribution(0.0, -0.1)


@given(st.floats(-50, 50))
def test_wrap_phase_range(theta):
    w = wrap_phase(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)


def test_gaussian_factor_examples():
    assert gaussian_phase_factor(0, PhaseDistribution(1.3, 2.0)) == 1
    assert gaussian_phase_factor(1, PhaseDistribution(0, 2.9)).real == pytest.approx(0.0149, abs=5e-5)
    assert gaussian_phase_factor(2, PhaseDistribution(0, 1.0)).real == pytest.approx(math.exp(-2), rel=1e-12)
    assert gaussian_phase_factor(3, PhaseDistribution.uniform()) == 0
    assert gaussian_phase_factor(0, PhaseDistribution.uniform()) == 1


@pytest.mark.parametrize("k,theta0,sigma", [(2, 0.0, 1.0), (1, 0.7, 0.4), (3, -2.0, 0.8)])
def test_gaussian_factor_matches_quadrature(k, theta0, sigma):
    oracle = orc.gaussian_average(lambda t: np.exp(1j * k * t), theta0, sigma)
    assert abs(gaussian_phase_factor(k, PhaseDistribution(theta0, sigma)) - oracle) < 1e-12


def test_log_factorials_match_lgamma():
    table = log_factorials(40)
    assert np.allclose(table, [math.lgamma(n + 1) for n in range(41)], rtol=1e-14, atol=0)
    with pytest.raises(ValueError):
        table[0] = 1.0


# --- bases ----------------------------------------------------------------------------------

def test_two_mode_basis_layout():
    b = TwoModeTimeBin(16)
    assert b.dim == 153
    assert b.index(0, 0) == 0
    assert b.index(1, 0) == 1 and b.index(0, 1) == 2
    assert all(b.index(f, s) == i for i, (f, s) in enumerate(b.labels))
    with pytest.raises(IndexError):
        b.index(10, 10)


# --- single-mode builder --------------------------------------------------------------------

def test_vacuum():
    rho = single(0.0).matrix
    expected = np.zeros_like(rho)
    expected[0, 0] = 1
    assert np.array_equal(rho, expected)


def test_uniform_phase_is_poisson_diagonal():
    rho = build_single_mode_state(StateSpec(0.5, PhaseDistribution.uniform()))
    assert np.allclose(rho.matrix, np.diag(orc.poisson_pmf(0.25, 16)), atol=1e-16)
    assert np.allclose(rho.matrix, build_uniform_single_mode_state(0.25).matrix, atol=1e-16)


def test_coherent_is_rank_one():
    rho = single(0.25)
    w = rho.eigvalsh()
    assert w[-1] >= 0.999 * rho.trace()
    assert np.all(w > -1e-10)


@pytest.mark.parametrize("a2,theta0,sigma", [(0.25, 0.0, 0.5), (0.25, math.pi, 1.3), (0.05, 0.4, 2.0)])
def test_single_mode_matches_quadrature(a2, theta0, sigma):
    oracle = orc.single_mode_by_quadrature(math.sqrt(a2), theta0, sigma, 16)
    assert np.abs(single(a2, theta0, sigma).matrix - oracle).max() < 1e-12


@given(st.floats(0, 1.0), st.floats(-math.pi, math.pi), st.floats(0, 5))
@settings(max_examples=40)
def test_single_mode_invariants(a2, theta0, sigma):
    rho = single(a2, theta0, sigma)
    assert rho.is_hermitian()
    assert rho.eigvalsh().min() > -1e-10
    assert abs(rho.trace() - (1 - rho.tail_mass)) < 1e-12


def test_single_mode_rejects_bad_input():
    with pytest.raises(ValueError):
        build_single_mode_state(StateSpec(-0.1))
    with pytest.raises(ValueError):
        build_single_mode_state(StateSpec(0.1, n_max=0))


def test_off_diagonals_decay_with_sigma():
    mags = [abs(single(0.25, 0.0, s).matrix[1, 3]) for s in (0.0, 0.5, 1.0, 2.0, 3.0)]
    assert all(a > b for a, b in zip(mags, mags[1:]))


def test_large_sigma_reaches_uniform_limit():
    diff = single(0.25, 0.3, 10.0).matrix - build_uniform_single_mode_state(0.25).matrix
    assert np.abs(diff).max() < 1e-10


# --- time-bin builders ----------------------------------------------------------------------

def test_two_mode_vacuum():
    for rho in (build_rho_Z(0.0, PhaseDistribution()), build_rho_X(0.0, 0.0)):
        assert rho.matrix[0, 0] == 1
        assert np.abs(rho.matrix).sum() == 1


@pytest.mark.parametrize("mu,theta0,sigma", [(0.09, 0.0, 0.0), (0.09, math.pi, 0.7), (0.3, 1.0, 1.5)])
def test_rho_z_matches_quadrature(mu, theta0, sigma):
    oracle = orc.rho_z_by_quadrature(mu, theta0, sigma, 10)
    assert np.abs(build_rho_Z(mu, PhaseDistribution(theta0, sigma), 10).matrix - oracle).max() < 1e-12


@pytest.mark.parametrize("mu,sigma", [(0.09, 0.0), (0.09, 0.8), (0.5, 2.0)])
def test_rho_x_matches_quadrature(mu, sigma):
    oracle = orc.rho_x_by_quadrature(mu, sigma, 10)
    assert np.abs(build_rho_X(mu, sigma, 10).matrix - oracle).max() < 1e-12


def test_coherent_time_bin_states_have_unit_fidelity_with_outer_products():
    mu, n = 0.09, 16
    for rho, oracle in ((build_rho_Z(mu, PhaseDistribution(), n), orc.rho_z_by_quadrature(mu, 0.0, 0.0, n)),
                        (build_rho_X(mu, 0.0, n), orc.rho_x_by_quadrature(mu, 0.0, n))):
        assert uhlmann_fidelity(rho.matrix, oracle) == pytest.approx(rho.trace(), abs=1e-10)


def test_rho_z_large_sigma_has_no_coherences():
    rho = build_rho_Z(0.09, PhaseDistribution(0.0, 8.0)).matrix
    assert np.abs(rho - np.diag(np.diag(rho))).max() < 1e-10


def test_rho_x_uniform_is_block_diagonal_in_total_number():
    basis = TwoModeTimeBin(8)
    fast, slow = basis.arrays()
    total = fast + slow
    rho = build_rho_X(0.09, math.inf, 8).matrix
    assert np.abs(rho[total[:, None] != total[None, :]]).max() == 0
    # each total-number block is Poisson weight times the X-prepared number-state mixture
    for m in range(4):
        block = rho[np.ix_(total == m, total == m)]
        assert np.trace(block).real == pytest.approx(orc.poisson_pmf(0.09, 8)[m], rel=1e-12)


@pytest.mark.parametrize("builder", [
    lambda: build_rho_Z(0.3, PhaseDistribution(1.0, 0.9)),
    lambda: build_rho_X(0.3, 0.9),
    lambda: build_rho_X(0.5, math.inf),
])
def test_time_bin_invariants(builder):
    rho = builder()
    assert rho.dim == 153
    assert rho.is_hermitian()
    assert rho.eigvalsh().min() > -1e-10
    assert abs(rho.trace() - (1 - rho.tail_mass)) < 1e-12


def test_builders_reject_negative_mu():
    with pytest.raises(ValueError):
        build_rho_Z(-0.1, PhaseDistribution())
    with pytest.raises(ValueError):
        build_rho_X(-0.1, 0.0)


# --- matrix square root and fidelity ------------------------------------------------------

def test_matrix_sqrt_examples():
    assert np.allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3))
    assert np.allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    rho = single(0.25, 0.0, 1.0)
    root = matrix_sqrt_psd(rho)
    assert isinstance(root, FockOperator) and root.basis == SingleMode(16)


def test_matrix_sqrt_random_psd():
    rng = np.random.default_rng(5)
    a = random_density(rng, 50, 30) * 50
    b = matrix_sqrt_psd(a)
    assert np.linalg.norm(b @ b - a) / np.linalg.norm(a) < 1e-9
    assert np.allclose(b, b.conj().T, atol=1e-12)


def test_matrix_sqrt_rejects_bad_input():
    with pytest.raises(ValueError):
        matrix_sqrt_psd(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        matrix_sqrt_psd(np.diag([1.0, -0.5]))
    with pytest.raises(ValueError):
        matrix_sqrt_psd(np.ones((2, 3)))


def test_fidelity_with_itself_is_trace():
    rho = build_rho_X(0.09, 1.2)
    assert uhlmann_fidelity(rho, rho) == pytest.approx(rho.trace(), abs=1e-10)


def test_fidelity_diagonal_is_bhattacharyya():
    p, q = orc.poisson_pmf(0.25, 16), orc.poisson_pmf(0.05, 16)
    assert uhlmann_fidelity(np.diag(p), np.diag(q)) == pytest.approx(orc.bhattacharyya(p, q), abs=1e-12)


def test_fidelity_pure_coherent_states():
    a1, a2 = 0.5, math.sqrt(0.05)
    rho = single(a1**2, math.pi, 0.0)
    tau = single(a2**2, 0.0, 0.0)
    exact = math.exp(-(a1**2 + a2**2) / 2 - a1 * a2)
    # truncation removes at most the Poisson tails from each ket
    norm = math.sqrt(rho.trace() * tau.trace())
    assert uhlmann_fidelity(rho, tau) == pytest.approx(exact * norm, abs=1e-6)


def test_fidelity_errors():
    with pytest.raises(ValueError):
        uhlmann_fidelity(single(0.1), build_rho_Z(0.1, PhaseDistribution()))
    with pytest.raises(ValueError):
        uhlmann_fidelity(np.eye(2) / 2, np.eye(3) / 3)


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
@settings(max_examples=40)
def test_fidelity_properties(seed, d):
    rng = np.random.default_rng(seed)
    a, b = random_density(rng, d), random_density(rng, d, rank=int(rng.integers(1, d + 1)))
    f = uhlmann_fidelity(a, b)
    assert 0 <= f <= 1 + 1e-9
    assert abs(f - uhlmann_fidelity(b, a)) < 1e-8
    assert abs(f - orc.fidelity_via_eigs(a, b)) < 1e-7
    # photon-number phase rotation is a unitary applied to both states
    u = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi) * np.arange(d)))
    assert abs(f - uhlmann_fidelity(u @ a @ u.conj().T, u @ b @ u.conj().T)) < 1e-9
    assert f < 1 - 1e-6 or np.allclose(a, b, atol=1e-3)


@pytest.mark.parametrize("mu", [0.01, 0.09, 0.5])
def test_truncation_convergence_of_fidelity(mu):
    for sigma in (0.0, 1.0, 3.0, math.inf):
        f8 = uhlmann_fidelity(build_rho_X(mu, sigma, 8), build_rho_Z(mu, PhaseDistribution(math.pi, sigma), 8))
        f16 = uhlmann_fidelity(build_rho_X(mu, sigma, 16), build_rho_Z(mu, PhaseDistribution(math.pi, sigma), 16))
        assert abs(f8 - f16) / f16 < 1e-3
