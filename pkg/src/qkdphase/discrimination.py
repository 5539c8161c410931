"""Three-outcome discrimination of two mixed states at a fixed inconclusive rate.

The optimizer maximizes ``P_C = p Tr(rho1 Pi1) + (1-p) Tr(rho2 Pi2)`` over
POVMs with ``Tr(rho Pi0) = p_inc``.  The default solver follows the central
path of the dual problem

    minimize  Tr Y - lam * p_inc
    s.t.      Y >= lam * rho,  Y >= p * rho1,  Y >= (1-p) * rho2

with a log-barrier Newton method.  Along that path ``Pi_j = S_j^-1 / t``
(``S_j`` the dual slacks) is an exactly feasible primal POVM and the duality
gap is ``3 r / t``, so every result carries a certified upper bound.  The
fixed-point iteration of Fiurasek and Jezek is available as a slower
cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fockspace import FockOperator

COMPLETENESS_ATOL = 1e-8
PSD_ATOL = 1e-8
P_INC_ATOL = 1e-6
SUPPORT_RTOL = 1e-13
CERTIFIED_GAP_ATOL = 1e-6
METHODS = ("barrier", "fiurasek-jezek")


class DiscriminationError(ValueError):
    pass


def _herm(a: np.ndarray) -> np.ndarray:
    return (a + a.conj().T) / 2


def _as_matrix(op) -> np.ndarray:
    return np.asarray(op.matrix if isinstance(op, FockOperator) else op, dtype=complex)


@dataclass(frozen=True, eq=False)
class Povm:
    """Measurement ``{Pi0 (inconclusive), Pi1 (rho1), Pi2 (rho2)}``."""

    elements: tuple

    def __post_init__(self):
        if len(self.elements) != 3:
            raise DiscriminationError(f"a POVM needs three elements, got {len(self.elements)}")
        mats = [_as_matrix(e) for e in self.elements]
        d = mats[0].shape[0]
        if any(m.shape != (d, d) for m in mats):
            raise DiscriminationError("POVM elements must be square matrices of equal size")
        bases = {e.basis for e in self.elements if isinstance(e, FockOperator)}
        if len(bases) > 1:
            raise DiscriminationError("POVM elements live on different bases")
        for j, m in enumerate(mats):
            if np.abs(m - m.conj().T).max() > COMPLETENESS_ATOL:
                raise DiscriminationError(f"Pi{j} is not Hermitian")
            lo = np.linalg.eigvalsh(_herm(m)).min()
            if lo < -PSD_ATOL:
                raise DiscriminationError(f"Pi{j} has eigenvalue {lo:.3g} < -{PSD_ATOL}")
        dev = np.abs(sum(mats) - np.eye(d)).max()
        if dev > COMPLETENESS_ATOL:
            raise DiscriminationError(f"elements do not sum to identity (max deviation {dev:.3g})")
        object.__setattr__(self, "elements", tuple(self.elements))

    @property
    def matrices(self) -> list[np.ndarray]:
        return [_as_matrix(e) for e in self.elements]

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0]

    def completeness_error(self) -> float:
        return float(np.abs(sum(self.matrices) - np.eye(self.dim)).max())

    def min_eigenvalue(self) -> float:
        return float(min(np.linalg.eigvalsh(_herm(m)).min() for m in self.matrices))

    def off_diagonal_weight(self) -> float:
        """Largest ratio of off-diagonal to total Frobenius norm over the elements."""
        out = 0.0
        for m in self.matrices:
            total = np.linalg.norm(m)
            if total > 0:
                out = max(out, float(np.linalg.norm(m - np.diag(np.diag(m))) / total))
        return out


@dataclass(frozen=True, eq=False)
class DiscriminationResult:
    povm: Povm
    p_correct: float
    p_inc_achieved: float
    p_inc_requested: float
    prior_p: float
    converged: bool
    iterations: int
    upper_bound: float = math.nan
    multiplier: float = math.nan
    method: str = "barrier"

    @property
    def p_correct_conclusive(self) -> float:
        """``P_C`` conditioned on a conclusive outcome."""
        rest = 1.0 - self.p_inc_achieved
        return self.p_correct / rest if rest > 0 else math.nan

    @property
    def gap(self) -> float:
        return self.upper_bound - self.p_correct

    def to_dict(self) -> dict:
        return {
            "p_correct": self.p_correct,
            "p_correct_conclusive": self.p_correct_conclusive,
            "p_inc_achieved": self.p_inc_achieved,
            "p_inc_requested": self.p_inc_requested,
            "prior_p": self.prior_p,
            "converged": self.converged,
            "iterations": self.iterations,
            "upper_bound": self.upper_bound,
            "method": self.method,
        }


def _clamp_unit(x: float) -> float:
    # only round-off is clamped; genuine excursions are left visible
    if -1e-10 <= x < 0:
        return 0.0
    if 1 < x <= 1 + 1e-10:
        return 1.0
    return x


def _check_prior(p: float) -> None:
    if not 0 <= p <= 1:
        raise DiscriminationError(f"prior p must be in [0, 1], got {p}")


def evaluate_povm(povm: Povm, rho1, rho2, p: float) -> tuple[float, float]:
    """Return ``(p_correct, p_inc)`` for the mixture ``p rho1 + (1-p) rho2``."""
    _check_prior(p)
    r1, r2 = _as_matrix(rho1), _as_matrix(rho2)
    if r1.shape != r2.shape or r1.shape != (povm.dim, povm.dim):
        raise DiscriminationError(f"dimension mismatch: POVM {povm.dim}, states {r1.shape} and {r2.shape}")
    pi0, pi1, pi2 = povm.matrices
    rho = p * r1 + (1 - p) * r2
    p_inc = float(np.vdot(rho, pi0).real)
    p_c = float(p * np.vdot(r1, pi1).real + (1 - p) * np.vdot(r2, pi2).real)
    return _clamp_unit(p_c), _clamp_unit(p_inc)


def usd_overlap(a1: float, a2: float, theta0: float) -> float:
    """``|<alpha1|alpha2>|`` for real amplitudes ``a1, a2`` at relative phase ``theta0``."""
    if a1 < 0 or a2 < 0:
        raise ValueError(f"amplitudes must be >= 0, got {a1}, {a2}")
    return math.exp(-(a1 * a1 + a2 * a2) / 2 + a1 * a2 * math.cos(theta0))


# --- diagonal (photon-number) restriction -------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiagonalAssignment:
    """Per-photon-number outcome weights ``w[n] = (w0, w1, w2)``."""

    weights: np.ndarray

    def povm(self) -> Povm:
        return Povm(tuple(np.diag(self.weights[:, j]).astype(complex) for j in range(3)))


def diagonal_baseline(rho1_diag: Sequence[float], rho2_diag: Sequence[float], p: float,
                      p_inc: float) -> tuple[float, DiagonalAssignment]:
    """Best ``P_C`` over POVMs diagonal in photon number.

    The problem is a fractional knapsack: every photon number contributes
    ``c_n = max(p rho1_n, (1-p) rho2_n)`` unless part of it is routed to the
    inconclusive outcome, which costs ``c_n`` per unit of ``rho_n``.  Filling
    the inconclusive budget in increasing order of ``c_n / rho_n`` is optimal.
    """
    _check_prior(p)
    a = np.asarray(rho1_diag, dtype=float)
    b = np.asarray(rho2_diag, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DiscriminationError("diagonals must be 1-D arrays of equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise DiscriminationError("diagonal probabilities must be >= 0")
    pa, pb = p * a, (1 - p) * b
    rho = pa + pb
    total = float(rho.sum())
    if not 0 <= p_inc <= total + 1e-12:
        raise DiscriminationError(f"p_inc={p_inc} is infeasible (total weight {total:.12g})")
    c = np.maximum(pa, pb)
    weights = np.zeros((a.size, 3))
    weights[:, 1] = pa >= pb
    weights[:, 2] = pa < pb
    order = sorted((n for n in range(a.size) if rho[n] > 0), key=lambda n: (c[n] / rho[n], n))
    budget = p_inc
    for n in order:
        if budget <= 0:
            break
        x = min(1.0, budget / rho[n])
        budget -= x * rho[n]
        weights[n, 0] = x
        weights[n, 1:] *= 1 - x
    # photon numbers with zero weight carry no probability; send them to Pi0 only if budget forces it
    p_c = float(np.sum(c * (1 - weights[:, 0])))
    return _clamp_unit(p_c), DiagonalAssignment(weights)


# --- full optimization --------------------------------------------------------------------

def _support(rho: np.ndarray, rtol: float):
    w, v = np.linalg.eigh(rho)
    keep = w > rtol * max(w.max(), 0.0)
    return v[:, keep]


def _hermitian_basis(r: int, real: bool) -> np.ndarray:
    """Columns are vec() of an orthonormal basis of (real-)symmetric or Hermitian r x r matrices."""
    cols = []
    for k in range(r):
        e = np.zeros((r, r), complex)
        e[k, k] = 1
        cols.append(e.ravel())
    s = 1 / math.sqrt(2)
    for k in range(r):
        for l in range(k + 1, r):
            e = np.zeros((r, r), complex)
            e[k, l] = e[l, k] = s
            cols.append(e.ravel())
            if not real:
                e = np.zeros((r, r), complex)
                e[k, l], e[l, k] = -1j * s, 1j * s
                cols.append(e.ravel())
    return np.array(cols).T


def _inv_psd(s: np.ndarray):
    """Inverse and log-determinant via Cholesky; ``None`` if ``s`` is not positive definite."""
    try:
        low = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return None
    logdet = 2 * float(np.sum(np.log(np.diag(low).real)))
    linv = np.linalg.solve(low, np.eye(s.shape[0]))
    return linv.conj().T @ linv, logdet


class _DualBarrier:
    """Newton solver for the log-barrier dual on an r-dimensional support."""

    def __init__(self, r0, r1, r2, q, real):
        self.rho, self.r1, self.r2, self.q = r0, r1, r2, q
        self.r = r0.shape[0]
        self.basis = _hermitian_basis(self.r, real)
        self.nvar = self.basis.shape[1] + 1
        self.c = np.concatenate([self.basis.conj().T @ np.eye(self.r).ravel(), [-q]]).real
        self.vec_rho = r0.ravel()

    def unpack(self, x):
        y = (self.basis @ x[:-1]).reshape(self.r, self.r)
        return _herm(y), x[-1]

    def slacks(self, x):
        y, lam = self.unpack(x)
        return [y - lam * self.rho, y - self.r1, y - self.r2]

    def value(self, x, t):
        total = t * float(self.c @ x)
        for s in self.slacks(x):
            out = _inv_psd(s)
            if out is None:
                return math.inf
            total -= out[1]
        return total

    def newton_step(self, x, t):
        n = self.nvar
        grad = t * self.c.copy()
        hess = np.zeros((n, n))
        b = self.basis
        for j, s in enumerate(self.slacks(x)):
            inv = _inv_psd(s)[0]
            # d S_j / d x  as a (r*r, n) matrix
            a = np.zeros((self.r * self.r, n), complex)
            a[:, :-1] = b
            if j == 0:
                a[:, -1] = -self.vec_rho
            grad -= (a.conj().T @ inv.ravel()).real
            kron = np.kron(inv, inv.T)
            hess += (a.conj().T @ kron @ a).real
        hess = (hess + hess.T) / 2
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        decrement = float(-grad @ step)
        return step, decrement

    def centre(self, x, t, max_steps, eps=1e-10, roundoff=1e-6, cap=50):
        steps = 0
        fx = self.value(x, t)
        dec = math.inf
        while steps < min(max_steps, cap):
            step, dec = self.newton_step(x, t)
            steps += 1
            if dec / 2 <= eps:
                return x, steps, True
            h = 1.0
            while True:
                xn = x + h * step
                fn = self.value(xn, t)
                if fn <= fx - 0.25 * h * dec:
                    break
                h *= 0.5
                if h < 1e-14:
                    # no decrease is representable any more; fine if already near the centre
                    return x, steps, dec <= roundoff
            x, fx = xn, fn
        return x, steps, dec <= roundoff

    def primal(self, x, t):
        return [np.linalg.inv(s) / t for s in self.slacks(x)]


def _polish(pis: list[np.ndarray]) -> list[np.ndarray]:
    """Make ``sum(pis) = I`` exact via ``G^-1/2 Pi G^-1/2`` and clear round-off negativity."""
    pis = [_herm(p) for p in pis]
    w, v = np.linalg.eigh(_herm(sum(pis)))
    g = (v / np.sqrt(w)) @ v.conj().T
    out = []
    for p in pis:
        p = _herm(g @ p @ g)
        ev, vec = np.linalg.eigh(p)
        out.append((vec * np.clip(ev, 0, None)) @ vec.conj().T)
    # put the clipping residue back on the largest element so completeness stays exact
    k = int(np.argmax([np.trace(p).real for p in out]))
    out[k] = out[k] + (np.eye(out[0].shape[0]) - sum(out))
    return [_herm(p) for p in out]


def _match_p_inc(pis: list[np.ndarray], rho: np.ndarray, q: float, gains) -> list[np.ndarray]:
    """Shift weight between ``Pi0`` and the conclusive elements so ``Tr(rho Pi0) = q``.

    Both moves are convex mixtures, so completeness and positivity survive.
    """
    got = float(np.vdot(rho, pis[0]).real)
    pi0, pi1, pi2 = pis
    if got < q:
        eps = (q - got) / (float(np.trace(rho).real) - got)
        return [pi0 + eps * (pi1 + pi2), (1 - eps) * pi1, (1 - eps) * pi2]
    if got > q:
        eps = (got - q) / got
        # released inconclusive weight goes to whichever conclusive outcome earns more on it
        to1 = gains[0](pi0) >= gains[1](pi0)
        return [(1 - eps) * pi0, pi1 + eps * pi0 * to1, pi2 + eps * pi0 * (not to1)]
    return pis


def _barrier_solve(r1, r2, rho, p, q, tol, max_iter, real):
    r = rho.shape[0]
    solver = _DualBarrier(rho, p * r1, (1 - p) * r2, q, real)
    y0 = (max(np.linalg.eigvalsh(rho).max(), 1.0) + 1.0) * np.eye(r)
    x = np.concatenate([(solver.basis.conj().T @ y0.ravel()).real, [0.0]])
    t, mu_t = 1.0, 10.0
    iterations = 0
    # a centring step that stalls on round-off still leaves a strictly feasible dual point,
    # so the path is followed to the end and optimality is judged by the certified gap
    while iterations < max_iter:
        x, steps, _ = solver.centre(x, t, max_iter - iterations)
        iterations += steps
        if 3 * r / t < tol:
            break
        t *= mu_t
    pis = _polish(solver.primal(x, t))
    gains = (lambda m: float(np.vdot(solver.r1, m).real), lambda m: float(np.vdot(solver.r2, m).real))
    pis = _match_p_inc(pis, rho, q, gains)
    y, lam = solver.unpack(x)
    bound = float(np.trace(y).real - lam * q)
    converged = 3 * r / t < tol
    return pis, bound, float(lam), iterations, converged


def _psd_sqrt(a):
    w, v = np.linalg.eigh(_herm(a))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def _dual_bound(rs, pis):
    """Feasible dual value ``Tr Y`` for the weighted problem, built from the current iterate."""
    y0 = _herm(sum(r @ p for r, p in zip(rs, pis)))
    y = y0.copy()
    for r in rs:
        w, v = np.linalg.eigh(_herm(r - y0))
        y = y + (v * np.clip(w, 0, None)) @ v.conj().T
    return float(np.trace(y).real)


def _fj_inner(rs, pis, gap_tol, max_iter, window=10, stall=1e-13):
    """Fiurasek-Jezek update ``Pi_j <- L^-1 R_j Pi_j R_j L^-1`` in factorized form."""
    d = rs[0].shape[0]
    cs = [_psd_sqrt(p) for p in pis]
    hist = []
    it = 0
    for it in range(1, max_iter + 1):
        # stacking R_j C_j and keeping only the unitary factor applies the symmetric update
        # with L = (sum R_j Pi_j R_j)^(1/2) without ever forming L^-1 explicitly
        b = np.hstack([r @ c for r, c in zip(rs, cs)])
        u, _, wh = np.linalg.svd(b, full_matrices=False)
        cs = [u @ wh[:, j * d:(j + 1) * d] for j in range(3)]
        hist.append(sum(np.vdot(c, r @ c).real for r, c in zip(rs, cs)))
        if it % window == 0:
            pis = [c @ c.conj().T for c in cs]
            if _dual_bound(rs, pis) - hist[-1] < gap_tol:
                break
            if hist[-1] - hist[-window] < stall * window:
                break
    return [c @ c.conj().T for c in cs], it


def _fj_solve(r1, r2, rho, p, q, tol, max_iter, kappa=1e-2):
    d = rho.shape[0]
    eye = np.eye(d)
    start = [q * eye, (1 - q) / 2 * eye, (1 - q) / 2 * eye]
    total = 0

    def solve(lam, pis):
        nonlocal total
        rs = [lam * rho, p * r1, (1 - p) * r2]
        init = [(1 - kappa) * a + kappa * b for a, b in zip(pis, start)]
        pis, it = _fj_inner(rs, init, tol * 0.1, max(max_iter - total, 10))
        total += it
        qa = float(np.vdot(rho, pis[0]).real)
        pc = float(p * np.vdot(r1, pis[1]).real + (1 - p) * np.vdot(r2, pis[2]).real)
        return {"lam": lam, "q": qa, "pc": pc, "pis": pis, "bound": _dual_bound(rs, pis) - lam * q}

    lo, hi = solve(0.0, start), solve(1.0, start)
    if lo["q"] >= q:
        return lo["pis"], lo["bound"], 0.0, total, abs(lo["q"] - q) < P_INC_ATOL
    best = min(lo["bound"], hi["bound"])
    converged = False
    for k in range(200):
        frac = (q - lo["q"]) / (hi["q"] - lo["q"])
        if best - ((1 - frac) * lo["pc"] + frac * hi["pc"]) < tol:
            converged = True
            break
        if total >= max_iter:
            break
        # chord step on the multiplier, with periodic bisection as a safeguard
        lam = (lo["pc"] - hi["pc"]) / (hi["q"] - lo["q"])
        width = hi["lam"] - lo["lam"]
        if not lo["lam"] + 0.01 * width < lam < hi["lam"] - 0.01 * width or k % 4 == 3:
            lam = 0.5 * (lo["lam"] + hi["lam"])
        near = lo if abs(lam - lo["lam"]) < abs(lam - hi["lam"]) else hi
        s = solve(lam, near["pis"])
        best = min(best, s["bound"])
        if s["q"] < q:
            lo = s
        else:
            hi = s
    frac = (q - lo["q"]) / (hi["q"] - lo["q"])
    # the two bracketing measurements mixed with weight frac hit p_inc exactly
    pis = [(1 - frac) * a + frac * b for a, b in zip(lo["pis"], hi["pis"])]
    return pis, best, 0.5 * (lo["lam"] + hi["lam"]), total, converged


def _helstrom(r1, r2, p):
    w, v = np.linalg.eigh(_herm(p * r1 - (1 - p) * r2))
    pos = v[:, w > 0]
    pi1 = pos @ pos.conj().T
    d = r1.shape[0]
    return [np.zeros((d, d), complex), pi1, np.eye(d) - pi1]


def optimize_povm(rho1, rho2, p: float = 0.5, p_inc: float = 0.0, tol: float = 1e-9,
                  max_iter: int = 10000, method: str = "barrier") -> DiscriminationResult:
    """Maximize the correct-decision probability at inconclusive probability ``p_inc``.

    Work happens on the support of ``rho = p rho1 + (1-p) rho2`` (eigenvalues
    above ``1e-13`` of the largest); the orthogonal complement, which neither
    state populates, is assigned to ``Pi0``.  ``tol`` is the target duality gap.
    """
    _check_prior(p)
    if method not in METHODS:
        raise DiscriminationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    a, b = _as_matrix(rho1), _as_matrix(rho2)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DiscriminationError(f"state shapes differ: {a.shape} vs {b.shape}")
    for name, m in (("rho1", a), ("rho2", b)):
        if np.abs(m - m.conj().T).max() > 1e-10:
            raise DiscriminationError(f"{name} is not Hermitian")
        if np.linalg.eigvalsh(_herm(m)).min() < -1e-10:
            raise DiscriminationError(f"{name} is not positive semidefinite")
    rho_full = p * a + (1 - p) * b
    total = float(np.trace(rho_full).real)
    if not 0 <= p_inc < 1:
        raise DiscriminationError(f"p_inc must be in [0, 1), got {p_inc}")
    if p_inc > total + 1e-12:
        raise DiscriminationError(f"p_inc={p_inc} exceeds the state trace {total:.12g}")
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    real = np.abs(a.imag).max() <= 1e-14 * scale and np.abs(b.imag).max() <= 1e-14 * scale
    if real:
        a, b = a.real.astype(complex), b.real.astype(complex)
        rho_full = p * a + (1 - p) * b
    v = _support(rho_full, SUPPORT_RTOL)
    d = a.shape[0]
    ra, rb = _herm(v.conj().T @ a @ v), _herm(v.conj().T @ b @ v)
    rho = p * ra + (1 - p) * rb
    if real:
        ra, rb, rho = ra.real.astype(complex), rb.real.astype(complex), rho.real.astype(complex)

    if p_inc == 0:
        pis, bound, lam, iterations = _helstrom(ra, rb, p), math.nan, math.nan, 0
    elif method == "barrier":
        pis, bound, lam, iterations, _ = _barrier_solve(ra, rb, rho, p, p_inc, tol, max_iter, real)
    else:
        pis, bound, lam, iterations, _ = _fj_solve(ra, rb, rho, p, p_inc, tol, max_iter)

    complement = np.eye(d) - v @ v.conj().T
    full = [v @ pi @ v.conj().T for pi in pis]
    full[0] = full[0] + complement
    full = [_herm(m) for m in full]
    if real:
        full = [m.real.astype(complex) for m in full]
    povm = Povm(tuple(full))
    p_c, p_inc_got = evaluate_povm(povm, a, b, p)
    if p_inc == 0:
        bound = p_c
    # optimality is judged by the certificate, not by which solver produced the POVM
    converged = abs(p_inc_got - p_inc) <= P_INC_ATOL and bound - p_c <= CERTIFIED_GAP_ATOL
    return DiscriminationResult(povm, p_c, p_inc_got, p_inc, p, bool(converged), int(iterations),
                                float(bound), float(lam), method)
