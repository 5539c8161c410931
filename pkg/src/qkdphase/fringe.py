"""Interference-fringe visibility: extrema and least-squares estimates, CW correction, sigma conversion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import optimize, stats

DEFAULT_REFERENCE_VISIBILITY = 0.95
MIN_SAMPLES = 4
MIN_PHASE_SPAN = 2 * math.pi / 3
MEAN_HALF_RTOL = 0.05


class DataError(ValueError):
    """Malformed or unusable fringe data.  ``row`` is the 1-based CSV line, when known."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class FitError(RuntimeError):
    pass


class Normalization(str, Enum):
    RAW = "raw"
    MEAN_HALF = "mean_half"


class Method(str, Enum):
    EXTREMA = "extrema"
    FIT = "fit"


def sigma_to_visibility(sigma: float) -> float:
    """Visibility ``exp(-sigma^2 / 2)`` of a Gaussian relative-phase law."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return math.exp(-0.5 * sigma * sigma)


def visibility_to_sigma(theta: float) -> float:
    """Inverse of :func:`sigma_to_visibility`; ``theta`` must lie in (0, 1]."""
    if not 0 < theta <= 1:
        raise ValueError(f"visibility must be in (0, 1], got {theta}")
    return math.sqrt(max(-2.0 * math.log(theta), 0.0))


def visibility_from_extrema(i_max: float, i_min: float) -> float:
    if i_min < 0 or i_max < 0:
        raise ValueError(f"intensities must be >= 0, got i_max={i_max}, i_min={i_min}")
    if i_max < i_min:
        raise ValueError(f"i_max ({i_max}) < i_min ({i_min})")
    if i_max == 0:
        raise ValueError("i_max must be > 0")
    return (i_max - i_min) / (i_max + i_min)


def snr_noise_std(snr_db: float, mean: float = 0.5) -> float:
    """RMS noise for an SNR given as ``10 log10(mean / rms)``."""
    return mean * 10 ** (-snr_db / 10)


@dataclass(frozen=True, eq=False)
class FringeDataset:
    phases: np.ndarray
    intensities: np.ndarray
    errors: Optional[np.ndarray] = None
    normalization: Normalization = Normalization.RAW

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float).ravel()
        inten = np.asarray(self.intensities, dtype=float).ravel()
        if phases.shape != inten.shape:
            raise DataError(f"{phases.size} phases but {inten.size} intensities")
        if not (np.all(np.isfinite(phases)) and np.all(np.isfinite(inten))):
            raise DataError("non-finite phase or intensity")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "intensities", inten)
        if self.errors is not None:
            err = np.asarray(self.errors, dtype=float).ravel()
            if err.shape != inten.shape:
                raise DataError("intensity_err length does not match intensities")
            if np.any(err < 0) or not np.all(np.isfinite(err)):
                raise DataError("intensity_err must be finite and >= 0")
            object.__setattr__(self, "errors", err)
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if self.normalization is Normalization.MEAN_HALF and inten.size:
            mean = inten.mean()
            if abs(mean - 0.5) > MEAN_HALF_RTOL * 0.5:
                raise DataError(f"mean-half data has mean intensity {mean:.4f}")

    def __len__(self):
        return self.phases.size

    @property
    def phase_span(self) -> float:
        return float(self.phases.max() - self.phases.min()) if len(self) else 0.0

    def normalized(self) -> "FringeDataset":
        """Scale intensities (and errors) so the mean is 0.5."""
        mean = self.intensities.mean()
        if mean <= 0:
            raise DataError("cannot normalize data with non-positive mean intensity")
        k = 0.5 / mean
        err = None if self.errors is None else self.errors * k
        return FringeDataset(self.phases, self.intensities * k, err, Normalization.MEAN_HALF)

    def check_fittable(self) -> None:
        if len(self) < MIN_SAMPLES:
            raise DataError(f"need at least {MIN_SAMPLES} samples, got {len(self)}")
        if self.phase_span < MIN_PHASE_SPAN:
            raise DataError(f"phase span {self.phase_span:.3f} rad is below 2*pi/3")

    @classmethod
    def from_csv(cls, source: Union[str, Path, io.TextIOBase],
                 normalization: Normalization = Normalization.RAW) -> "FringeDataset":
        """Read ``phase_rad,intensity[,intensity_err]`` CSV."""
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as fh:
                return cls.from_csv(fh, normalization)
        reader = csv.reader(source)
        header = next(reader, None)
        if header is None:
            raise DataError("empty file", row=1)
        header = [h.strip() for h in header]
        if header[:2] != ["phase_rad", "intensity"] or len(header) > 3 or (
                len(header) == 3 and header[2] != "intensity_err"):
            raise DataError(f"bad header {header!r}; expected phase_rad,intensity[,intensity_err]", row=1)
        ncol = len(header)
        phases, inten, errs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncol:
                raise DataError(f"expected {ncol} fields, got {len(row)}", row=lineno)
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(str(exc), row=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise DataError("non-finite value", row=lineno)
            if values[1] < 0:
                raise DataError("negative intensity", row=lineno)
            if ncol == 3 and values[2] < 0:
                raise DataError("negative intensity_err", row=lineno)
            phases.append(values[0])
            inten.append(values[1])
            if ncol == 3:
                errs.append(values[2])
        return cls(np.array(phases), np.array(inten), np.array(errs) if ncol == 3 else None, normalization)

    def to_csv(self, target: Union[str, Path, io.TextIOBase, None] = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if self.errors is None:
            writer.writerow(["phase_rad", "intensity"])
            rows = zip(self.phases, self.intensities)
        else:
            writer.writerow(["phase_rad", "intensity", "intensity_err"])
            rows = zip(self.phases, self.intensities, self.errors)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if isinstance(target, (str, Path)):
            Path(target).write_text(text, encoding="utf-8")
        elif target is not None:
            target.write(text)
        return text


@dataclass(frozen=True)
class FringeFit:
    """Best fit of ``I(phi) = A (1 + visibility cos(phi + phi0))``."""

    amplitude_A: float
    visibility: float
    phi0: float
    visibility_ci95: tuple[float, float]
    residual_rms: float
    visibility_stderr: float = 0.0
    n_samples: int = 0

    def model(self, phi):
        return self.amplitude_A * (1 + self.visibility * np.cos(np.asarray(phi) + self.phi0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["visibility_ci95"] = list(self.visibility_ci95)
        return d


@dataclass(frozen=True)
class VisibilityEstimate:
    raw: float
    corrected: float
    method: Method
    reference_visibility: float

    def to_dict(self) -> dict:
        return {"raw": self.raw, "corrected": self.corrected, "method": self.method.value,
                "reference_visibility": self.reference_visibility}


def _wrap(theta: float) -> float:
    w = math.remainder(theta, 2 * math.pi)
    return w + 2 * math.pi if w <= -math.pi else w


def _linear_estimate(phi, y, w):
    # I = c0 + c1 cos(phi) + c2 sin(phi)  with c1 = A V cos(phi0), c2 = -A V sin(phi0)
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)]) * w[:, None]
    (c0, c1, c2), *_ = np.linalg.lstsq(design, y * w, rcond=None)
    if c0 <= 0:
        raise FitError("fringe offset is not positive")
    return c0, math.hypot(c1, c2) / c0, math.atan2(-c2, c1)


def fit_fringe(data: FringeDataset) -> FringeFit:
    """Bounded least-squares fit with multi-start over the fringe origin.

    Samples are weighted by ``1/intensity_err`` when errors are present (and
    the confidence interval then uses them as absolute); otherwise the
    covariance is scaled by the residual variance.
    """
    data.check_fittable()
    phi, y = data.phases, data.intensities
    if data.errors is not None:
        if np.any(data.errors <= 0):
            raise DataError("intensity_err must be > 0 for a weighted fit")
        w = 1.0 / data.errors
    else:
        w = np.ones_like(y)

    def residuals(params):
        a, vis, p0 = params
        return (a * (1 + vis * np.cos(phi + p0)) - y) * w

    a_lin, v_lin, p_lin = _linear_estimate(phi, y, w)
    starts = [(a_lin, min(v_lin, 1.0), p_lin)]
    starts += [(a_lin, min(max(v_lin, 1e-3), 1.0), p) for p in (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)]
    lower, upper = [0.0, 0.0, -np.inf], [np.inf, 1.0, np.inf]
    best = None
    for start in starts:
        res = optimize.least_squares(residuals, start, bounds=(lower, upper), method="trf",
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or res.cost < best.cost:
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitError("least-squares fit did not converge")
    a, vis, p0 = best.x
    if a <= 0:
        raise FitError("fitted amplitude is not positive")

    n, k = y.size, 3
    dof = max(n - k, 1)
    jac = best.jac
    try:
        cov = np.linalg.pinv(jac.T @ jac)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular Jacobian: {exc}") from None
    if data.errors is None:
        cov = cov * (2 * best.cost / dof)
    se = float(math.sqrt(max(cov[1, 1], 0.0)))
    half = float(stats.t.ppf(0.975, dof)) * se
    ci = (max(0.0, vis - half), min(1.0, vis + half))
    rms = float(np.sqrt(np.mean((a * (1 + vis * np.cos(phi + p0)) - y) ** 2)))
    return FringeFit(float(a), float(vis), _wrap(float(p0)), ci, rms, se, n)


def extrema_visibility(data: FringeDataset) -> float:
    """Peak/valley estimate from the recorded samples (noise biases it upward)."""
    if len(data) < 2:
        raise DataError("need at least two samples")
    return visibility_from_extrema(float(data.intensities.max()), float(data.intensities.min()))


def correct_visibility(raw: float, reference: float = DEFAULT_REFERENCE_VISIBILITY,
                       method: Method = Method.FIT) -> VisibilityEstimate:
    """Undo interferometer imperfections measured as a CW reference visibility."""
    if not 0 < reference <= 1:
        raise ValueError(f"reference visibility must be in (0, 1], got {reference}")
    if not 0 <= raw <= 1:
        raise ValueError(f"raw visibility must be in [0, 1], got {raw}")
    return VisibilityEstimate(raw, min(raw / reference, 1.0), Method(method), reference)
