"""Evaluation quantities: PSNR, multi-scale SSIM, feature distortion,
the composite rate-distortion loss, and Bjontegaard deltas.

MS-SSIM follows the standard published five-scale procedure (11-tap
Gaussian window, sigma 1.5, the usual scale exponents); BD metrics use the
classic cubic fit in log-rate, integrated strictly over the overlapping
range of the two curves.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError

PSNR_CAP_DB = 100.0

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
# smallest dim for which all five dyadic scales still fit the 11-tap window
MS_SSIM_MIN_DIM = 161


def _as_samples(x) -> np.ndarray:
    arr = getattr(x, "samples", x)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InputError("expected an image or a (C,H,W) array")
    return arr


def psnr(a, b) -> float:
    """10*log10(1/MSE) on [0,1] samples, capped at the 100 dB sentinel."""
    xa, xb = _as_samples(a), _as_samples(b)
    if xa.shape != xb.shape:
        raise InputError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    mse = float(np.mean((xa - xb) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gauss_kernel() -> np.ndarray:
    r = np.arange(_SSIM_WIN) - (_SSIM_WIN - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


_GAUSS = _gauss_kernel()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian filtering, trimmed to the valid interior."""
    half = _SSIM_WIN // 2
    y = ndimage.correlate1d(x, _GAUSS, axis=1, mode="constant")
    y = ndimage.correlate1d(y, _GAUSS, axis=2, mode="constant")
    return y[:, half:-half, half:-half]


def _ssim_pair(a: np.ndarray, b: np.ndarray):
    """Mean luminance and contrast-structure terms over one scale."""
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    var_a = _filter_valid(a * a) - mu_a * mu_a
    var_b = _filter_valid(b * b) - mu_b * mu_b
    cov = _filter_valid(a * b) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return float(lum.mean()), float(cs.mean()), float((lum * cs).mean())


def _halve(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with edge padding to even dims first."""
    ph = x.shape[1] % 2
    pw = x.shape[2] % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return (
        (x[:, ::2, ::2] + x[:, ::2, 1::2]) + (x[:, 1::2, ::2] + x[:, 1::2, 1::2])
    ) * 0.25


def ms_ssim(a, b, fallback_single_scale: bool = False) -> float:
    """Five-scale structural similarity on [0,1] samples.

    Images smaller than MS_SSIM_MIN_DIM per side cannot host all five
    scales; pass ``fallback_single_scale=True`` to compute plain SSIM
    instead of erroring.
    """
    xa, xb = _as_samples(a), _as_samples(b)
    if xa.shape != xb.shape:
        raise InputError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    min_dim = min(xa.shape[1], xa.shape[2])
    if min_dim < MS_SSIM_MIN_DIM:
        if not fallback_single_scale:
            raise InputError(
                f"images smaller than {MS_SSIM_MIN_DIM}x{MS_SSIM_MIN_DIM} cannot "
                "host 5 scales; set fallback_single_scale=True for plain SSIM"
            )
        if min_dim < _SSIM_WIN:
            raise InputError(f"images must be at least {_SSIM_WIN} per side")
        _, _, full = _ssim_pair(xa, xb)
        return float(min(max(full, 0.0), 1.0))

    value = 1.0
    for scale, weight in enumerate(MS_SSIM_WEIGHTS):
        lum, cs, full = _ssim_pair(xa, xb)
        term = full if scale == len(MS_SSIM_WEIGHTS) - 1 else cs
        value *= max(term, 0.0) ** weight
        if scale < len(MS_SSIM_WEIGHTS) - 1:
            xa = _halve(xa)
            xb = _halve(xb)
    return float(min(max(value, 0.0), 1.0))


def feature_d2(h_x: np.ndarray, h_y: np.ndarray) -> float:
    """Mean squared feature difference."""
    a = np.asarray(h_x, dtype=np.float64)
    b = np.asarray(h_y, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def loss_eval(bpp: float, d1: float, d2: float, lam: float, alpha: float) -> float:
    """Composite rate-distortion objective with measured bpp as the rate."""
    for name, v in (("bpp", bpp), ("d1", d1), ("d2", d2), ("lambda", lam), ("alpha", alpha)):
        if not np.isfinite(v):
            raise InputError(f"{name} must be finite")
    if lam < 0:
        raise InputError("lambda must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    return float(bpp + lam * ((1.0 - alpha) * d1 + alpha * d2))


@dataclass(frozen=True)
class RDPoint:
    """One rate-distortion record."""

    bpp: float
    psnr_db: float
    ms_ssim: float
    d2: float
    loss: float
    lam: float
    alpha: float

    def __post_init__(self):
        if self.bpp < 0:
            raise InputError("bpp must be >= 0")
        if not 0.0 <= self.ms_ssim <= 1.0:
            raise InputError("ms_ssim must lie in [0, 1]")

    @classmethod
    def make(cls, bpp, psnr_db, msssim, d2, lam, alpha, d1_mode="mse"):
        if d1_mode == "mse":
            d1 = 10.0 ** (-psnr_db / 10.0)
        elif d1_mode == "msssim":
            d1 = 1.0 - msssim
        else:
            raise InputError(f"unknown d1 mode {d1_mode!r}")
        return cls(
            bpp=float(bpp), psnr_db=float(psnr_db), ms_ssim=float(msssim),
            d2=float(d2), loss=loss_eval(bpp, d1, d2, lam, alpha),
            lam=float(lam), alpha=float(alpha),
        )


@dataclass(frozen=True)
class RDCurve:
    """Rate-distortion points ordered by strictly increasing bpp."""

    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise InputError("curve needs at least one point")
        rates = [p.bpp for p in pts]
        if any(b >= a for a, b in zip(rates[1:], rates)):
            raise InputError("bpp must be strictly increasing along the curve")
        object.__setattr__(self, "points", pts)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self.points])


def _fit_poly3(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        return np.polyfit(x, y, 3)


def _avg_poly_gap(x_ref, y_ref, x_test, y_test):
    """Average vertical gap between two cubic fits over the x-overlap."""
    lo = max(x_ref.min(), x_test.min())
    hi = min(x_ref.max(), x_test.max())
    if hi <= lo:
        raise InputError("curves have no overlapping range")
    p_ref = np.polyint(_fit_poly3(x_ref, y_ref))
    p_test = np.polyint(_fit_poly3(x_test, y_test))
    int_ref = np.polyval(p_ref, hi) - np.polyval(p_ref, lo)
    int_test = np.polyval(p_test, hi) - np.polyval(p_test, lo)
    return (int_test - int_ref) / (hi - lo), (lo, hi)


def bd_metrics(curve_ref: RDCurve, curve_test: RDCurve):
    """Bjontegaard deltas (bd_rate %, bd_psnr dB) of test against reference.

    Negative bd_rate means the test curve needs fewer bits at equal quality.
    """
    for curve in (curve_ref, curve_test):
        if len(curve.points) < 4:
            raise InputError("BD metrics need at least 4 points per curve")
        if curve.rates.min() <= 0:
            raise InputError("BD metrics need strictly positive bpp")
    lr_ref = np.log10(curve_ref.rates)
    lr_test = np.log10(curve_test.rates)
    q_ref = curve_ref.qualities
    q_test = curve_test.qualities

    bd_psnr, _ = _avg_poly_gap(lr_ref, q_ref, lr_test, q_test)
    avg_log_gap, _ = _avg_poly_gap(q_ref, lr_ref, q_test, lr_test)
    bd_rate = (10.0**avg_log_gap - 1.0) * 100.0
    return float(bd_rate), float(bd_psnr)


def bd_report(curve_ref: RDCurve, curve_test: RDCurve,
              reference: str = "reference", test: str = "test") -> dict:
    """BD summary dict matching the report JSON schema."""
    bd_rate, bd_psnr_db = bd_metrics(curve_ref, curve_test)
    _, overlap = _avg_poly_gap(
        curve_ref.qualities, np.log10(curve_ref.rates),
        curve_test.qualities, np.log10(curve_test.rates),
    )
    return {
        "reference": reference,
        "test": test,
        "bd_rate_percent": bd_rate,
        "bd_psnr_db": bd_psnr_db,
        "overlap": [float(overlap[0]), float(overlap[1])],
    }


RD_CSV_HEADER = "label,bpp,psnr_db,ms_ssim,d2,loss"


def write_rd_csv(path, rows) -> None:
    """Write labelled RD points: rows of (label, RDPoint)."""
    with open(path, "w") as f:
        f.write(RD_CSV_HEADER + "\n")
        for label, p in rows:
            f.write(
                f"{label},{p.bpp!r},{p.psnr_db!r},{p.ms_ssim!r},{p.d2!r},{p.loss!r}\n"
            )


def write_bd_json(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
