"""Spatial autocorrelation model, sampling, fitting, and smoothness widths.

The noise model is a mixed Gaussian plus exponential radial autocorrelation

    rho(r) = a * exp(-r^2 / (2 b^2)) + (1 - a) * exp(-r / c)

with 0 <= a <= 1 and b, c > 0. Smoothness is reported as the full width at
half maximum of rho itself: the r where rho crosses 1/2, doubled. The classic
single-number estimator (Gaussian-shape assumption, first differences) is kept
alongside for comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfftn, next_fast_len, rfftn

from .errors import (
    DegenerateDataError,
    FitFailureError,
    InsufficientDataError,
    SmoothnessUndefinedError,
)
from .grid import FWHM_TO_SIGMA, Mask, Series4D, check_same_grid

GAUSS_WIDTH = 2.0 * math.sqrt(2.0 * math.log(2.0))  # FWHM of unit-sigma Gaussian

MIN_MASK_VOXELS = 100
MIN_FIT_BINS = 4


@dataclass(frozen=True)
class AcfParams:
    """Parameters of the mixed autocorrelation model."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0):
            raise ValueError(f"a must be in [0, 1], got {self.a}")
        if not (self.b > 0 and self.c > 0):
            raise ValueError(f"b and c must be > 0, got b={self.b}, c={self.c}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)


def acf_eval(params: AcfParams, r):
    """Model autocorrelation at mm distance(s) r >= 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be >= 0")
    a, b, c = params.a, params.b, params.c
    out = a * np.exp(-0.5 * (r / b) ** 2) + (1.0 - a) * np.exp(-r / c)
    return out if out.ndim else float(out)


def acf_jacobian(params: AcfParams, r):
    """Partial derivatives of acf_eval w.r.t. (a, b, c), columns in that order."""
    r = np.asarray(r, dtype=float)
    a, b, c = params.a, params.b, params.c
    g = np.exp(-0.5 * (r / b) ** 2)
    e = np.exp(-r / c)
    d_a = g - e
    d_b = a * g * r**2 / b**3
    d_c = (1.0 - a) * e * r / c**2
    return np.stack([d_a, d_b, d_c], axis=-1)


@dataclass(frozen=True, eq=False)
class AcfSample:
    """Radially binned empirical autocorrelation.

    bin_centers are pair-weighted mean distances (strictly increasing; the
    first bin is r = 0 and is excluded from fitting), mean_corr the average
    correlation over pairs in the bin, pair_count the number of voxel pairs.
    """

    bin_centers: np.ndarray
    mean_corr: np.ndarray
    pair_count: np.ndarray
    n_zero_variance: int = 0

    def __post_init__(self):
        bc = np.asarray(self.bin_centers, dtype=float)
        mc = np.asarray(self.mean_corr, dtype=float)
        pc = np.asarray(self.pair_count, dtype=np.int64)
        if not (bc.shape == mc.shape == pc.shape) or bc.ndim != 1:
            raise ValueError("bin arrays must be 1-D and equally long")
        if bc.size and np.any(np.diff(bc) <= 0):
            raise ValueError("bin_centers must be strictly increasing")
        if np.any(pc < 1):
            raise ValueError("every retained bin needs at least one pair")
        if np.any(np.abs(mc) > 1.0 + 1e-12):
            raise ValueError("mean correlations must lie in [-1, 1]")
        object.__setattr__(self, "bin_centers", bc)
        object.__setattr__(self, "mean_corr", np.clip(mc, -1.0, 1.0))
        object.__setattr__(self, "pair_count", pc)

    def fitting(self):
        """(r, y, w) restricted to the bins that participate in fitting."""
        keep = self.bin_centers > 0
        return (self.bin_centers[keep], self.mean_corr[keep],
                self.pair_count[keep].astype(float))


@dataclass(frozen=True)
class FwhmEstimate:
    fwhm_mm: float
    model: str  # 'mixed' or 'gaussian'
    params: AcfParams | None = None
    warning: str | None = None


# ---------------------------------------------------------------------------
# empirical sampling


def _normalized_series(series: Series4D, mask: Mask):
    """Per-voxel demeaned, unit-norm time series; returns (volume stack with
    zeros off-mask, validity flags, number of zero-variance voxels)."""
    data = series.data
    flags = mask.flags
    nt = series.n_frames
    if nt >= 2:
        sub = data[flags]  # (n_in, nt)
        sub = sub - sub.mean(axis=1, keepdims=True)
        norms = np.sqrt((sub**2).sum(axis=1))
        ok = norms > 0
        sub[ok] /= norms[ok, None]
        sub[~ok] = 0.0
        out = np.zeros_like(data)
        out[flags] = sub
        valid = flags.copy()
        valid[flags] = ok
        return out, valid, int((~ok).sum())
    # single frame: global normalization over the mask
    vals = data[:, :, :, 0]
    inmask = vals[flags]
    mu = inmask.mean()
    sd = inmask.std()
    if sd == 0:
        raise DegenerateDataError("single-frame field has zero variance in mask")
    out = np.zeros_like(data)
    out[flags, 0] = (inmask - mu) / sd
    return out, flags.copy(), 0


def _offset_table(grid, r_max: float):
    """All integer voxel offsets with 0 < mm distance <= r_max, one per
    unordered pair direction (half-space: z > 0, or z = 0 and y > 0, or
    z = y = 0 and x > 0)."""
    mx = int(math.floor(r_max / grid.dx))
    my = int(math.floor(r_max / grid.dy))
    mz = int(math.floor(r_max / grid.dz))
    ox, oy, oz = np.meshgrid(
        np.arange(-mx, mx + 1), np.arange(-my, my + 1), np.arange(0, mz + 1),
        indexing="ij",
    )
    ox, oy, oz = ox.ravel(), oy.ravel(), oz.ravel()
    half = (oz > 0) | ((oz == 0) & (oy > 0)) | ((oz == 0) & (oy == 0) & (ox > 0))
    dist = np.sqrt((ox * grid.dx) ** 2 + (oy * grid.dy) ** 2 + (oz * grid.dz) ** 2)
    keep = half & (dist <= r_max)
    return ox[keep], oy[keep], oz[keep], dist[keep]


def sample_acf(series: Series4D, mask: Mask, r_max: float = 20.0,
               bin_width: float | None = None) -> AcfSample:
    """Estimate the radial autocorrelation of a masked series.

    Each voxel's time series is demeaned and scaled to unit norm, so the dot
    product of two voxels' series is their temporal correlation; correlations
    are accumulated over every in-mask voxel pair whose mm distance is at most
    r_max, into right-open distance bins of width ``bin_width`` (default: the
    smallest voxel spacing). Zero-variance voxels are excluded from pairing
    and counted in ``n_zero_variance``.

    The per-pair sums are evaluated with zero-padded FFT autocorrelation,
    which reproduces direct pair enumeration exactly up to float rounding.
    """
    check_same_grid(series, mask)
    grid = series.grid
    if r_max <= 0:
        raise ValueError("r_max must be > 0")
    if bin_width is None:
        bin_width = min(grid.spacing)
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if mask.in_count < MIN_MASK_VOXELS:
        raise InsufficientDataError(
            f"need >= {MIN_MASK_VOXELS} in-mask voxels, got {mask.in_count}"
        )

    norm, valid, n_zero = _normalized_series(series, mask)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateDataError("every in-mask voxel has zero variance")

    # zero-padded autocorrelation of the normalized frames and of the
    # validity indicator (exact integer pair counts after rounding)
    pads = tuple(
        next_fast_len(grid.shape[a] + int(math.floor(r_max / grid.spacing[a])))
        for a in range(3)
    )
    acc = None
    for t in range(norm.shape[3]):
        spec = rfftn(norm[:, :, :, t], s=pads)
        p = spec.real**2 + spec.imag**2
        acc = p if acc is None else acc + p
    corr_sum = irfftn(acc, s=pads)
    mspec = rfftn(valid.astype(float), s=pads)
    count = irfftn(mspec.real**2 + mspec.imag**2, s=pads)

    ox, oy, oz, dist = _offset_table(grid, r_max)
    c_vals = corr_sum[ox % pads[0], oy % pads[1], oz % pads[2]]
    n_vals = np.rint(count[ox % pads[0], oy % pads[1], oz % pads[2]]).astype(np.int64)

    nbins = int(math.floor(r_max / bin_width)) + 1
    b_idx = np.minimum((dist / bin_width).astype(int), nbins - 1)
    sum_c = np.bincount(b_idx, weights=c_vals, minlength=nbins)
    sum_n = np.bincount(b_idx, weights=n_vals, minlength=nbins)
    sum_d = np.bincount(b_idx, weights=n_vals * dist, minlength=nbins)

    keep = sum_n > 0
    centers = sum_d[keep] / sum_n[keep]
    corr = sum_c[keep] / sum_n[keep]
    counts = sum_n[keep].astype(np.int64)

    return AcfSample(
        bin_centers=np.concatenate([[0.0], centers]),
        mean_corr=np.concatenate([[1.0], np.clip(corr, -1.0, 1.0)]),
        pair_count=np.concatenate([[n_valid], counts]),
        n_zero_variance=n_zero,
    )


# ---------------------------------------------------------------------------
# model fitting


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _fit_curve(r, y, w, starts, max_iter=200, rtol=1e-10):
    """Weighted least squares of the mixed model on (r, y) with weights w.

    Unconstrained parameterization u = (alpha, beta, gamma) with
    a = logistic(alpha), b = exp(beta), c = exp(gamma); damped Gauss-Newton
    steps with an adaptive Levenberg damping factor. Returns
    (params, objective, converged) for the best start.
    """
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    sw = np.sqrt(w)

    def unpack(u):
        a = float(_logistic(np.clip(u[0], -60.0, 60.0)))
        b = float(np.exp(np.clip(u[1], math.log(1e-8), math.log(1e8))))
        c = float(np.exp(np.clip(u[2], math.log(1e-8), math.log(1e8))))
        return AcfParams(min(max(a, 1e-12), 1.0 - 1e-12), b, c)

    def objective(u):
        p = unpack(u)
        res = sw * (y - acf_eval(p, r))
        return float(res @ res), p

    best = (math.inf, None, False)
    for a0, b0, c0 in starts:
        a0 = min(max(a0, 1e-3), 1.0 - 1e-3)
        u = np.array([math.log(a0 / (1.0 - a0)), math.log(b0), math.log(c0)])
        f, p = objective(u)
        lam = 1e-3
        converged = False
        for _ in range(max_iter):
            a, b, c = p.a, p.b, p.c
            J_model = acf_jacobian(p, r)
            # chain rule onto the unconstrained coordinates
            scale = np.array([a * (1.0 - a), b, c])
            J = -sw[:, None] * J_model * scale[None, :]
            res = sw * (y - acf_eval(p, r))
            g = J.T @ res
            H = J.T @ J
            stepped = False
            for _ in range(25):
                try:
                    delta = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-14), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                f_new, p_new = objective(u + delta)
                if f_new < f:
                    u = u + delta
                    rel = (f - f_new) / max(f_new, 1e-300)
                    f, p = f_new, p_new
                    lam = max(lam / 3.0, 1e-12)
                    stepped = True
                    if rel < rtol:
                        converged = True
                    break
                lam *= 10.0
            if not stepped:
                # no descent direction survives the damping: the objective
                # cannot decrease, which meets the relative-decrease criterion
                converged = True
            if converged:
                break
        if f < best[0]:
            best = (f, p, converged)
    return best[1], best[0], best[2]


def _halfwidth_guess(r, y):
    """Crude r where the empirical curve crosses 1/2, for initialization."""
    below = np.nonzero(y < 0.5)[0]
    if below.size == 0:
        return float(r[-1]) / 2.0
    i = below[0]
    if i == 0:
        return max(float(r[0]) / 2.0, 1e-3)
    r0, r1 = r[i - 1], r[i]
    y0, y1 = y[i - 1], y[i]
    if y0 == y1:
        return float(r1)
    return float(r0 + (0.5 - y0) * (r1 - r0) / (y1 - y0))


def fit_acf(sample: AcfSample) -> AcfParams:
    """Fit the mixed model to a binned sample by weighted least squares.

    Weights are proportional to pair counts. Five deterministic restarts
    around a Gaussian-shape initial guess; raises FitFailureError (carrying
    the best point) if no restart converges.
    """
    r, y, w = sample.fitting()
    if r.size < MIN_FIT_BINS:
        raise InsufficientDataError(
            f"need >= {MIN_FIT_BINS} nonzero-distance bins, got {r.size}"
        )
    s = max(_halfwidth_guess(r, y) * 2.0 / GAUSS_WIDTH, 1e-2)
    starts = [
        (0.5, s, s),
        (0.2, s, s),
        (0.8, s, s),
        (0.5, 0.5 * s, 2.0 * s),
        (0.5, 2.0 * s, 0.5 * s),
    ]
    params, obj, converged = _fit_curve(r, y, w, starts)
    if not converged or params is None:
        raise FitFailureError(
            f"ACF fit did not converge (objective {obj:.3e})",
            best_params=params, objective=obj,
        )
    return params


# ---------------------------------------------------------------------------
# widths


def fwhm_from_acf(params: AcfParams, tol: float = 1e-12) -> FwhmEstimate:
    """Full width at half maximum of the model curve: 2 * r_half with
    rho(r_half) = 1/2, found by bracketing and bisection."""
    lo, hi = 0.0, max(params.b, params.c)
    while acf_eval(params, hi) >= 0.5:
        hi *= 2.0
        if hi > 1e9:
            raise FitFailureError("ACF never falls below 1/2")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = acf_eval(params, mid)
        if abs(v - 0.5) < tol:
            return FwhmEstimate(2.0 * mid, "mixed", params)
        if v > 0.5:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps * max(hi, 1.0):
            break
    return FwhmEstimate(lo + hi, "mixed", params)


def fit_fwhm(sample: AcfSample) -> FwhmEstimate:
    """Convenience: fit the mixed model, then take its half-width."""
    return fwhm_from_acf(fit_acf(sample))


MIN_AXIS_PAIRS = 100


def gaussian_fwhm_classic(series: Series4D, mask: Mask) -> FwhmEstimate:
    """Gaussian-shape smoothness from first differences.

    Per axis k: rhohat_k = 1 - var(diff_k) / (2 var(field)) over in-mask
    adjacent pairs and frames; width_k = GAUSS_WIDTH * d_k / sqrt(-2 ln
    rhohat_k). The combined estimate is the geometric mean over axes. Axes
    with rhohat_k <= 0 are dropped with a warning recorded; if all three drop,
    raises SmoothnessUndefinedError.
    """
    check_same_grid(series, mask)
    if series.n_frames < 2:
        raise InsufficientDataError("classic estimator needs >= 2 frames")
    if mask.in_count < MIN_MASK_VOXELS:
        raise InsufficientDataError(
            f"need >= {MIN_MASK_VOXELS} in-mask voxels, got {mask.in_count}"
        )
    flags = mask.flags
    data = series.data
    sub = data[flags]
    sub = sub - sub.mean(axis=1, keepdims=True)
    demeaned = np.zeros_like(data)
    demeaned[flags] = sub
    n_field = sub.size
    var_field = float((sub**2).sum()) / (n_field - 1)
    if var_field == 0:
        raise DegenerateDataError("field has zero variance in mask")

    widths = []
    dropped = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        pair = flags[tuple(lo)] & flags[tuple(hi)]
        n_pairs = int(pair.sum())
        if n_pairs < MIN_AXIS_PAIRS:
            raise InsufficientDataError(
                f"axis {axis}: need >= {MIN_AXIS_PAIRS} in-mask adjacent pairs, "
                f"got {n_pairs}"
            )
        diff = demeaned[tuple(hi)] - demeaned[tuple(lo)]
        d = diff[pair]  # (n_pairs, nt)
        var_diff = float((d**2).sum()) / (d.size - 1)
        rhohat = 1.0 - var_diff / (2.0 * var_field)
        if rhohat <= 0.0:
            dropped.append(axis)
            continue
        widths.append(GAUSS_WIDTH * series.grid.spacing[axis] / math.sqrt(-2.0 * math.log(rhohat)))

    if not widths:
        raise SmoothnessUndefinedError(
            "first-difference correlation <= 0 on every axis"
        )
    fwhm = float(np.exp(np.mean(np.log(widths))))
    warning = None
    if dropped:
        warning = "smoothness undefined on axis " + ",".join(map(str, dropped))
    return FwhmEstimate(fwhm, "gaussian", None, warning)


# ---------------------------------------------------------------------------
# serialization


def write_acf_sample_csv(sample: AcfSample, path) -> None:
    with open(path, "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["r_mm", "mean_corr", "pair_count"])
        for r, y, n in zip(sample.bin_centers, sample.mean_corr, sample.pair_count):
            wtr.writerow([repr(float(r)), repr(float(y)), int(n)])


def read_acf_sample_csv(path, n_zero_variance: int = 0) -> AcfSample:
    rows = []
    with open(path, newline="") as f:
        rdr = csv.reader(f)
        header = next(rdr)
        if header[:3] != ["r_mm", "mean_corr", "pair_count"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in rdr:
            rows.append((float(row[0]), float(row[1]), int(row[2])))
    arr = np.array(rows, dtype=float)
    return AcfSample(arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64), n_zero_variance)


def write_params_csv(params: AcfParams, fwhm_mm: float, path) -> None:
    """One-row CSV with the fitted parameters and the derived width."""
    with open(path, "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["a", "b", "c", "fwhm_mm"])
        wtr.writerow([repr(params.a), repr(params.b), repr(params.c), repr(float(fwhm_mm))])
