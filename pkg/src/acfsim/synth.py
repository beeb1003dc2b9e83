"""Gaussian random fields with a prescribed radial autocorrelation.

The target ACF is tabulated on a padded periodic grid, its DFT gives the
power spectrum (negative values, which appear when the tabulated curve is not
exactly positive definite on the torus, are clipped to zero and the clipped
mass fraction recorded), and realizations are white Gaussian noise filtered by
the square root of that spectrum. Padding keeps the periodic wrap-around out
of the cropped result.

Noise comes from numpy's Philox counter-based generator keyed by the caller's
seed, so realizations are reproducible individually and in any order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fftn, irfftn, next_fast_len, rfftn

from .acf import AcfParams, acf_eval, fwhm_from_acf
from .errors import NumericalError
from .grid import ScalarField, VolumeGrid
from .rng import generator

log = logging.getLogger(__name__)

CLIPPED_MASS_WARN = 0.01


@dataclass(frozen=True, eq=False)
class SynthPlan:
    """Precomputed spectral filter for one (grid, params) pair."""

    grid: VolumeGrid
    params: AcfParams
    pad_mm: float
    padded_shape: tuple[int, int, int]
    filter_rfft: np.ndarray = field(repr=False)
    clipped_mass: float = 0.0
    warning: str | None = None


def build_plan(grid: VolumeGrid, params: AcfParams,
               pad_mm: float | None = None) -> SynthPlan:
    """Build the spectral filter for fields on ``grid`` with ACF ``params``.

    pad_mm is the padding per side; it defaults to, and must be at least,
    twice the model FWHM so the periodic tabulation cannot fold noticeable
    correlation back into the cropped volume.
    """
    fwhm = fwhm_from_acf(params).fwhm_mm
    if pad_mm is None:
        pad_mm = 2.0 * fwhm
    if pad_mm < 2.0 * fwhm - 1e-9:
        raise ValueError(f"pad_mm must be >= 2*FWHM = {2.0 * fwhm:.3f} mm")

    padded = tuple(
        next_fast_len(grid.shape[a] + 2 * int(math.ceil(pad_mm / grid.spacing[a])))
        for a in range(3)
    )
    # periodic distance tabulation of the ACF
    coords = []
    for a in range(3):
        i = np.arange(padded[a])
        coords.append(grid.spacing[a] * np.minimum(i, padded[a] - i))
    r = np.sqrt(
        coords[0][:, None, None] ** 2
        + coords[1][None, :, None] ** 2
        + coords[2][None, None, :] ** 2
    )
    rho = acf_eval(params, r)

    power = fftn(rho).real
    total = float(np.abs(power).sum())
    neg = power < 0
    clipped = float(-power[neg].sum()) / total + 0.0 if total > 0 else 0.0
    power[neg] = 0.0

    warning = None
    if clipped > CLIPPED_MASS_WARN:
        warning = (
            f"ACF tabulation is ill-conditioned: clipped spectral mass "
            f"{clipped:.3e} exceeds {CLIPPED_MASS_WARN}"
        )
        log.warning(warning)

    filt = np.sqrt(power[:, :, : padded[2] // 2 + 1])
    return SynthPlan(grid, params, float(pad_mm), padded, filt, clipped, warning)


def _synthesize_values(plan: SynthPlan, seed: int) -> np.ndarray:
    """Cropped, standardized realization as a bare array."""
    rng = generator(seed)
    white = rng.standard_normal(plan.padded_shape)
    spec = rfftn(white)
    spec *= plan.filter_rfft
    full = irfftn(spec, s=plan.padded_shape)
    nx, ny, nz = plan.grid.shape
    out = full[:nx, :ny, :nz]
    sd = out.std(ddof=1) if out.size > 1 else 0.0
    if sd == 0:
        raise NumericalError("synthesized field is constant; cannot standardize")
    return (out - out.mean()) / sd


def synthesize_field(plan: SynthPlan, seed: int) -> ScalarField:
    """One realization for ``seed``: white noise filtered to the plan's
    spectrum, cropped, and standardized to mean 0 / unit sample variance
    (ddof=1) over the cropped grid."""
    return ScalarField(plan.grid, _synthesize_values(plan, seed))
