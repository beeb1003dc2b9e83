"""sklearn-style facades over the functional core.

These follow the estimator contract (constructor stores hyperparameters
verbatim, ``fit`` returns self, fitted state lives in trailing-underscore
attributes, ``get_params``/``set_params``/``clone`` work), so the pieces
compose with the wider ecosystem while the numerical work stays in the
functional modules.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .acf import fit_acf, fwhm_from_acf, gaussian_fwhm_classic, sample_acf
from .cluster import Connectivity, Sidedness
from .clustsim import SimConfig, run_simulation, threshold_from_table
from .synth import build_plan, synthesize_field
from .validation import as_acf_params, as_grid, as_mask, as_series, check_probability


def _require_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(
            f"This {type(est).__name__} instance is not fitted yet; call fit first."
        )


class SmoothnessEstimator(BaseEstimator):
    """Estimate spatial smoothness of a masked noise series.

    model='mixed' samples the radial autocorrelation and fits the mixed
    Gaussian plus exponential shape; model='gaussian' uses the classic
    first-difference estimator. Both report the ACF full width at half
    maximum in mm.

    Attributes after fit: ``fwhm_``; for the mixed model additionally
    ``acf_params_`` and ``sample_``; ``warning_`` carries degraded-axis notes.
    """

    def __init__(self, model: str = "mixed", r_max: float = 20.0,
                 bin_width: float | None = None):
        self.model = model
        self.r_max = r_max
        self.bin_width = bin_width

    def fit(self, X, y=None, *, mask=None, grid=None):
        if self.model not in ("mixed", "gaussian"):
            raise ValueError(f"model must be 'mixed' or 'gaussian', got {self.model!r}")
        series = as_series(X, grid)
        mask = as_mask(mask, series.grid)
        if self.model == "gaussian":
            est = gaussian_fwhm_classic(series, mask)
        else:
            self.sample_ = sample_acf(series, mask, r_max=self.r_max,
                                      bin_width=self.bin_width)
            self.acf_params_ = fit_acf(self.sample_)
            est = fwhm_from_acf(self.acf_params_)
        self.fwhm_ = est.fwhm_mm
        self.warning_ = est.warning
        return self

    def predict(self, X=None):
        """The fitted FWHM in mm (input is ignored; kept for API symmetry)."""
        _require_fitted(self, "fwhm_")
        return self.fwhm_


class NoiseSampler(BaseEstimator):
    """Generate unit-variance noise fields with a prescribed ACF.

    fit(X, grid=...) takes ACF parameters (AcfParams or an (a, b, c) triple)
    and precomputes the spectral plan; ``sample(seed)`` then yields
    reproducible realizations keyed by seed alone.
    """

    def __init__(self, pad_mm: float | None = None):
        self.pad_mm = pad_mm

    def fit(self, X, y=None, *, grid):
        params = as_acf_params(X)
        self.plan_ = build_plan(as_grid(grid), params, self.pad_mm)
        self.clipped_mass_ = self.plan_.clipped_mass
        return self

    def sample(self, seed: int):
        _require_fitted(self, "plan_")
        return synthesize_field(self.plan_, seed)


class ClusterThresholdSimulator(BaseEstimator):
    """Monte Carlo cluster-size thresholds for ACF-matched noise.

    fit(X, grid=..., mask=...) runs the simulation for ACF parameters X and
    stores the max-size table and the threshold table. ``predict(pthr)``
    returns the integer voxel threshold for one of the simulated rates.
    """

    def __init__(self, pthr=(0.01, 0.005, 0.002, 0.001), athr: float = 0.05,
                 nn: int = 2, sided: str = "one", n_iter: int = 10000,
                 seed: int = 0, pad_mm: float | None = None, n_jobs: int = 1):
        self.pthr = pthr
        self.athr = athr
        self.nn = nn
        self.sided = sided
        self.n_iter = n_iter
        self.seed = seed
        self.pad_mm = pad_mm
        self.n_jobs = n_jobs

    def fit(self, X, y=None, *, grid, mask=None):
        grid = as_grid(grid)
        config = SimConfig(
            params=as_acf_params(X),
            grid=grid,
            mask=None if mask is None else as_mask(mask, grid),
            pthr=tuple(self.pthr),
            athr=check_probability(self.athr, "athr"),
            connectivity=Connectivity.parse(self.nn),
            sided=Sidedness.parse(self.sided),
            n_iter=self.n_iter,
            master_seed=self.seed,
            pad_mm=self.pad_mm,
        )
        self.max_size_table_ = run_simulation(config, n_jobs=self.n_jobs)
        self.threshold_table_ = threshold_from_table(self.max_size_table_, config.athr)
        return self

    def predict(self, pthr):
        _require_fitted(self, "threshold_table_")
        p = check_probability(pthr, "pthr")
        if p not in self.threshold_table_.pthr:
            raise ValueError(
                f"pthr {p} was not simulated; available: {self.threshold_table_.pthr}"
            )
        return self.threshold_table_.voxels_at(p)
