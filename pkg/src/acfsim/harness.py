"""Grid-resolution stability experiment on synthetic subjects.

Each synthetic subject is a noise series on a native anisotropic grid with a
per-subject jittered ACF. The pipeline under test resamples the series to a
set of isotropic grid steps, blurs in mask, re-estimates smoothness, and runs
the Monte Carlo cluster threshold at each step. The report then summarizes,
per subject, how the estimated FWHM (W) and the cluster-size threshold in
mm^3 at the strictest per-voxel rate (C) move across grid steps.

Because the estimates are taken after resampling and blurring, the recovered
FWHM reflects the processed series, not the native ACF; all stability metrics
compare like-processed values across grid steps only. Overall deltas (finest
vs coarsest) are computed as the sum of the consecutive deltas, making the
telescoping identity hold bitwise.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .acf import AcfParams, fit_acf, fwhm_from_acf, sample_acf
from .cluster import Connectivity, Sidedness
from .clustsim import SimConfig, ThresholdTable, clustsim
from .errors import ConfigError
from .grid import (
    Mask,
    Series4D,
    VolumeGrid,
    blur_series_in_mask,
    resample_series,
)
from .plots import line_chart_svg
from .rng import derive_stream, generator, stream_key
from .stats import (
    DeltaStats,
    PairedTResult,
    delta_stats,
    format_delta_line,
    format_paired_line,
    paired_t_test,
)
from .synth import build_plan, _synthesize_values

# stream tags (arbitrary, fixed): subject derivation, ACF jitter, frame noise,
# per-cell simulation seeds
_TAG_SUBJECT = 1000
_TAG_JITTER = 5
_TAG_FRAMES = 10
_TAG_SIM = 20


@dataclass(frozen=True)
class ExperimentConfig:
    n_subjects: int = 10
    native_shape: tuple = (20, 20, 15)
    native_spacing: tuple = (3.0, 3.0, 4.0)
    n_frames: int = 60
    base_acf: tuple = (0.5, 2.0, 2.5)
    jitter_a: float = 0.1      # additive, clipped to [0.05, 0.95]
    jitter_bc: float = 0.1     # multiplicative, exp(U(-j, j))
    resample_mm: tuple = (3.0, 2.0, 1.0)
    blur_fwhm_mm: float = 8.0
    conditions: tuple = ("task", "rest")
    pthr: tuple = (0.01, 0.005, 0.002, 0.001)
    athr: float = 0.05
    nn: int = 2
    sided: str = "one"
    n_iter: int = 2000
    master_seed: int = 0
    r_max: float = 20.0
    bin_width: float | None = None
    mask_shape: str = "full"  # 'full' or 'ellipsoid'

    def __post_init__(self):
        object.__setattr__(self, "native_shape", tuple(int(v) for v in self.native_shape))
        object.__setattr__(self, "native_spacing", tuple(float(v) for v in self.native_spacing))
        object.__setattr__(self, "base_acf", tuple(float(v) for v in self.base_acf))
        object.__setattr__(self, "resample_mm", tuple(float(v) for v in self.resample_mm))
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "pthr", tuple(float(v) for v in self.pthr))
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if len(self.resample_mm) < 2 or any(
            b <= a for a, b in zip(self.resample_mm[1:], self.resample_mm[:-1])
        ):
            raise ConfigError("resample_mm must be strictly decreasing, >= 2 entries")
        if any(v <= 0 for v in self.resample_mm):
            raise ConfigError("resample_mm entries must be > 0")
        if not self.conditions or len(set(self.conditions)) != len(self.conditions):
            raise ConfigError("conditions must be non-empty and distinct")
        if self.blur_fwhm_mm < 0:
            raise ConfigError("blur_fwhm_mm must be >= 0")
        if self.mask_shape not in ("full", "ellipsoid"):
            raise ConfigError(f"mask_shape must be full or ellipsoid, got {self.mask_shape!r}")
        AcfParams(*self.base_acf)  # validates

    def native_grid(self) -> VolumeGrid:
        return VolumeGrid(*self.native_shape, *self.native_spacing)

    def target_pthr(self) -> float:
        """Rate used for the cluster-threshold stability metric."""
        return 0.001 if 0.001 in self.pthr else min(self.pthr)

    def mask_for(self, grid: VolumeGrid) -> Mask:
        if self.mask_shape == "ellipsoid":
            return Mask.ellipsoid(grid)
        return Mask.full(grid)


# config file: plain "key = value" lines, '#' comments

def _parse_floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split())


def _parse_ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split())


_CONFIG_PARSERS = {
    "n_subjects": int,
    "native_shape": _parse_ints,
    "native_spacing": _parse_floats,
    "n_frames": int,
    "base_acf": _parse_floats,
    "jitter_a": float,
    "jitter_bc": float,
    "resample_mm": _parse_floats,
    "blur_fwhm_mm": float,
    "conditions": lambda s: tuple(s.split()),
    "pthr": _parse_floats,
    "athr": float,
    "nn": int,
    "sided": str,
    "n_iter": int,
    "master_seed": int,
    "r_max": float,
    "bin_width": lambda s: None if s == "auto" else float(s),
    "mask_shape": str,
}


def read_config(path) -> ExperimentConfig:
    """Parse a key = value config file; unknown keys are an error."""
    values = {}
    unknown = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            parser = _CONFIG_PARSERS.get(key)
            if parser is None:
                unknown.append(key)
                continue
            try:
                values[key] = parser(val)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(**values)


def write_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        f.write(f"n_subjects = {config.n_subjects}\n")
        f.write(f"native_shape = {' '.join(str(v) for v in config.native_shape)}\n")
        f.write(f"native_spacing = {' '.join(f'{v:g}' for v in config.native_spacing)}\n")
        f.write(f"n_frames = {config.n_frames}\n")
        f.write(f"base_acf = {' '.join(f'{v:g}' for v in config.base_acf)}\n")
        f.write(f"jitter_a = {config.jitter_a:g}\n")
        f.write(f"jitter_bc = {config.jitter_bc:g}\n")
        f.write(f"resample_mm = {' '.join(f'{v:g}' for v in config.resample_mm)}\n")
        f.write(f"blur_fwhm_mm = {config.blur_fwhm_mm:g}\n")
        f.write(f"conditions = {' '.join(config.conditions)}\n")
        f.write(f"pthr = {' '.join(f'{v:g}' for v in config.pthr)}\n")
        f.write(f"athr = {config.athr:g}\n")
        f.write(f"nn = {config.nn}\n")
        f.write(f"sided = {config.sided}\n")
        f.write(f"n_iter = {config.n_iter}\n")
        f.write(f"master_seed = {config.master_seed}\n")
        f.write(f"r_max = {config.r_max:g}\n")
        f.write(f"bin_width = {'auto' if config.bin_width is None else f'{config.bin_width:g}'}\n")
        f.write(f"mask_shape = {config.mask_shape}\n")


@dataclass(frozen=True, eq=False)
class SubjectCell:
    """Result of one (subject, condition, grid step) pipeline pass."""

    subject: int
    condition: str
    delta_mm: float
    acf: AcfParams | None = None
    fwhm_mm: float | None = None
    warning: str | None = None
    table: ThresholdTable | None = None
    error: str | None = None


def subject_acf(subject_seed: int, config: ExperimentConfig) -> AcfParams:
    """Deterministic per-subject jitter of the base ACF."""
    rng = generator(stream_key(derive_stream(subject_seed, _TAG_JITTER), 0))
    u = rng.uniform(-1.0, 1.0, size=3)
    a0, b0, c0 = config.base_acf
    a = float(np.clip(a0 + config.jitter_a * u[0], 0.05, 0.95))
    b = float(b0 * math.exp(config.jitter_bc * u[1]))
    c = float(c0 * math.exp(config.jitter_bc * u[2]))
    return AcfParams(a, b, c)


def _native_series(subject_seed: int, config: ExperimentConfig,
                   cond_index: int) -> Series4D:
    grid = config.native_grid()
    params = subject_acf(subject_seed, config)
    plan = build_plan(grid, params)
    stream = derive_stream(subject_seed, _TAG_FRAMES + cond_index)
    frames = np.empty(grid.shape + (config.n_frames,))
    for t in range(config.n_frames):
        frames[:, :, :, t] = _synthesize_values(plan, stream_key(stream, t))
    return Series4D(grid, frames)


def run_subject(subject_seed: int, config: ExperimentConfig, subject_index: int,
                cond_index: int, n_jobs: int = 1) -> list[SubjectCell]:
    """All grid-step cells for one subject and condition.

    Failures in a cell are recorded on the cell and do not abort the rest.
    """
    cond = config.conditions[cond_index]
    try:
        native = _native_series(subject_seed, config, cond_index)
    except Exception as e:  # noqa: BLE001 - recorded, not silenced
        return [
            SubjectCell(subject_index, cond, d, error=f"{type(e).__name__}: {e}")
            for d in config.resample_mm
        ]

    cells = []
    for d_index, delta in enumerate(config.resample_mm):
        try:
            target = VolumeGrid.isotropic_like(native.grid, delta)
            mask = config.mask_for(target)
            series = resample_series(native, target)
            if config.blur_fwhm_mm > 0:
                series = blur_series_in_mask(series, config.blur_fwhm_mm, mask)
            sample = sample_acf(series, mask, r_max=config.r_max,
                                bin_width=config.bin_width)
            params = fit_acf(sample)
            est = fwhm_from_acf(params)
            sim = SimConfig(
                params=params,
                grid=target,
                mask=None if config.mask_shape == "full" else mask,
                pthr=config.pthr,
                athr=config.athr,
                connectivity=Connectivity.parse(config.nn),
                sided=Sidedness.parse(config.sided),
                n_iter=config.n_iter,
                master_seed=derive_stream(subject_seed, _TAG_SIM + cond_index, d_index),
            )
            table = clustsim(sim, n_jobs=n_jobs)
            cells.append(SubjectCell(subject_index, cond, delta, params,
                                     est.fwhm_mm, est.warning, table))
        except Exception as e:  # noqa: BLE001 - recorded, not silenced
            cells.append(SubjectCell(subject_index, cond, delta,
                                     error=f"{type(e).__name__}: {e}"))
    return cells


def _run_unit(config: ExperimentConfig, subject_index: int, cond_index: int):
    seed = derive_stream(config.master_seed, _TAG_SUBJECT + subject_index)
    return run_subject(seed, config, subject_index, cond_index)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    config: ExperimentConfig
    cells: tuple
    delta_labels: tuple            # e.g. ('2-3', '1-2', '1-3')
    fwhm_deltas: dict              # (condition, label) -> {subject: value}
    csize_deltas: dict             # (condition, label) -> {subject: value}
    fwhm_stats: dict               # (condition, label) -> DeltaStats
    csize_stats: dict              # (condition, label) -> DeltaStats
    paired_fwhm: dict = field(default_factory=dict)   # label -> PairedTResult
    paired_csize: dict = field(default_factory=dict)  # label -> PairedTResult


def delta_pairs(resample_mm) -> list[tuple[str, list[tuple[float, float]]]]:
    """(label, [(fine, coarse), ...]) for consecutive steps plus the overall
    pair; the overall delta is the sum over its chain of consecutive pairs."""
    sizes = list(resample_mm)
    pairs = []
    for coarse, fine in zip(sizes[:-1], sizes[1:]):
        pairs.append((f"{fine:g}-{coarse:g}", [(fine, coarse)]))
    if len(sizes) > 2:
        chain = [(fine, coarse) for coarse, fine in zip(sizes[:-1], sizes[1:])]
        pairs.append((f"{sizes[-1]:g}-{sizes[0]:g}", chain))
    return pairs


def aggregate(cells, config: ExperimentConfig) -> StabilityReport:
    """Per-condition delta statistics and cross-condition paired tests."""
    by_key = {}
    for cell in cells:
        by_key[(cell.subject, cell.condition, cell.delta_mm)] = cell

    pairs = delta_pairs(config.resample_mm)
    labels = tuple(label for label, _ in pairs)
    p_tgt = config.target_pthr()

    def cell_values(subject, cond):
        w, c = {}, {}
        for delta in config.resample_mm:
            cell = by_key.get((subject, cond, delta))
            if cell is None or cell.error is not None or cell.fwhm_mm is None:
                return None
            w[delta] = cell.fwhm_mm
            c[delta] = cell.table.mm3_at(p_tgt)
        return w, c

    fwhm_deltas: dict = {}
    csize_deltas: dict = {}
    for cond in config.conditions:
        for subject in range(config.n_subjects):
            vals = cell_values(subject, cond)
            if vals is None:
                continue
            w, c = vals
            for label, chain in pairs:
                dw = sum(w[f] - w[g] for f, g in chain)
                dc = sum(c[f] - c[g] for f, g in chain)
                fwhm_deltas.setdefault((cond, label), {})[subject] = dw
                csize_deltas.setdefault((cond, label), {})[subject] = dc

    def stats_of(deltas):
        out = {}
        for key, per_subject in deltas.items():
            if len(per_subject) >= 2:
                out[key] = delta_stats(list(per_subject.values()))
        return out

    paired_fwhm: dict = {}
    paired_csize: dict = {}
    if len(config.conditions) >= 2:
        c0, c1 = config.conditions[0], config.conditions[1]
        for label in labels:
            for deltas, target in ((fwhm_deltas, paired_fwhm),
                                   (csize_deltas, paired_csize)):
                d0 = deltas.get((c0, label), {})
                d1 = deltas.get((c1, label), {})
                common = sorted(set(d0) & set(d1))
                if len(common) >= 2:
                    target[label] = paired_t_test(
                        [d0[s] for s in common], [d1[s] for s in common]
                    )

    order = {c: i for i, c in enumerate(config.conditions)}
    cells_sorted = tuple(sorted(
        cells, key=lambda c: (c.subject, order.get(c.condition, 99), -c.delta_mm)
    ))
    return StabilityReport(
        config=config,
        cells=cells_sorted,
        delta_labels=labels,
        fwhm_deltas=fwhm_deltas,
        csize_deltas=csize_deltas,
        fwhm_stats=stats_of(fwhm_deltas),
        csize_stats=stats_of(csize_deltas),
        paired_fwhm=paired_fwhm,
        paired_csize=paired_csize,
    )


def run_experiment(config: ExperimentConfig, n_jobs: int = 1) -> StabilityReport:
    """Run every (subject, condition) unit and aggregate.

    Units are independent; with n_jobs > 1 they run in worker processes.
    Results are identical for any n_jobs because unit seeds derive from
    (master_seed, subject) alone and the merge is keyed, not ordered.
    """
    units = [(s, ci) for s in range(config.n_subjects)
             for ci in range(len(config.conditions))]
    cells = []
    if n_jobs <= 1:
        for s, ci in units:
            cells.extend(_run_unit(config, s, ci))
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as ex:
            for unit_cells in ex.map(
                _run_unit, [config] * len(units),
                [s for s, _ in units], [ci for _, ci in units],
            ):
                cells.extend(unit_cells)
    return aggregate(cells, config)


# ---------------------------------------------------------------------------
# report emission


def _fmt_float(v) -> str:
    return "" if v is None else repr(float(v))


def emit_report(report: StabilityReport, out_dir, formats=("csv", "svg", "txt")):
    """Write report.csv, per-condition blurs/csiz CSVs, spaghetti SVGs, and
    tables.txt into ``out_dir``. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = report.config
    written = []

    pcols = [f"{p:g}" for p in config.pthr]
    if "csv" in formats:
        path = out_dir / "report.csv"
        with open(path, "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(
                ["subject", "condition", "delta_mm", "a", "b", "c", "fwhm_mm",
                 "warning"]
                + [f"thr_voxels_p{pc}" for pc in pcols]
                + [f"thr_mm3_p{pc}" for pc in pcols]
                + ["error"]
            )
            for cell in report.cells:
                if cell.error is None:
                    vox = [cell.table.voxels_at(p) for p in config.pthr]
                    mm3 = [_fmt_float(cell.table.mm3_at(p)) for p in config.pthr]
                    row = [cell.subject, cell.condition, f"{cell.delta_mm:g}",
                           _fmt_float(cell.acf.a), _fmt_float(cell.acf.b),
                           _fmt_float(cell.acf.c), _fmt_float(cell.fwhm_mm),
                           cell.warning or ""] + vox + mm3 + [""]
                else:
                    row = [cell.subject, cell.condition, f"{cell.delta_mm:g}",
                           "", "", "", "", ""] + [""] * (2 * len(pcols)) + [cell.error]
                wtr.writerow(row)
        written.append(path)

        for ci, cond in enumerate(config.conditions):
            for delta in config.resample_mm:
                cells = [c for c in report.cells
                         if c.condition == cond and c.delta_mm == delta
                         and c.error is None]
                bpath = out_dir / f"blurs.{cond}.R{delta:g}.csv"
                with open(bpath, "w") as f:
                    for c in cells:
                        f.write(f"{_fmt_float(c.fwhm_mm)}\n")
                written.append(bpath)
                cpath = out_dir / f"csiz.{cond}.R{delta:g}.csv"
                with open(cpath, "w") as f:
                    for c in cells:
                        f.write(",".join(
                            _fmt_float(c.table.mm3_at(p)) for p in config.pthr
                        ) + "\n")
                written.append(cpath)

    if "svg" in formats:
        written.extend(_emit_figures(report, out_dir))

    if "txt" in formats:
        path = out_dir / "tables.txt"
        with open(path, "w") as f:
            f.write("FWHM deltas across grid steps (mm)\n")
            for cond in config.conditions:
                for label in report.delta_labels:
                    st = report.fwhm_stats.get((cond, label))
                    if st:
                        f.write("  " + format_delta_line(f"{cond} W({label})", st) + "\n")
            f.write(f"\nCluster threshold deltas (mm3 at pthr = "
                    f"{config.target_pthr():g})\n")
            for cond in config.conditions:
                for label in report.delta_labels:
                    st = report.csize_stats.get((cond, label))
                    if st:
                        f.write("  " + format_delta_line(f"{cond} C({label})", st) + "\n")
            if report.paired_fwhm or report.paired_csize:
                c0, c1 = config.conditions[0], config.conditions[1]
                f.write(f"\nPaired {c0} vs {c1}\n")
                for label in report.delta_labels:
                    r = report.paired_fwhm.get(label)
                    if r:
                        f.write("  " + format_paired_line(f"W({label})", r) + "\n")
                for label in report.delta_labels:
                    r = report.paired_csize.get(label)
                    if r:
                        f.write("  " + format_paired_line(f"C({label})", r) + "\n")
        written.append(path)

    return written


def _spaghetti(report: StabilityReport, cond: str, value):
    config = report.config
    by_key = {(c.subject, c.condition, c.delta_mm): c for c in report.cells}
    series = []
    for subject in range(config.n_subjects):
        ys = []
        for delta in config.resample_mm:
            cell = by_key.get((subject, cond, delta))
            ys.append(None if cell is None or cell.error is not None else value(cell))
        if any(y is not None for y in ys):
            series.append((f"subject {subject}", ys))
    return series


def _emit_figures(report: StabilityReport, out_dir: Path):
    config = report.config
    x_labels = [f"{d:g}" for d in config.resample_mm]  # descending
    p_tgt = config.target_pthr()
    written = []
    for cond in config.conditions:
        fw = _spaghetti(report, cond, lambda c: c.fwhm_mm)
        if fw:
            path = out_dir / f"fig2_{cond}.svg"
            path.write_text(line_chart_svg(
                x_labels, fw,
                title=f"Estimated smoothness vs grid step ({cond})",
                xlabel="voxel grid step (mm)",
                ylabel="ACF FWHM (mm)",
            ))
            written.append(path)
        cs = _spaghetti(report, cond, lambda c: c.table.mm3_at(p_tgt))
        if cs:
            path = out_dir / f"fig3_{cond}.svg"
            path.write_text(line_chart_svg(
                x_labels, cs,
                title=f"Cluster threshold vs grid step ({cond}, p={p_tgt:g})",
                xlabel="voxel grid step (mm)",
                ylabel="cluster-size threshold (mm3)",
            ))
            written.append(path)
    return written


def read_report_csv(path):
    """Rows of report.csv with numeric fields restored (None when blank)."""
    rows = []
    with open(path, newline="") as f:
        rdr = csv.DictReader(f)
        for raw in rdr:
            row = dict(raw)
            row["subject"] = int(raw["subject"])
            row["delta_mm"] = float(raw["delta_mm"])
            for key, val in raw.items():
                if key.startswith(("a", "b", "c", "fwhm", "thr_")) and key != "condition":
                    row[key] = float(val) if val not in ("", None) else None
            rows.append(row)
    return rows


def plot_from_report(report_csv_path, out_dir):
    """Regenerate the spaghetti figures from a previously written report.csv."""
    rows = read_report_csv(report_csv_path)
    if not rows:
        raise ConfigError(f"{report_csv_path}: no rows")
    conditions = list(dict.fromkeys(r["condition"] for r in rows))
    deltas = sorted({r["delta_mm"] for r in rows}, reverse=True)
    subjects = sorted({r["subject"] for r in rows})
    mm3_cols = [k for k in rows[0] if k.startswith("thr_mm3_p")]
    if not mm3_cols:
        raise ConfigError(f"{report_csv_path}: no threshold columns")
    # strictest rate = smallest numeric suffix
    target_col = min(mm3_cols, key=lambda k: float(k[len("thr_mm3_p"):]))
    p_label = target_col[len("thr_mm3_p"):]

    by_key = {(r["subject"], r["condition"], r["delta_mm"]): r for r in rows}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x_labels = [f"{d:g}" for d in deltas]
    written = []
    for cond in conditions:
        fw_series, cs_series = [], []
        for s in subjects:
            fw = [by_key.get((s, cond, d), {}).get("fwhm_mm") for d in deltas]
            cs = [by_key.get((s, cond, d), {}).get(target_col) for d in deltas]
            if any(v is not None for v in fw):
                fw_series.append((f"subject {s}", fw))
            if any(v is not None for v in cs):
                cs_series.append((f"subject {s}", cs))
        if fw_series:
            path = out_dir / f"fig2_{cond}.svg"
            path.write_text(line_chart_svg(
                x_labels, fw_series,
                title=f"Estimated smoothness vs grid step ({cond})",
                xlabel="voxel grid step (mm)",
                ylabel="ACF FWHM (mm)",
            ))
            written.append(path)
        if cs_series:
            path = out_dir / f"fig3_{cond}.svg"
            path.write_text(line_chart_svg(
                x_labels, cs_series,
                title=f"Cluster threshold vs grid step ({cond}, p={p_label})",
                xlabel="voxel grid step (mm)",
                ylabel="cluster-size threshold (mm3)",
            ))
            written.append(path)
    return written
