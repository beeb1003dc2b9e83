"""Command-line interface.

Subcommands: estimate (smoothness from volumes), simulate (Monte Carlo
cluster thresholds), stability (the full grid-step experiment), plot
(regenerate figures from a stored report). Diagnostics go to stderr; data
outputs go to files or stdout. Exit codes: 0 success, 1 usage/config error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .acf import (
    fit_acf,
    fwhm_from_acf,
    gaussian_fwhm_classic,
    sample_acf,
    write_acf_sample_csv,
)
from .cluster import Connectivity, Sidedness
from .clustsim import SimConfig, clustsim
from .errors import ConfigError, DataError, NumericalError
from .grid import Mask, Series4D, VolumeGrid
from .harness import ExperimentConfig, emit_report, plot_from_report, read_config, run_experiment
from .nifti import read_mask, read_volume

log = logging.getLogger("acfsim")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the package contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acfsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate smoothness from volumes")
    p.add_argument("inputs", nargs="+", metavar="VOLUME",
                   help="one 4-D .nii or several 3-D .nii frames on one grid")
    p.add_argument("--mask", metavar="PATH", help="mask volume (> 0 is in)")
    p.add_argument("--rmax", type=float, default=20.0,
                   help="max pair distance in mm (default 20)")
    p.add_argument("--binwidth", type=float, default=None,
                   help="distance bin width in mm (default: min voxel spacing)")
    p.add_argument("--gaussian-only", action="store_true",
                   help="skip the ACF fit; classic estimator only")
    p.add_argument("--out", metavar="PREFIX",
                   help="write PREFIX.params.csv and PREFIX.sample.csv instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo cluster-size thresholds")
    p.add_argument("--acf", nargs=3, type=float, required=True,
                   metavar=("A", "B", "C"), help="ACF model parameters")
    p.add_argument("--grid", nargs=3, type=int, metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing", nargs=3, type=float, metavar=("DX", "DY", "DZ"))
    p.add_argument("--mask", metavar="PATH",
                   help="mask volume; its grid is used when --grid is omitted")
    p.add_argument("--pthr", nargs="+", type=float,
                   default=[0.01, 0.005, 0.002, 0.001],
                   help="per-voxel rates (default 0.01 0.005 0.002 0.001)")
    p.add_argument("--athr", type=float, default=0.05,
                   help="cluster-level rate (default 0.05)")
    p.add_argument("--niter", type=int, default=10000,
                   help="realizations (default 10000)")
    p.add_argument("--nn", type=int, choices=(1, 2, 3), default=2,
                   help="neighbor connectivity level (default 2)")
    p.add_argument("--sided", choices=("one", "two"), default="one")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", metavar="PATH", help="threshold CSV (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stability", help="grid-step stability experiment")
    p.add_argument("config", nargs="?", metavar="CONFIG",
                   help="key = value config file (defaults when omitted)")
    p.add_argument("--out", metavar="DIR", default="stability_out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config master seed")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("plot", help="regenerate figures from report.csv")
    p.add_argument("report", metavar="REPORT_CSV")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="output directory (default: alongside the report)")
    p.set_defaults(func=cmd_plot)

    return parser


def _load_series(paths) -> Series4D:
    vols = [read_volume(p) for p in paths]
    if len(vols) == 1 and isinstance(vols[0], Series4D):
        return vols[0]
    frames = []
    for p, v in zip(paths, vols):
        if isinstance(v, Series4D):
            raise DataError(f"{p}: mixing 4-D inputs with multiple files")
        frames.append(v)
    return Series4D.from_frames(frames)


def cmd_estimate(args) -> int:
    series = _load_series(args.inputs)
    mask = read_mask(args.mask) if args.mask else Mask.full(series.grid)
    if mask.grid != series.grid:
        raise DataError("mask grid does not match input grid")
    log.info("estimate: %d frames on %s grid, %d in-mask voxels",
             series.n_frames, "x".join(map(str, series.grid.shape)), mask.in_count)

    gauss = None
    try:
        gauss = gaussian_fwhm_classic(series, mask)
        if gauss.warning:
            log.warning("classic estimator: %s", gauss.warning)
    except DataError as e:
        if args.gaussian_only:
            raise
        log.warning("classic estimator failed: %s", e)

    header = ["a", "b", "c", "fwhm_mm", "gauss_fwhm_mm"]
    if args.gaussian_only:
        row = ["", "", "", "", repr(gauss.fwhm_mm)]
        sample = None
    else:
        sample = sample_acf(series, mask, r_max=args.rmax, bin_width=args.binwidth)
        if sample.n_zero_variance:
            log.warning("%d zero-variance voxels excluded", sample.n_zero_variance)
        params = fit_acf(sample)
        est = fwhm_from_acf(params)
        log.info("fit: a=%.4f b=%.4f c=%.4f fwhm=%.4f mm", params.a, params.b,
                 params.c, est.fwhm_mm)
        row = [repr(params.a), repr(params.b), repr(params.c), repr(est.fwhm_mm),
               "" if gauss is None else repr(gauss.fwhm_mm)]

    text = ",".join(header) + "\n" + ",".join(row) + "\n"
    if args.out:
        with open(f"{args.out}.params.csv", "w") as f:
            f.write(text)
        if sample is not None:
            write_acf_sample_csv(sample, f"{args.out}.sample.csv")
        log.info("wrote %s.params.csv", args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    mask = None
    if args.mask:
        mask = read_mask(args.mask)
        grid = mask.grid
        if args.grid or args.spacing:
            if args.grid and tuple(args.grid) != grid.shape:
                raise DataError("--grid disagrees with the mask volume")
            if args.spacing and tuple(args.spacing) != grid.spacing:
                raise DataError("--spacing disagrees with the mask volume")
    else:
        if not args.grid or not args.spacing:
            raise ConfigError("need --grid and --spacing when no --mask is given")
        grid = VolumeGrid(*args.grid, *args.spacing)

    from .acf import AcfParams

    config = SimConfig(
        params=AcfParams(*args.acf),
        grid=grid,
        mask=mask,
        pthr=tuple(args.pthr),
        athr=args.athr,
        connectivity=Connectivity.parse(args.nn),
        sided=Sidedness.parse(args.sided),
        n_iter=args.niter,
        master_seed=args.seed,
    )
    log.info("simulate: grid=%s spacing=%s mask=%d voxels n_iter=%d seed=%d "
             "nn=%d sided=%s", "x".join(map(str, grid.shape)),
             "x".join(f"{s:g}" for s in grid.spacing), config.in_count,
             config.n_iter, config.master_seed, int(config.connectivity),
             config.sided.value)
    table = clustsim(config, n_jobs=args.jobs, out_path=args.out)
    if args.out:
        log.info("wrote %s", args.out)
    else:
        import io

        buf = io.StringIO()
        for key in sorted(table.metadata):
            buf.write(f"# {key} = {table.metadata[key]}\n")
        buf.write("pthr,threshold_voxels,threshold_mm3\n")
        for p, v, mm in zip(table.pthr, table.threshold_voxels, table.threshold_mm3):
            buf.write(f"{p!r},{v},{mm!r}\n")
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_stability(args) -> int:
    config = read_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    log.info("stability: %d subjects, conditions=%s, steps=%s mm, n_iter=%d, "
             "seed=%d, jobs=%d", config.n_subjects, ",".join(config.conditions),
             ",".join(f"{d:g}" for d in config.resample_mm), config.n_iter,
             config.master_seed, args.jobs)
    report = run_experiment(config, n_jobs=args.jobs)
    written = emit_report(report, args.out)
    for path in written:
        log.info("wrote %s", path)
    return 0


def cmd_plot(args) -> int:
    out = args.out
    if out is None:
        from pathlib import Path

        out = Path(args.report).resolve().parent
    written = plot_from_report(args.report, out)
    for path in written:
        log.info("wrote %s", path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args) or 0
    except ConfigError as e:
        log.error("%s", e)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        log.error("%s", e)
        return 2
    except NumericalError as e:
        log.error("%s", e)
        return 3
    except ValueError as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
