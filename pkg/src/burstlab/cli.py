"""``burstlab`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. Logs go to standard error; results are written to files.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, formats
from .config import load_config, merge
from .distill import TRACE_COLUMNS, DistillConfig, StationaryGaussianPrior, run_distillation
from .errors import BurstlabError, ConfigError, DivergenceError, ParameterError
from .fusion import FusionConfig, reconstruct
from .geometry import save_trajectory
from .metrics import evaluate, format_db
from .nullspace import (BccbOperator, apply_fourier_gains, fourier_null_gains, make_kernel,
                        mask_fidelity_report, null_projector)
from .pipeline import (AblationSettings, SimulationConfig, TrajectoryParams, band_limited_scene,
                       center_crop, dataset_batch, dc_shifted_prior, run_ablation_hf, save_sample,
                       simulate_pair, write_ablation_report)
from .raw import NoiseParams, luma
from .spectral import binary_mask_from, log_spectrum, lowband_zero_mask, make_mask, project

log = logging.getLogger("burstlab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

# ablation runs need a long tail for a stable low-band estimate of the naive mode
ABLATION_DEFAULTS = {"distill.steps": 4000, "distill.lr": 0.2, "distill.tail_fraction": 0.75,
                     "simulate.sr_factor": 2, "simulate.patch": 64, "simulate.n_frames": 4,
                     "trajectory.kind": "regular", "noise.shot_gain": 0.0, "noise.read_sigma": 0.0}


# --- settings ------------------------------------------------------------

def _settings(args, flags, defaults=None):
    file_values = load_config(args.config) if getattr(args, "config", None) else {}
    return merge(defaults, file_values, flags)


def _sim_config(v):
    tp = TrajectoryParams(
        kind=v.get("trajectory.kind", "synth"),
        magnitude=v.get("trajectory.magnitude", 2.0),
        smoothness=v.get("trajectory.smoothness", 0.9),
        rotation_sigma_deg=v.get("trajectory.rotation_sigma_deg", 0.1),
        scale_sigma=v.get("trajectory.scale_sigma", 0.002),
        shear_sigma=v.get("trajectory.shear_sigma", 0.001),
        perspective_sigma=v.get("trajectory.perspective_sigma", 1e-5),
        path=v.get("trajectory.path"),
    )
    if "noise.iso" in v:
        noise = NoiseParams.at_iso(v["noise.iso"], exact_poisson=v.get("noise.exact_poisson", False))
    else:
        noise = NoiseParams(v.get("noise.shot_gain", 0.01), v.get("noise.read_sigma", 0.02),
                            exact_poisson=v.get("noise.exact_poisson", False))
    s = v.get("simulate.sr_factor", 4)
    n = v.get("simulate.n_frames", s * s if tp.kind == "regular" else 11)
    try:
        return SimulationConfig(n_frames=n, sr_factor=s, patch=v.get("simulate.patch", 256),
                                trajectory=tp, noise=noise, cfa=v.get("simulate.cfa", "RGGB"),
                                seed=v.get("simulate.seed", 0))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def _mask(v, shape, prefix="mask"):
    try:
        m = make_mask(shape[0], shape[1], v.get(f"{prefix}.alpha", 0.8), v.get(f"{prefix}.beta", 0.2),
                      v.get(f"{prefix}.gamma", 4.0), v.get(f"{prefix}.radius", "min"))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return m


def _distill_config(v, mask, mode="hf_vsd"):
    try:
        return DistillConfig(lam=v.get("distill.lambda", 1.0), t_min=v.get("distill.t_min", 20),
                             t_max=v.get("distill.t_max", 980), mask=mask,
                             steps=v.get("distill.steps", 2000), lr=v.get("distill.lr", 0.05),
                             mode=mode, seed=v.get("distill.seed", 0),
                             omega=v.get("distill.omega", "constant"),
                             tail_fraction=v.get("distill.tail_fraction", 0.5))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def _read_rgb(path):
    img = formats.read_image(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img


def _sim_flags(args):
    return {
        "simulate.sr_factor": args.sr, "simulate.n_frames": args.frames, "simulate.patch": args.patch,
        "simulate.seed": args.seed, "simulate.cfa": args.cfa, "trajectory.kind": args.trajectory,
        "trajectory.path": args.trajectory_path, "trajectory.magnitude": args.magnitude,
        "trajectory.smoothness": args.smoothness, "noise.iso": args.iso,
        "noise.shot_gain": args.shot_gain, "noise.read_sigma": args.read_sigma,
        "noise.exact_poisson": True if args.exact_poisson else None,
    }


def _add_sim_flags(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--sr", type=int, help="super-resolution factor s")
    g.add_argument("--frames", type=int, help="burst length N")
    g.add_argument("--patch", type=int, help="HR patch size (center crop)")
    g.add_argument("--seed", type=int)
    g.add_argument("--cfa", choices=["RGGB", "BGGR", "GRBG", "GBRG"])
    g.add_argument("--trajectory", choices=["synth", "regular", "file"])
    g.add_argument("--trajectory-path")
    g.add_argument("--magnitude", type=float, help="tremor translation step (HR px)")
    g.add_argument("--smoothness", type=float, help="AR(1) correlation of motion increments")
    g.add_argument("--iso", type=float, help="noise level relative to the defaults")
    g.add_argument("--shot-gain", type=float)
    g.add_argument("--read-sigma", type=float)
    g.add_argument("--exact-poisson", action="store_true")


def _add_mask_flags(p, prefix=""):
    p.add_argument(f"--{prefix}alpha", type=float)
    p.add_argument(f"--{prefix}beta", type=float)
    p.add_argument(f"--{prefix}gamma", type=float)
    p.add_argument(f"--{prefix}radius", choices=["min", "max", "per-axis"])


def _mask_flags(args, prefix=""):
    key = prefix.replace("-", "_")
    return {f"mask.{k}": getattr(args, f"{key}{k}") for k in ("alpha", "beta", "gamma", "radius")}


# --- subcommands ---------------------------------------------------------

def cmd_simulate(args):
    v = _settings(args, _sim_flags(args))
    cfg = _sim_config(v)
    if args.synthetic is not None:
        gt = band_limited_scene(cfg.patch, cfg.patch, seed=args.synthetic)
    elif args.input:
        gt = center_crop(np.clip(_read_rgb(args.input), 0.0, 1.0), cfg.patch)
    else:
        raise ConfigError("simulate needs an input image or --synthetic SEED")
    sample = simulate_pair(gt, cfg)
    save_sample(sample, args.out_dir)
    log.info("wrote %d-frame burst (%dx%d) to %s", len(sample.burst), *sample.burst.frames[0].shape,
             args.out_dir)
    return EXIT_OK


def cmd_fuse(args):
    burst = formats.load_burst(args.burst_dir)
    v = _settings(args, {"fusion.sr_factor": args.sr, "fusion.kernel_sigma": args.kernel_sigma,
                         "fusion.model": args.model})
    s = v.get("fusion.sr_factor", burst.sr_factor)
    try:
        cfg = FusionConfig(sr_factor=s, kernel_sigma=v.get("fusion.kernel_sigma", 0.7),
                           min_weight=v.get("fusion.min_weight", 1e-3),
                           use_given_trajectory=args.oracle_alignment)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    rec = reconstruct(burst, cfg, model=v.get("fusion.model", "homography"),
                      levels=v.get("fusion.levels", 3))
    formats.write_pfm(args.output, rec.image)
    if args.trajectory_out:
        save_trajectory(rec.trajectory, args.trajectory_out)
    if args.png:
        formats.write_png(args.png, rec.image)
    if rec.dropped:
        log.warning("%d frame(s) dropped after failed alignment", len(rec.dropped))
    return EXIT_OK


def cmd_project(args):
    img = formats.read_image(args.input)
    v = _settings(args, _mask_flags(args))
    mask = _mask(v, img.shape)
    formats.write_pfm(args.output, project(img, mask, args.mode))
    if args.mask_out:
        formats.write_pfm(args.mask_out, mask.values)
    return EXIT_OK


def cmd_spectrum(args):
    img = formats.read_image(args.input)
    formats.write_pfm(args.output, log_spectrum(luma(img)))
    return EXIT_OK


def cmd_distill(args):
    target = formats.read_image(args.target)
    v = _settings(args, {**_mask_flags(args), "distill.lambda": args.lam, "distill.steps": args.steps,
                         "distill.lr": args.lr, "distill.seed": args.seed, "distill.t_min": args.t_min,
                         "distill.t_max": args.t_max, "distill.omega": args.omega,
                         "distill.tail_fraction": args.tail_fraction, "ablation.cutoff": args.cutoff,
                         "ablation.dc_shift": args.dc_shift,
                         "ablation.prior_variance": args.prior_variance})
    if "ablation.cutoff" in v:
        mask = lowband_zero_mask(target.shape[0], target.shape[1], v["ablation.cutoff"])
    else:
        mask = _mask(v, target.shape)
        if args.binary:
            mask = binary_mask_from(mask)
    cfg = _distill_config(v, mask, args.mode)
    reference = formats.read_image(args.reference) if args.reference else None
    if args.prior_mean:
        mean = formats.read_image(args.prior_mean)
        prior = StationaryGaussianPrior(mean, np.full(mean.shape[:2], v.get("ablation.prior_variance", 0.01)))
    else:
        base = target if reference is None else reference
        prior = dc_shifted_prior(base, v.get("ablation.dc_shift", 0.1), v.get("ablation.prior_variance", 0.01))

    out = Path(args.out)
    dump = Path(args.dump_dir) if args.dump_dir else out.parent
    formats.ensure_dir(dump)
    try:
        state = run_distillation(target, prior, cfg, reference=reference)
    except DivergenceError as exc:
        if exc.trace is not None:
            _write_trace(out, exc.trace)
        raise
    _write_trace(out, state)
    formats.write_pfm(dump / "x_init.pfm", state.x_init)
    formats.write_pfm(dump / "x_final.pfm", state.x_hat)
    formats.write_json(dump / "distill_summary.json", {
        "mode": cfg.mode, "steps": cfg.steps, "iterations": state.iteration,
        "tail_lowband_rmse": state.tail_lowband_rmse, "tail_highband_rmse": state.tail_highband_rmse,
    })
    return EXIT_OK


def _write_trace(path, state):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in state.rows():
            writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def cmd_verify_nullspace(args):
    v = _settings(args, _mask_flags(args))
    try:
        op = BccbOperator(make_kernel(args.kernel, args.n), args.decimate)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    mask = _mask(v, (args.n, args.n))
    report = mask_fidelity_report(op, mask, threshold=args.threshold)
    if op.decimation == 1:
        rng = np.random.default_rng(args.seed)
        p_dense = null_projector(op)
        gains = fourier_null_gains(op)
        worst = 0.0
        for _ in range(args.trials):
            x = rng.standard_normal((args.n, args.n))
            diff = apply_fourier_gains(gains, x).ravel() - p_dense @ x.ravel()
            worst = max(worst, float(np.linalg.norm(diff) / np.linalg.norm(x)))
        report["fourier_vs_dense_max_rel_err"] = worst
    report["kernel"] = args.kernel
    formats.write_json(args.report, report)
    log.info("operator-norm distance %.4g, leak fraction %.4g", report["operator_norm_diff"],
             report["leak_fraction"])
    return EXIT_OK


def cmd_metrics(args):
    ref = formats.read_image(args.reference)
    test = formats.read_image(args.test)
    v = _settings(args, _mask_flags(args, "mask-"))
    mask = _mask(v, ref.shape)
    valid = None
    if args.valid:
        counts, _ = formats.read_pgm(args.valid)
        valid = counts > 0
    report = evaluate(ref, test, mask, valid=valid, peak=args.peak)
    log.info("PSNR %s dB  SSIM %.4f  low %.4g  high %.4g", format_db(report.psnr), report.ssim,
             report.lowband_rmse, report.highband_rmse)
    if args.json:
        formats.write_json(args.json, report.to_dict())
    return EXIT_OK


def cmd_ablate_hf(args):
    flags = {**_sim_flags(args), "distill.lambda": args.lam, "distill.steps": args.steps,
             "distill.lr": args.lr, "distill.seed": args.distill_seed,
             "distill.tail_fraction": args.tail_fraction, "ablation.cutoff": args.cutoff,
             "ablation.dc_shift": args.dc_shift, "ablation.prior_variance": args.prior_variance,
             "ablation.epsilon": args.epsilon}
    v = _settings(args, flags, ABLATION_DEFAULTS)
    cfg = _sim_config(v)
    if args.scene:
        scene = center_crop(np.clip(_read_rgb(args.scene), 0.0, 1.0), cfg.patch)
    else:
        scene = band_limited_scene(cfg.patch, cfg.patch, seed=args.synthetic or 0)
    dcfg = _distill_config(v, None)
    settings = AblationSettings(v.get("ablation.cutoff", 4.0), v.get("ablation.dc_shift", 0.1),
                                v.get("ablation.prior_variance", 0.01), v.get("ablation.epsilon", 1e-8))
    report = run_ablation_hf(scene, cfg, dcfg, settings)
    write_ablation_report(report, args.out, args.csv)
    verdict = "holds" if report["ordering"]["holds"] else "VIOLATED"
    log.info("low-band ordering hf <= data < naive %s", verdict)
    return EXIT_OK


def cmd_dataset(args):
    flags = {**_sim_flags(args), "dataset.workers": args.workers}
    if args.split:
        flags.update({"dataset.train": args.split[0], "dataset.val": args.split[1],
                      "dataset.test": args.split[2]})
    v = _settings(args, flags)
    cfg = _sim_config(v)
    split = (v.get("dataset.train", 0.9), v.get("dataset.val", 0.05), v.get("dataset.test", 0.05))
    manifest = dataset_batch(args.src_dir, args.out_dir, cfg, split, workers=v.get("dataset.workers", 1))
    if not manifest["samples"]:
        log.error("no usable images in %s", args.src_dir)
        return EXIT_DATA
    log.info("wrote %d samples (%s)", len(manifest["samples"]),
             ", ".join(f"{k} {n}" for k, n in manifest["counts"].items()))
    return EXIT_OK


# --- parser --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="burstlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"burstlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat 'section.key = value' file")
        p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "synthesize a paired (HR ground truth, LR raw burst) sample")
    p.add_argument("input", nargs="?", help="linear HR image (PFM) or gamma-encoded PNG")
    p.add_argument("out_dir")
    p.add_argument("--synthetic", type=int, metavar="SEED", help="use a band-limited synthetic scene")
    _add_sim_flags(p)

    p = add("fuse", cmd_fuse, "align and fuse a burst directory into an HR RGB image")
    p.add_argument("burst_dir")
    p.add_argument("output", help="output PFM")
    p.add_argument("--sr", type=int)
    p.add_argument("--oracle-alignment", action="store_true", help="use the stored trajectory")
    p.add_argument("--model", choices=["translation", "affine", "homography"])
    p.add_argument("--kernel-sigma", type=float)
    p.add_argument("--trajectory-out")
    p.add_argument("--png", help="also write an 8-bit preview")

    p = add("project", cmd_project, "apply the radial high-pass mask or its complement")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["high", "low"], default="high")
    p.add_argument("--mask-out", help="write the mask gains as PFM")
    _add_mask_flags(p)

    p = add("spectrum", cmd_spectrum, "write ln(1 + |F|) of the luma image")
    p.add_argument("input")
    p.add_argument("output")

    p = add("distill", cmd_distill, "run (HF-)VSD distillation toward a target image")
    p.add_argument("target")
    p.add_argument("--mode", choices=["naive", "hf", "data"], default="hf")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--omega", choices=["constant", "adaptive"])
    p.add_argument("--tail-fraction", type=float)
    p.add_argument("--binary", action="store_true", help="threshold the soft mask at 0.5")
    p.add_argument("--cutoff", type=float, help="binary mask zero within this radius instead")
    p.add_argument("--reference", help="ground truth for band errors (default: target)")
    p.add_argument("--prior-mean", help="prior mean image (default: DC-shifted reference)")
    p.add_argument("--dc-shift", type=float)
    p.add_argument("--prior-variance", type=float)
    p.add_argument("--out", default="trace.csv")
    p.add_argument("--dump-dir", help="directory for x_init.pfm / x_final.pfm")
    _add_mask_flags(p)

    p = add("verify-nullspace", cmd_verify_nullspace, "compare a mask with an operator's null-space projector")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--kernel", default="gaussian:1.2")
    p.add_argument("--decimate", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    _add_mask_flags(p)

    p = add("metrics", cmd_metrics, "PSNR, SSIM and band errors between two images")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--valid", help="PGM validity mask (non-zero = valid)")
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--json")
    _add_mask_flags(p, "mask-")

    p = add("ablate-hf", cmd_ablate_hf, "naive vs HF-VSD vs data-only low-band ablation")
    p.add_argument("scene", nargs="?")
    p.add_argument("--synthetic", type=int, metavar="SEED")
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--csv", help="CSV summary")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--distill-seed", type=int)
    p.add_argument("--tail-fraction", type=float)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--dc-shift", type=float)
    p.add_argument("--prior-variance", type=float)
    p.add_argument("--epsilon", type=float)
    _add_sim_flags(p)

    p = add("dataset", cmd_dataset, "simulate paired samples for every image in a directory")
    p.add_argument("src_dir")
    p.add_argument("out_dir")
    p.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--workers", type=int)
    _add_sim_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (ConfigError, ParameterError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (BurstlabError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
