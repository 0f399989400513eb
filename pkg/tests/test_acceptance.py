"""Acceptance suite: nine numbered criteria, one PASS/FAIL line each.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly with
``python3 tests/test_acceptance.py``. A criterion passes only if its checks
hold and it finishes inside its time budget.
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from burstlab import formats
from burstlab.cli import main
from burstlab.distill import (DistillConfig, StationaryGaussianPrior, closed_form_vsd_gradient,
                              make_schedule, vsd_gradient)
from burstlab.fusion import FusionConfig, fuse, reconstruct
from burstlab.geometry import (Burst, corner_error, estimate_homography, rotation, synth_trajectory,
                               translation, warp)
from burstlab.metrics import psnr
from burstlab.nullspace import (BccbOperator, apply_forward, apply_fourier_gains, dense_matrix,
                                fourier_null_gains, make_kernel, null_projector, range_projector)
from burstlab.pipeline import (AblationSettings, SimulationConfig, TrajectoryParams, band_limited_scene,
                               run_ablation_hf, simulate_pair)
from burstlab.raw import NoiseParams, RawFrame, add_poisson_gaussian, sample_poisson_gaussian
from burstlab.spectral import binary_mask_from, fft2, lowband_zero_mask, make_mask, project

CRITERIA = {}


def criterion(number, title, budget):
    def register(fn):
        CRITERIA[number] = (title, budget, fn)
        return fn
    return register


def run(number):
    title, budget, fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failure, reported on the same line
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - t0
    ok = bool(ok) and elapsed < budget
    line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s < {budget}s]"
    return ok, line


# --- 1 --------------------------------------------------------------------

@criterion(1, "mask formula", 1.0)
def check_mask():
    n = 64
    m = make_mask(n, n, alpha=0.8, beta=0.2, gamma=4.0).values
    c = n // 2
    # the centered grid holds u = -R but not +R; the gains depend on u**2 only
    edge = abs(m[c, 0] - (0.8 ** 8 + 0.2))
    ok = m[c, c] == 0.2 and edge < 1e-12 and m[0, 0] == 1.0
    ok &= m.min() >= 0.0 and m.max() <= 1.0
    odd = make_mask(65, 65).values
    sym = max(np.max(np.abs(odd - odd[::-1, :])), np.max(np.abs(odd - odd[:, ::-1])),
              np.max(np.abs(odd - odd.T)))
    inner = m[1:, 1:]
    sym = max(sym, np.max(np.abs(inner - inner[::-1, ::-1])), np.max(np.abs(inner - inner.T)))
    # bins at the same radius, e.g. (3, 4) and (5, 0)
    sym = max(sym, abs(m[c + 3, c + 4] - m[c + 5, c]), abs(m[c + 6, c + 8] - m[c, c + 10]))
    ok &= sym <= 1e-15
    return ok, f"h(0,0)={float(m[c, c])!r} |h(R,0)-(0.8^8+0.2)|={edge:.1e} corner={float(m[0, 0])} symmetry={sym:.1e}"


# --- 2 --------------------------------------------------------------------

@criterion(2, "projector algebra", 5.0)
def check_projectors():
    rng = np.random.default_rng(2)
    mask = make_mask(32, 32)
    binary = binary_mask_from(mask)
    worst_sum = worst_gain = worst_idem = 0.0
    for _ in range(100):
        x = rng.random((32, 32))
        hi, lo = project(x, mask, "high"), project(x, mask, "low")
        worst_sum = max(worst_sum, np.max(np.abs(hi + lo - x)))
        worst_gain = max(worst_gain, np.max(np.abs(np.abs(fft2(hi)) - mask.values * np.abs(fft2(x)))))
        b = project(x, binary, "high")
        worst_idem = max(worst_idem, np.max(np.abs(project(b, binary, "high") - b)))
    ok = max(worst_sum, worst_gain, worst_idem) < 1e-10
    return ok, f"sum={worst_sum:.1e} gain={worst_gain:.1e} idempotence={worst_idem:.1e}"


# --- 3 --------------------------------------------------------------------

def random_lowpass_kernels(count, n, seed=3):
    """Gaussian blurs convolved with a factor that has exact spectral zeros."""
    rng = np.random.default_rng(seed)
    factors = ["hpair", "vpair", "hpair*vpair", "box:2", "box:4"]
    for _ in range(count):
        sigma = rng.uniform(0.5, 1.5)
        yield make_kernel(f"gaussian:{sigma:.4f}*{factors[rng.integers(len(factors))]}", n)


@criterion(3, "null-space oracle", 30.0)
def check_nullspace():
    rng = np.random.default_rng(33)
    worst_rel = worst_sym = worst_idem = worst_ap = 0.0
    min_null = 64
    for kernel in random_lowpass_kernels(10, 8):
        op = BccbOperator(kernel)
        p_dense = null_projector(op)
        p_range = range_projector(op)
        gains = fourier_null_gains(op)
        min_null = min(min_null, int(gains.sum()))
        worst_sym = max(worst_sym, np.max(np.abs(p_range - p_range.T)))
        worst_idem = max(worst_idem, np.max(np.abs(p_range @ p_range - p_range)))
        worst_ap = max(worst_ap, np.max(np.abs(dense_matrix(op) @ p_dense)))
        for _ in range(100):
            x = rng.standard_normal((8, 8))
            pf = apply_fourier_gains(gains, x)
            worst_rel = max(worst_rel, np.linalg.norm(pf.ravel() - p_dense @ x.ravel()) / np.linalg.norm(x))
            worst_ap = max(worst_ap, np.max(np.abs(apply_forward(op, pf))))
    ok = worst_rel < 1e-8 and worst_sym < 1e-9 and worst_idem < 1e-9 and worst_ap < 1e-8 and min_null > 0
    return ok, (f"fourier-vs-dense={worst_rel:.1e} P_L sym={worst_sym:.1e} idem={worst_idem:.1e} "
                f"|A P_H|={worst_ap:.1e} min null dim={min_null}")


# --- 4 --------------------------------------------------------------------

@criterion(4, "VSD estimator", 60.0)
def check_vsd():
    sched = make_schedule()
    rng = np.random.default_rng(4)
    x = rng.random((8, 8))
    prior = StationaryGaussianPrior(rng.random((8, 8)), np.full((8, 8), 0.01))
    closed = closed_form_vsd_gradient(x, prior, sched, t_range=(20, 980))
    k = 10_000
    span = np.arange(20, 981)
    # stratified t: every draw is marginally uniform on the range, each t appears 10 or 11 times
    ts = np.concatenate([rng.permutation(span) for _ in range(k // span.size + 1)])[:k]
    acc = np.zeros_like(x)
    for t in ts:
        acc += vsd_gradient(x, prior, int(t), rng.standard_normal(x.shape), sched)
    rel = np.linalg.norm(acc / k - closed) / np.linalg.norm(closed)

    matched = StationaryGaussianPrior.point_mass(x)
    zero = all(np.all(vsd_gradient(x, matched, int(t), rng.standard_normal(x.shape), sched) == 0.0)
               for t in rng.integers(20, 981, 200))
    return rel < 0.02 and zero, f"relative error={rel:.4f} matched prior exactly zero={zero}"


# --- 5 --------------------------------------------------------------------

ABLATION_SIM = SimulationConfig(n_frames=4, sr_factor=2, patch=64, trajectory=TrajectoryParams(kind="regular"),
                                noise=NoiseParams(0.0, 0.0))
ABLATION_DISTILL = DistillConfig(steps=4000, lr=0.2, tail_fraction=0.75)
ABLATION_SETTINGS = AblationSettings(cutoff=4.0, dc_shift=0.1, prior_variance=0.01)


def quadratic_fixed_point_gap(scene, sim, settings, t_range=(20, 980)):
    """Low-band RMSE gap between the naive fixed point and the data target.

    With the data pulling each low bin toward ``Y`` with unit weight and the
    expected VSD gradient pulling toward the prior mean ``M`` with weight
    ``kappa = mean_t a^2 b / (a^2 S + b^2)``, the stationary point is
    ``(Y + kappa M) / (1 + kappa)``.
    """
    sched = make_schedule()
    ts = np.arange(t_range[0], t_range[1] + 1)
    a, b = sched.alphas[ts], sched.betas[ts]
    kappa = float(np.mean(a * a * b / (a * a * settings.prior_variance + b * b)))
    sample = simulate_pair(scene, sim)
    fused = fuse(sample.burst, sample.burst.trajectory, FusionConfig(sr_factor=sim.sr_factor))
    low = lowband_zero_mask(scene.shape[0], scene.shape[1], settings.cutoff).values == 0
    y, g, m = fft2(fused), fft2(scene), fft2(scene + settings.dc_shift)
    fixed = (y + kappa * m) / (1.0 + kappa)
    n = fused.size
    e_data = np.sqrt(np.sum(np.abs((y - g)[low]) ** 2) / n)
    e_fixed = np.sqrt(np.sum(np.abs((fixed - g)[low]) ** 2) / n)
    return e_fixed - e_data, e_data


@criterion(5, "HF-VSD low-band suppression", 120.0)
def check_ablation():
    scene = band_limited_scene(64, 64, seed=0)
    delta, e_data = quadratic_fixed_point_gap(scene, ABLATION_SIM, ABLATION_SETTINGS)
    rep = run_ablation_hf(scene, ABLATION_SIM, ABLATION_DISTILL, ABLATION_SETTINGS)
    low = {m: r["lowband_rmse"] for m, r in rep["modes"].items()}
    step_diff = rep["lowband_step_max_diff_hf_vs_data"]
    ok = (low["hf_vsd"] <= low["data_only"] + 1e-8 and low["naive_vsd"] >= low["data_only"] + delta
          and step_diff < 1e-10 and abs(rep["fused_lowband_rmse"] - e_data) < 1e-12)
    return ok, (f"hf={low['hf_vsd']:.5f} data={low['data_only']:.5f} naive={low['naive_vsd']:.5f} "
                f"delta={delta:.5f} per-step diff={step_diff:.1e}")


# --- 6 --------------------------------------------------------------------

@criterion(6, "MFSR recoverability", 60.0)
def check_recoverability():
    # the regular-offset burst is purely translational, so the estimate uses that model;
    # the full 8-parameter fit is reported alongside for reference
    oracle_db, drop_db, drop_h = [], [], []
    for seed in range(8):
        scene = band_limited_scene(64, 64, seed=seed, max_cycles=4.0)
        burst = simulate_pair(scene, ABLATION_SIM).burst
        orc = psnr(scene, reconstruct(burst, FusionConfig(sr_factor=2, use_given_trajectory=True)).image)
        est = psnr(scene, reconstruct(burst, FusionConfig(sr_factor=2), model="translation").image)
        hom = psnr(scene, reconstruct(burst, FusionConfig(sr_factor=2), model="homography").image)
        oracle_db.append(orc)
        drop_db.append(orc - est)
        drop_h.append(orc - hom)
    ok = min(oracle_db) >= 40.0 and max(drop_db) <= 1.0
    return ok, (f"oracle PSNR min={min(oracle_db):.2f} dB, estimated (translation) drop max={max(drop_db):.2f} dB"
                f" [homography model: {max(drop_h):.2f} dB]")


# --- 7 --------------------------------------------------------------------

def gray_scene(n, seed, cycles=6.0):
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    out = np.full((n, n), 0.5)
    for _ in range(8):
        fx, fy = rng.uniform(-cycles, cycles, 2)
        out += 0.05 * np.cos(2 * np.pi * (fx * xs + fy * ys) / n + rng.uniform(0, 2 * np.pi))
    return out


def registration_errors(make_h, trials=50, n=96):
    errs = []
    for trial in range(trials):
        rng = np.random.default_rng(7000 + trial)
        ref = gray_scene(n, seed=trial)
        h_true = make_h(rng)
        moved = warp(ref, h_true)
        reg = estimate_homography(ref, moved.image, "homography", moving_valid=moved.validity)
        errs.append(corner_error(np.linalg.inv(reg.h), h_true, n, n))
    return np.array(errs)


@criterion(7, "alignment recovery", 60.0)
def check_alignment():
    shift = registration_errors(lambda rng: translation(*rng.uniform(-3.0, 3.0, 2)))
    turn = registration_errors(lambda rng: rotation(np.radians(rng.uniform(-1.0, 1.0)), center=(48.0, 48.0)))
    p_shift, p_turn = np.percentile(shift, 95), np.percentile(turn, 95)
    ok = p_shift <= 0.1 and p_turn <= 0.2
    return ok, f"95th percentile corner error: translation={p_shift:.4f} px rotation={p_turn:.4f} px"


# --- 8 --------------------------------------------------------------------

@criterion(8, "noise statistics", 30.0)
def check_noise():
    worst = 0.0
    parts = []
    for mu in (0.1, 0.25, 0.5, 0.8):
        frame = RawFrame(np.full((1000, 1000), mu))
        for params in (NoiseParams(seed=8), NoiseParams(seed=8, exact_poisson=True)):
            expect = params.shot_gain * mu + params.read_sigma ** 2
            clamped = add_poisson_gaussian(frame, params).data.var()
            raw = sample_poisson_gaussian(frame.data, params, np.random.default_rng(80)).var()
            rel = max(abs(clamped / expect - 1), abs(raw / expect - 1))
            worst = max(worst, rel)
        parts.append(f"{mu}:{rel:.3f}")
    return worst < 0.05, f"worst relative variance error={worst:.4f} ({' '.join(parts)})"


# --- 9 --------------------------------------------------------------------

def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli_commands(work, out):
    inp = work / "inputs"
    sim = ["--sr", "2", "--frames", "3", "--patch", "32", "--seed", "5"]
    return [
        ["simulate", str(inp / "scene.pfm"), str(out / "sim")] + sim,
        ["fuse", str(inp / "sample" / "burst"), str(out / "fused.pfm"), "--trajectory-out", str(out / "traj.json")],
        ["project", str(inp / "scene.pfm"), str(out / "high.pfm"), "--mask-out", str(out / "mask.pfm")],
        ["spectrum", str(inp / "scene.pfm"), str(out / "spec.pfm")],
        ["distill", str(inp / "scene.pfm"), "--steps", "20", "--seed", "2", "--out", str(out / "trace.csv")],
        ["verify-nullspace", "--kernel", "box:2*gaussian:0.7", "--report", str(out / "null.json")],
        ["metrics", str(inp / "scene.pfm"), str(inp / "other.pfm"), "--json", str(out / "metrics.json")],
        ["ablate-hf", "--synthetic", "2", "--patch", "16", "--steps", "30", "--out", str(out / "abl.json"),
         "--csv", str(out / "abl.csv")],
        ["dataset", str(inp / "images"), str(out / "ds")] + sim,
    ]


def _round_trips(work):
    rng = np.random.default_rng(9)
    bad = []
    counts = rng.integers(0, 65536, (10, 12))
    frame = RawFrame(counts / 65535.0, "BGGR", 16)
    formats.save_raw(work / "rt.pgm", frame)
    if not np.array_equal(formats.load_raw(work / "rt.pgm").data, frame.data):
        bad.append("pgm")
    img = rng.random((9, 7, 3)).astype(np.float32).astype(np.float64)
    formats.write_pfm(work / "rt.pfm", img)
    if not np.array_equal(formats.read_pfm(work / "rt.pfm"), img):
        bad.append("pfm")
    payload = {"x": rng.standard_normal(20).tolist(), "n": 3, "s": "a", "b": False}
    formats.write_json(work / "rt.json", payload)
    if formats.read_json(work / "rt.json") != payload:
        bad.append("json")
    traj = synth_trajectory(3, seed=9)
    burst = Burst(tuple(RawFrame(rng.integers(0, 65536, (8, 8)) / 65535.0) for _ in range(3)), traj,
                  {"sr_factor": 2}, tuple(rng.random((8, 8)) > 0.3 for _ in range(3)))
    formats.save_burst(work / "rt_burst", burst)
    back = formats.load_burst(work / "rt_burst")
    same = all(np.array_equal(a.data, b.data) for a, b in zip(burst.frames, back.frames))
    same &= all(np.array_equal(a, b) for a, b in zip(burst.validity, back.validity))
    same &= all(np.array_equal(a, b) for a, b in zip(traj.frames, back.trajectory.frames))
    if not same:
        bad.append("burst")
    return bad


@criterion(9, "determinism and round-trips", 60.0)
def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        inp = work / "inputs"
        (inp / "images").mkdir(parents=True)
        scene = band_limited_scene(32, 32, seed=3)
        formats.write_pfm(inp / "scene.pfm", scene)
        formats.write_pfm(inp / "other.pfm", np.clip(scene + 0.01, 0, 1))
        for i in range(3):
            formats.write_png(inp / "images" / f"im{i}.png", band_limited_scene(40, 40, seed=10 + i))
        if main(["simulate", "--synthetic", "1", str(inp / "sample"), "--sr", "2", "--frames", "3",
                 "--patch", "32"]) != 0:
            return False, "could not build the input burst"
        differing = []
        for k, cmd in enumerate(_cli_commands(work, work / "run_a")):
            trees = []
            for tag in ("run_a", "run_b"):
                out = work / tag
                out.mkdir(exist_ok=True)
                argv = _cli_commands(work, out)[k]
                if main(argv) != 0:
                    return False, f"{argv[0]} exited non-zero"
                trees.append({p: b for p, b in _tree(out).items()})
            if trees[0] != trees[1]:
                differing.append(cmd[0])
        bad = _round_trips(work)
    ok = not differing and not bad
    return ok, (f"9 subcommands rerun, differing={differing or 'none'}; "
                f"PGM/PFM/JSON/burst round-trips lossless={not bad}")


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    ok, line = run(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
