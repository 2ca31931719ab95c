"""Batch experiments: bin-picking campaigns, the regrasp-accuracy study, the
end-to-end assembly pipeline, and CSV emission for plotting."""
from __future__ import annotations

import copy
import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, OffsetTooLarge, PlanFailure
from .geometry import (Polyline3D, Pose, arc_length, cumulative_arclength,
                       normal_for_tangent, point_at_arc, resample_equidistant,
                       tangent_at_arc)
from .handover import (HandoverParams, HandoverSim, World, correction_loop,
                       second_grasp_pose)
from .mounting import Fixture, MountParams, execute_mount, plan_mount
from .picking import PickParams, run_pick
from .scene import DloSpec, SensorNoise, gen_bin
from .segmentation import SegParams
from .sim import Simulator
from .tracking import TrackParams, correct, reconstruct


# --------------------------------------------------------------------------
# configuration

def default_config() -> dict:
    return {
        "dlo": {
            "length": 0.4,
            "diameter": 0.011,
            "mass": 0.13,
            "stiffness": 0.7,
            "has_connectors": False,
        },
        "bin": {
            "dims": [0.6, 0.4, 0.25],
            "n_dlos": 31,
            "n_bins": 5,
            "edge_prob": 0.10,
        },
        "noise": {
            "depth_sigma": 0.002,
            "mask_boundary_px": 2,
            "spurious_mask_rate": 0.01,
            "confidence_sigma": 0.02,
            "ft_sigma": 0.05,
            "tcp_exec_sigma": 0.005,
            "vitac_sigma": 0.0003,
            "visual_drift_sigma": 0.015,
        },
        "segmentation": {
            "a_threshold": 800,
            "step_s": 0.005,
            "n_prompts": 20,
            "t_merge": 0.4,
            "t_discard": 0.1,
            "prune_min": 10,
        },
        "picking": {
            "r": 0.5,
            "eta_fz": 1.175,
            "max_grasp_attempts": 2,
            "max_disentangle": 2,
        },
        "tracking": {
            "eps": 0.015,
            "min_pts": 5,
            "degree": 3,
            "k_fit": 10,
            "resample_pitch": 0.005,
            "smooth_window": 5,
        },
        "handover": {
            "l_g": 0.10,
            "max_retries": 3,
            "success_gap": 0.0093,
            "align_tol": 0.002,
            "gain": 1.0,
            "fine_sigma_factor": 0.1,
        },
        "handover_experiment": {
            "l_g_values": [0.08, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14, 0.15],
            "n_seeds": 50,
            "grasp_fraction": 0.4,
            "occlusion_halfwidth": 0.03,
            "point_jitter": 0.001,
            "lengths": [0.5, 0.6, 0.7, 0.8],
        },
        "mounting": {
            "end_margin": 0.015,
            "tolerance": 0.003,
            "clip_offsets": [0.04, 0.075, 0.11],
        },
        "pipeline": {
            "n_dlos": 18,
            "r": 0.9,
            "dlo": {
                "length": 0.6,
                "diameter": 0.0095,
                "mass": 0.1,
                "stiffness": 0.7,
                "has_connectors": False,
            },
        },
        "sim": {"pitch": 0.002},
    }


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{here}: unknown configuration key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a mapping")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults, optionally overlaid with a JSON file and dotted overrides
    such as ``noise.tcp_exec_sigma=0.002``."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key.path=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = {}
        leaf = node
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            leaf[part] = {}
            leaf = leaf[part]
        leaf[parts[-1]] = value
        cfg = _merge(cfg, node)
    validate_config(cfg)
    return cfg


def _require(cond: bool, field: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {msg}")


def validate_config(cfg: dict) -> None:
    num = (int, float)
    for field in ("length", "diameter", "mass"):
        _require(isinstance(cfg["dlo"][field], num) and cfg["dlo"][field] > 0,
                 f"dlo.{field}", "must be a positive number")
    _require(0.0 <= cfg["dlo"]["stiffness"] <= 1.0, "dlo.stiffness",
             "must lie in [0, 1]")
    _require(cfg["bin"]["n_dlos"] >= 1, "bin.n_dlos", "must be >= 1")
    _require(cfg["bin"]["n_bins"] >= 0, "bin.n_bins", "must be >= 0")
    _require(len(cfg["bin"]["dims"]) == 3 and min(cfg["bin"]["dims"]) > 0,
             "bin.dims", "must be three positive extents")
    for field, value in cfg["noise"].items():
        if field == "mask_boundary_px":
            _require(isinstance(value, int) and value >= 0,
                     f"noise.{field}", "must be a non-negative integer")
        else:
            _require(isinstance(value, num) and value >= 0,
                     f"noise.{field}", "must be >= 0")
    _require(0.0 < cfg["segmentation"]["t_discard"]
             <= cfg["segmentation"]["t_merge"] < 1.0,
             "segmentation.t_merge", "need 0 < t_discard <= t_merge < 1")
    _require(cfg["segmentation"]["n_prompts"] >= 1,
             "segmentation.n_prompts", "must be >= 1")
    _require(0.0 <= cfg["picking"]["r"] <= 1.0, "picking.r",
             "must lie in [0, 1]")
    _require(cfg["picking"]["eta_fz"] >= 1.0, "picking.eta_fz",
             "must be >= 1")
    _require(cfg["handover"]["l_g"] > 0, "handover.l_g", "must be positive")
    _require(cfg["mounting"]["tolerance"] > 0, "mounting.tolerance",
             "must be positive")
    _require(cfg["sim"]["pitch"] > 0, "sim.pitch", "must be positive")


def spec_from(cfg: dict) -> DloSpec:
    return DloSpec(**cfg)


def noise_from(cfg: dict) -> SensorNoise:
    return SensorNoise(**cfg)


def seg_params_from(cfg: dict) -> SegParams:
    return SegParams(**cfg)


def pick_params_from(cfg: dict) -> PickParams:
    return PickParams(**cfg)


def track_params_from(cfg: dict) -> TrackParams:
    return TrackParams(**cfg)


def handover_params_from(cfg: dict) -> HandoverParams:
    return HandoverParams(**cfg)


# --------------------------------------------------------------------------
# bin-picking campaign

def run_single_bin(cfg: dict, bin_seed: int) -> dict:
    """Empty one bin: repeated singulation attempts with failed DLOs set
    aside, at most one attempt per DLO in the bin."""
    spec = spec_from(cfg["dlo"])
    noise = noise_from(cfg["noise"])
    scene = gen_bin(cfg["bin"]["n_dlos"], spec, tuple(cfg["bin"]["dims"]),
                    seed=bin_seed, edge_prob=cfg["bin"]["edge_prob"])
    sim = Simulator(scene, noise, seed=bin_seed, pitch=cfg["sim"]["pitch"])
    sp = seg_params_from(cfg["segmentation"])
    pp = pick_params_from(cfg["picking"])
    detections = 0
    failures = {}
    attempts = 0
    while sim.pile and attempts < cfg["bin"]["n_dlos"]:
        outcome = run_pick(sim, sp, pp)
        attempts += 1
        detections += outcome.entanglement_detections
        if not outcome.success:
            cat = outcome.failure_category or "unknown"
            failures[cat] = failures.get(cat, 0) + 1
            if (outcome.target_uid is None
                    and outcome.failure_category == "no_pose"):
                break  # nothing targetable remains
    n = cfg["bin"]["n_dlos"]
    successes = len(sim.deposited)
    return {
        "seed": bin_seed,
        "n_dlos": n,
        "attempts": attempts,
        "successes": successes,
        "errors": attempts - successes,
        "entanglement_detections": detections,
        "failures": failures,
        "success_rate": successes / n,
    }


def _bin_job(args):
    cfg, bin_seed = args
    return run_single_bin(cfg, bin_seed)


def run_bin_picking(cfg: dict, seed: int = 0, jobs: int = 1) -> dict:
    """Table-style campaign over n_bins independently generated bins."""
    roots = np.random.SeedSequence([0xB1, seed]).generate_state(
        cfg["bin"]["n_bins"])
    work = [(cfg, int(s)) for s in roots]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_bin_job, work))
    else:
        rows = [_bin_job(w) for w in work]
    total = sum(r["n_dlos"] for r in rows)
    good = sum(r["successes"] for r in rows)
    return {
        "bins": rows,
        "overall": {
            "n_dlos": total,
            "successes": good,
            "success_rate": good / total if total else 0.0,
            "mean_entanglement_detections": float(
                np.mean([r["entanglement_detections"] for r in rows]))
            if rows else 0.0,
        },
    }


# --------------------------------------------------------------------------
# regrasp-accuracy study

def _gentle_curve(length: float, seed: int, pitch: float = 0.005) -> Polyline3D:
    """Smooth low-curvature cable lying near the table plane."""
    rng = np.random.default_rng(np.random.SeedSequence([0xC0E, seed]))
    n = max(2, int(round(length / pitch)) + 1)
    s = np.arange(n) * pitch
    amp_y = rng.uniform(0.01, 0.04)
    amp_z = rng.uniform(0.005, 0.015)
    freq = rng.uniform(0.5, 1.5, 2)
    phase = rng.uniform(0.0, 2.0 * np.pi, 2)
    y = amp_y * np.sin(2.0 * np.pi * freq[0] * s / length + phase[0])
    z = 0.05 + amp_z * np.sin(2.0 * np.pi * freq[1] * s / length + phase[1])
    return Polyline3D(np.column_stack([s, y, z]))


def _visual_estimate(true_shape: Polyline3D, grasp_arc: float,
                     occlusion_halfwidth: float, jitter: float,
                     drift_sigma: float, rng) -> Polyline3D:
    """Point cloud of the cable as the camera sees it: occluded around the
    gripper, jittered per point, and offset by one constant calibration
    drift for the whole frame."""
    pts = true_shape.points
    arcs = cumulative_arclength(true_shape)
    keep = np.abs(arcs - grasp_arc) > occlusion_halfwidth
    drift = rng.normal(0.0, drift_sigma, 3)
    out = pts[keep] + drift
    if jitter > 0:
        out = out + rng.normal(0.0, jitter, out.shape)
    return Polyline3D(out)


def handover_trial(cfg: dict, length: float, l_g: float, corrected: bool,
                   seed: int) -> dict:
    """One regrasp attempt; returns the true residual gap and outcome."""
    hx = cfg["handover_experiment"]
    noise = noise_from(cfg["noise"])
    true_shape = _gentle_curve(length, seed)
    rng = np.random.default_rng(np.random.SeedSequence([0x4A0, seed]))
    total = arc_length(true_shape)
    s1 = hx["grasp_fraction"] * total
    p1_true = point_at_arc(true_shape, s1)

    estimate = _visual_estimate(true_shape, s1, hx["occlusion_halfwidth"],
                                hx["point_jitter"],
                                noise.visual_drift_sigma, rng)
    rec = reconstruct(estimate, track_params_from(cfg["tracking"]))
    hp = handover_params_from({**cfg["handover"], "l_g": l_g})
    hsim = HandoverSim(true_shape, s1, noise.tcp_exec_sigma,
                       noise.vitac_sigma, seed)
    truth = hsim.target_point(l_g, 1.0 if total - s1 >= s1 else -1.0)

    correction_mag = 0.0
    if corrected:
        p_c = p1_true + rng.normal(0.0, noise.vitac_sigma, 3)
        rec = correct(rec, p_c)
        correction_mag = float(np.linalg.norm(rec.correction))
        p_first = p_c
    else:
        pts = rec.shape.points
        p_first = pts[int(np.argmin(np.linalg.norm(pts - p1_true, axis=1)))]
    target = second_grasp_pose(rec.shape, p_first, l_g)

    if corrected:
        result = correction_loop(hsim, target, truth, hp)
        gap = result.final_gap
        success = result.success
        attempts = result.attempts
    else:
        hsim.move_tcp(target)
        gap = float(np.linalg.norm(hsim.gap_vector(truth)))
        success = gap <= hp.success_gap
        attempts = 1
    return {
        "length": length,
        "l_g": l_g,
        "seed": seed,
        "corrected": corrected,
        "success": bool(success),
        "gap": float(gap),
        "attempts": attempts,
        "correction": correction_mag,
    }


def _handover_job(args):
    cfg, length, l_g, corrected, seed = args
    return handover_trial(cfg, length, l_g, corrected, seed)


def run_handover_experiment(cfg: dict, seed: int = 0, jobs: int = 1) -> dict:
    """Grid over cable configurations, grasp offsets, and seeds, with the
    tactile correction enabled and disabled on matched trials."""
    hx = cfg["handover_experiment"]
    work = []
    base = np.random.SeedSequence([0x4A1, seed]).generate_state(
        len(hx["lengths"]) * len(hx["l_g_values"]) * hx["n_seeds"])
    k = 0
    for length in hx["lengths"]:
        for l_g in hx["l_g_values"]:
            for _ in range(hx["n_seeds"]):
                trial_seed = int(base[k])
                k += 1
                for corrected in (True, False):
                    work.append((cfg, length, l_g, corrected, trial_seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_handover_job, work, chunksize=16))
    else:
        rows = [_handover_job(w) for w in work]
    on = [r for r in rows if r["corrected"]]
    off = [r for r in rows if not r["corrected"]]
    summary = {
        "success_rate_on": float(np.mean([r["success"] for r in on])),
        "success_rate_off": float(np.mean([r["success"] for r in off])),
        "mean_gap_on": float(np.mean([r["gap"] for r in on])),
        "mean_gap_off": float(np.mean([r["gap"] for r in off])),
        "mean_correction": float(np.mean([r["correction"] for r in on])),
        "n_trials": len(rows),
    }
    return {"trials": rows, "summary": summary}


# --------------------------------------------------------------------------
# end-to-end pipeline

def run_full_pipeline(cfg: dict, seed: int = 0) -> dict:
    """Pick one cable from a cluttered bin, track its relaxed shape, hand it
    over, and mount it on three clips. Returns a JSON-ready stage report."""
    report = {"seed": seed, "stages": {}, "end_to_end": False}
    pcfg = cfg["pipeline"]
    spec = spec_from(pcfg["dlo"])
    noise = noise_from(cfg["noise"])

    # --- stage 1: bin picking -----------------------------------------
    scene = gen_bin(pcfg["n_dlos"], spec, tuple(cfg["bin"]["dims"]),
                    seed=seed, edge_prob=cfg["bin"]["edge_prob"])
    sim = Simulator(scene, noise, seed=seed, pitch=cfg["sim"]["pitch"])
    sp = seg_params_from(cfg["segmentation"])
    pp = pick_params_from({**cfg["picking"], "r": pcfg["r"]})
    picked = None
    attempts = 0
    for _ in range(pcfg["n_dlos"]):
        outcome = run_pick(sim, sp, pp)
        attempts += 1
        if outcome.success:
            picked = outcome
            break
        if outcome.target_uid is None and outcome.failure_category == "no_pose":
            break
    report["stages"]["picking"] = {
        "attempts": attempts,
        "success": picked is not None,
        "outcome": picked.to_json() if picked else outcome.to_json(),
    }
    if picked is None:
        return report

    # --- stage 2: transport + shape tracking --------------------------
    # the picked cable is laid out on the tracking table in a relaxed pose
    relaxed = _gentle_curve(spec.length, seed)
    hx = cfg["handover_experiment"]
    total = arc_length(relaxed)
    s1 = float(np.clip(pcfg["r"], 0.0, 1.0)) * total
    p1_true = point_at_arc(relaxed, s1)
    rng = np.random.default_rng(np.random.SeedSequence([0xF1FE, seed]))
    estimate = _visual_estimate(relaxed, s1, hx["occlusion_halfwidth"],
                                hx["point_jitter"],
                                noise.visual_drift_sigma, rng)
    rec = reconstruct(estimate, track_params_from(cfg["tracking"]))
    p_c = p1_true + rng.normal(0.0, noise.vitac_sigma, 3)
    rec = correct(rec, p_c)
    report["stages"]["tracking"] = {
        "correction": float(np.linalg.norm(rec.correction)),
        "points": len(rec.shape),
        "clusters": len(rec.clusters),
    }

    # --- stage 3: handover --------------------------------------------
    hp = handover_params_from(cfg["handover"])
    hsim = HandoverSim(relaxed, s1, noise.tcp_exec_sigma,
                       noise.vitac_sigma, seed)
    direction = 1.0 if total - s1 >= s1 else -1.0
    truth = hsim.target_point(hp.l_g, direction)
    try:
        target = second_grasp_pose(rec.shape, p_c, hp.l_g)
    except OffsetTooLarge as exc:
        report["stages"]["handover"] = {"success": False,
                                        "category": "offset_too_large",
                                        "detail": str(exc)}
        return report
    hres = correction_loop(hsim, target, truth, hp)
    report["stages"]["handover"] = hres.to_json()
    if not hres.success:
        return report

    # --- stage 4: mounting --------------------------------------------
    s2 = s1 + direction * hp.l_g  # second-robot hold on the cable
    mounted = _straight_layout(spec.length)
    m_total = arc_length(mounted)
    s2_m = s2 * m_total / total
    toward_near = 1.0 if m_total - s2_m < s2_m else -1.0
    mp = MountParams(end_margin=cfg["mounting"]["end_margin"],
                     tcp_exec_sigma=noise.tcp_exec_sigma)
    fixtures = []
    for k, off in enumerate(cfg["mounting"]["clip_offsets"]):
        arc = float(np.clip(s2_m + toward_near * off, 0.0, m_total))
        pos = point_at_arc(mounted, arc)
        t = tangent_at_arc(mounted, arc)
        n = normal_for_tangent(t)
        pose = Pose(pos, np.column_stack([t, n, np.cross(t, n)]))
        fixtures.append(Fixture(k, pose, tolerance=cfg["mounting"]["tolerance"]))
    try:
        plan = plan_mount(mounted, fixtures, mp, World(), seed=seed)
    except PlanFailure as exc:
        report["stages"]["mounting"] = {"success": False,
                                        "category": "fixture_miss",
                                        "detail": str(exc)}
        return report
    mres = execute_mount(plan, mp, np.random.default_rng(
        np.random.SeedSequence([0xF1F, seed])))
    report["stages"]["mounting"] = mres.to_json()
    report["end_to_end"] = bool(mres.success)
    return report


def _straight_layout(length: float, pitch: float = 0.005) -> Polyline3D:
    n = max(2, int(round(length / pitch)) + 1)
    s = np.linspace(0.0, length, n)
    pts = np.column_stack([s, np.zeros(n), np.full(n, 0.05)])
    return Polyline3D(pts)


def pipeline_report_json(report: dict) -> str:
    """Canonical serialized form (sorted keys, fixed separators) so identical
    runs produce identical bytes."""
    return json.dumps(report, sort_keys=True, indent=2,
                      separators=(",", ": ")) + "\n"


# --------------------------------------------------------------------------
# plot data

def emit_plots_data(out_dir, bin_report: dict | None = None,
                    handover_report: dict | None = None) -> list:
    """Write CSV files for the standard figures; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if bin_report is not None:
        path = out / "bin_picking.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "n_dlos", "successes", "errors",
                        "entanglements", "success_rate"])
            for i, row in enumerate(bin_report["bins"]):
                w.writerow([i, row["n_dlos"], row["successes"], row["errors"],
                            row["entanglement_detections"],
                            f"{row['success_rate']:.4f}"])
        written.append(path)
    if handover_report is not None:
        path = out / "handover_gaps.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["length", "l_g", "seed", "corrected", "success",
                        "gap"])
            for row in handover_report["trials"]:
                w.writerow([row["length"], row["l_g"], row["seed"],
                            int(row["corrected"]), int(row["success"]),
                            f"{row['gap']:.6f}"])
        written.append(path)
        path = out / "correction_magnitudes.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["length", "l_g", "seed", "correction"])
            for row in handover_report["trials"]:
                if row["corrected"]:
                    w.writerow([row["length"], row["l_g"], row["seed"],
                                f"{row['correction']:.6f}"])
        written.append(path)
    return [str(p) for p in written]
