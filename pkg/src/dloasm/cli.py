"""Command-line interface for the DLO assembly toolkit."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import experiments as ex
from .errors import ConfigError, DloError
from .geometry import Polyline3D
from .mounting import execute_mount, plan_mount, MountParams
from .picking import run_pick
from .scene import Scene, gen_bin
from .sim import Simulator
from .tracking import reconstruct
from . import segmentation as seg


def _emit(data, out):
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


def _config(config, sets):
    return ex.load_config(config, sets)


_common = [
    click.option("--config", type=click.Path(exists=False), default=None,
                 help="JSON configuration file."),
    click.option("--set", "sets", multiple=True, metavar="KEY.PATH=VALUE",
                 help="Dotted configuration override (repeatable)."),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", type=click.Path(), default=None,
                 help="Write the JSON result here instead of stdout."),
]


def common(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@click.group()
def cli():
    """Deterministic DLO assembly pipeline: bin picking, shape tracking,
    handover, and fixture mounting against a synthetic scene simulator."""


@cli.command("gen-scene")
@common
def gen_scene(config, sets, seed, out):
    """Generate a cluttered bin scene and save it as JSON."""
    cfg = _config(config, sets)
    scene = gen_bin(cfg["bin"]["n_dlos"], ex.spec_from(cfg["dlo"]),
                    tuple(cfg["bin"]["dims"]), seed=seed,
                    edge_prob=cfg["bin"]["edge_prob"])
    if out is None:
        _emit(scene.to_json(), None)
    else:
        scene.save(out)
        click.echo(f"wrote {out}")


@cli.command("segment")
@click.option("--scene", "scene_path", type=click.Path(exists=True),
              required=True, help="Scene JSON produced by gen-scene.")
@common
def segment_cmd(scene_path, config, sets, seed, out):
    """Run the perception chain on a scene and report the processed masks."""
    cfg = _config(config, sets)
    scene = Scene.load(scene_path)
    sim = Simulator(scene, ex.noise_from(cfg["noise"]), seed=seed,
                    pitch=cfg["sim"]["pitch"])
    sp = ex.seg_params_from(cfg["segmentation"])
    depth = sim.render_depth()
    seg_depth = sim.segmentation_depth(depth)
    top, d = seg.extract_top_layer(seg_depth, sp)
    skel = seg.skeletonize(top, sp.prune_min)
    prompts = seg.sample_prompts(skel, sp.n_prompts)
    raw = sim.oracle_segment(prompts)
    nonempty = seg.MaskSet([m for m in raw.masks if m.area > 0])
    processed = seg.postprocess_masks(nonempty, sp)
    _emit({
        "top_layer_depth": d,
        "top_layer_area": int(np.count_nonzero(top.binary())),
        "prompts": len(prompts),
        "raw_masks": len(raw),
        "processed_masks": len(processed),
        "mask_areas": [m.area for m in processed.masks],
        "confidences": [round(m.confidence, 4) for m in processed.masks],
    }, out)


@cli.command("pick")
@click.option("--scene", "scene_path", type=click.Path(exists=True),
              required=True, help="Scene JSON produced by gen-scene.")
@common
def pick_cmd(scene_path, config, sets, seed, out):
    """Run one singulation attempt on a scene."""
    cfg = _config(config, sets)
    scene = Scene.load(scene_path)
    sim = Simulator(scene, ex.noise_from(cfg["noise"]), seed=seed,
                    pitch=cfg["sim"]["pitch"])
    outcome = run_pick(sim, ex.seg_params_from(cfg["segmentation"]),
                       ex.pick_params_from(cfg["picking"]))
    _emit(outcome.to_json(), out)


@cli.command("pick-batch")
@click.option("--jobs", type=int, default=1, show_default=True)
@common
def pick_batch(jobs, config, sets, seed, out):
    """Empty several generated bins and report per-bin statistics."""
    cfg = _config(config, sets)
    report = ex.run_bin_picking(cfg, seed=seed, jobs=jobs)
    _emit(report, out)


@cli.command("track")
@click.option("--points", "points_path", type=click.Path(exists=True),
              default=None, help="JSON list of [x, y, z] raw shape points.")
@common
def track_cmd(points_path, config, sets, seed, out):
    """Reconstruct an ordered shape from a raw point sequence."""
    cfg = _config(config, sets)
    if points_path is not None:
        pts = np.asarray(json.loads(Path(points_path).read_text()), dtype=float)
        raw = Polyline3D(pts)
    else:
        raw = ex._gentle_curve(cfg["dlo"]["length"], seed)
    rec = reconstruct(raw, ex.track_params_from(cfg["tracking"]))
    _emit({
        "clusters": len(rec.clusters),
        "bridges": len(rec.bridges),
        "points": len(rec.shape),
        "shape": rec.shape.to_json(),
    }, out)


@cli.command("handover")
@click.option("--experiment", is_flag=True,
              help="Run the full correction on/off study instead of one trial.")
@click.option("--jobs", type=int, default=1, show_default=True)
@common
def handover_cmd(experiment, jobs, config, sets, seed, out):
    """Run one tracked handover trial (with tactile correction)."""
    cfg = _config(config, sets)
    if experiment:
        _emit(ex.run_handover_experiment(cfg, seed=seed, jobs=jobs), out)
        return
    row = ex.handover_trial(cfg, cfg["pipeline"]["dlo"]["length"],
                            cfg["handover"]["l_g"], True, seed)
    _emit(row, out)


@cli.command("mount")
@common
def mount_cmd(config, sets, seed, out):
    """Mount a straight cable onto the configured clip layout."""
    cfg = _config(config, sets)
    shape = ex._straight_layout(cfg["pipeline"]["dlo"]["length"])
    from .geometry import point_at_arc, tangent_at_arc, normal_for_tangent, Pose
    from .mounting import Fixture
    fixtures = []
    base = 0.5 * cfg["pipeline"]["dlo"]["length"]
    for k, off in enumerate(cfg["mounting"]["clip_offsets"]):
        arc = base - off
        pos = point_at_arc(shape, arc)
        t = tangent_at_arc(shape, arc)
        n = normal_for_tangent(t)
        fixtures.append(Fixture(k, Pose(pos, np.column_stack([t, n, np.cross(t, n)])),
                                tolerance=cfg["mounting"]["tolerance"]))
    mp = MountParams(end_margin=cfg["mounting"]["end_margin"],
                     tcp_exec_sigma=cfg["noise"]["tcp_exec_sigma"])
    plan = plan_mount(shape, fixtures, mp, seed=seed)
    result = execute_mount(plan, mp, np.random.default_rng(
        np.random.SeedSequence([0xF1F, seed])))
    _emit(result.to_json(), out)


@cli.command("pipeline")
@common
def pipeline_cmd(config, sets, seed, out):
    """Run the full pick / track / handover / mount pipeline once."""
    cfg = _config(config, sets)
    report = ex.run_full_pipeline(cfg, seed=seed)
    text = ex.pipeline_report_json(report)
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


@cli.command("plots")
@click.option("--bin-report", type=click.Path(exists=True), default=None,
              help="JSON report from pick-batch.")
@click.option("--handover-report", type=click.Path(exists=True), default=None,
              help="JSON report from the handover experiment.")
@click.option("--out", type=click.Path(), required=True,
              help="Directory for the CSV files.")
def plots_cmd(bin_report, handover_report, out):
    """Convert experiment reports into plot-ready CSV files."""
    bins = json.loads(Path(bin_report).read_text()) if bin_report else None
    hand = (json.loads(Path(handover_report).read_text())
            if handover_report else None)
    written = ex.emit_plots_data(out, bins, hand)
    for path in written:
        click.echo(path)


def main():
    try:
        cli.main(standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(3)
    except DloError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
