"""Command-line experiments: ``poseforge {gen,solve,refine,pseudolabel,eval,gradcheck}``.

Parameters come from built-in defaults, then the command's section of the
``--config`` JSON file, then ``--set key=value`` overrides and the dedicated
flags.  Every command writes ``resolved-config.json`` next to its outputs.
Exit codes: 0 success, 1 expected error, 2 unexpected failure; errors are
also reported as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import io as pio
from .errors import CheckFailed, ConfigError, IoError, PoseForgeError
from .geometry import CameraIntrinsics, Pose, geodesic_angle, project_points
from .gradcheck import TOLERANCE_PROFILES, run_gradchecks
from .keypoints import DEFAULT_SIGMA_SCALE
from .metrics import DEFAULT_RECALL_FRACTION, add_score, adds_score, diameter, sample_surface
from .pnp import epnp_solve
from .pseudolabel import (DEFAULT_MAX_EXPAND, DEFAULT_ROUNDS, DEFAULT_SIGMA_CONF, DEFAULT_TTA_SCALES,
                          iterate_pseudo_labels, labels_to_pgm, perturb_bbox, tta_transforms)
from .selfsup import DEFAULT_NORMALIZED_SIZE, LossWeights, refine_pose_vsa
from .synth import (DEFAULT_CAMERA, DEFAULT_DEPTH_RANGE, DEFAULT_NUM_KEYPOINTS, DEFAULT_SEGMENTER_SCHEDULE,
                    SceneFixture, gen_noisy_segmenter, gen_prediction_fields, gen_scene, stream)

log = logging.getLogger("poseforge")

PNP_TOLERANCES = {
    "default": {"rotation_rad": 1e-6, "translation": 1e-8},
    "strict": {"rotation_rad": 1e-9, "translation": 1e-11},
}

_SCENE_PARAMS = {
    "fixtures": (None, "fixture directory or fixture-set directory written by `gen`; "
                       "when absent, scenes are generated from shape/count/--seed"),
    "shape": ("cube", "cube | icosphere | random-convex"),
    "count": (1, "number of generated scenes (seeds seed .. seed+count-1)"),
    "depth_range": (list(DEFAULT_DEPTH_RANGE), "object depth range [min, max]"),
    "camera": (None, "camera intrinsics {fx, fy, cx, cy, width, height}; default 128x128, f=200"),
    "num_keypoints": (DEFAULT_NUM_KEYPOINTS, "keypoints per object, selected by farthest point sampling"),
}

PARAMS = {
    "gen": {
        **{k: v for k, v in _SCENE_PARAMS.items() if k != "fixtures"},
        "fields": (None, "also write synthetic prediction fields: {offset_sigma, attention_sigma, fg_flip_rate}"),
        "symmetric": (False, "flag the generated objects as symmetric in fixtures.json (eval then uses ADD-S)"),
    },
    "solve": {
        **_SCENE_PARAMS,
        "keypoints2d": (None, "keypoints2d JSON record (with keypoints3d and camera: solve user data)"),
        "keypoints3d": (None, "keypoints3d JSON record"),
        "camera_file": (None, "camera JSON record"),
        "noise_px": (0.0, "std of Gaussian noise added to fixture keypoints, pixels"),
    },
    "refine": {
        **_SCENE_PARAMS,
        "rotation_deg": (5.0, "initial rotation perturbation, degrees"),
        "translation_frac": (0.05, "initial translation perturbation as a fraction of depth"),
        "steps": (200, "maximum descent steps"),
        "step_size": (1.0, "full preconditioned step length"),
        "tau": (0.05, "soft rasterizer edge sharpness, pixels"),
        "success_deg": (1.0, "rotation error counted as recovered, degrees"),
        "success_frac": (0.01, "translation error counted as recovered, fraction of depth"),
        "plot": (True, "write convergence.svg"),
    },
    "pseudolabel": {
        **_SCENE_PARAMS,
        "rounds": (DEFAULT_ROUNDS, "label/fine-tune rounds T (method default 5)"),
        "sigma_conf": (DEFAULT_SIGMA_CONF, "confidence threshold sigma (method default 0.7)"),
        "max_expand": (DEFAULT_MAX_EXPAND, "maximum bbox loosening (method default 15%)"),
        "tta_scales": (list(DEFAULT_TTA_SCALES), "test-time scales"),
        "tta_flip": (True, "add left-right flipped views"),
        "schedule": (list(DEFAULT_SEGMENTER_SCHEDULE), "segmenter noise level per round"),
    },
    "eval": {
        **_SCENE_PARAMS,
        "poses": (None, "JSON results file from solve/refine; default: ground truth poses"),
        "symmetric": (None, "true: ADD-S for every object, false: ADD for every object, "
                            "null: each object's flag from fixtures.json (ADD when absent)"),
        "surface_samples": (0, "model points: 0 uses mesh vertices, n > 0 samples n surface points (seeded)"),
        "threshold_fraction": (DEFAULT_RECALL_FRACTION, "correct if distance < fraction * diameter "
                                                        "(method default 0.1)"),
    },
    "gradcheck": {
        "seeds": ([0, 1, 2], "fixture seeds; --seed S uses [S, S+1, S+2]"),
        "shape": ("cube", "fixture shape"),
    },
}

# method constants shown in --help for reference
METHOD_DEFAULTS = (
    f"method defaults: keypoints N={DEFAULT_NUM_KEYPOINTS}, normalized size D_N={DEFAULT_NORMALIZED_SIZE}, "
    f"confidence sigma={DEFAULT_SIGMA_CONF}, rounds T={DEFAULT_ROUNDS}, bbox expansion "
    f"{DEFAULT_MAX_EXPAND:.0%}, recall threshold {DEFAULT_RECALL_FRACTION} x diameter, "
    f"loss weights lambda1={LossWeights().lambda1} lambda2={LossWeights().lambda2}, "
    f"sigma_scale={DEFAULT_SIGMA_SCALE}"
)


def _param_help(cmd):
    lines = [f"parameters (config section \"{cmd}\" or --set key=value):"]
    for k, (default, text) in PARAMS[cmd].items():
        lines.append(f"  {k} = {json.dumps(default)}\n      {text}")
    return "\n".join(lines) + "\n\n" + METHOD_DEFAULTS


def resolve_params(cmd, config_path=None, overrides=()):
    params = {k: v[0] for k, v in PARAMS[cmd].items()}
    if config_path:
        try:
            cfg = pio.read_json(config_path)
        except OSError as e:
            raise IoError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object with per-command sections")
        section = cfg.get(cmd, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {cmd!r} must be an object")
        params.update(section)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    unknown = sorted(set(params) - set(PARAMS[cmd]))
    if unknown:
        raise ConfigError(f"unknown {cmd} parameters: {', '.join(unknown)}")
    return params


def _camera(params):
    c = params.get("camera")
    if c is None:
        return DEFAULT_CAMERA
    try:
        return CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                                int(c["width"]), int(c["height"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad camera parameters: {e}") from None


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _generate(params, seed, threads):
    count = int(params["count"])
    if count < 1:
        raise ConfigError("count must be >= 1")
    shape, cam = params["shape"], _camera(params)
    depth = tuple(float(v) for v in params["depth_range"])

    def one(s):
        return f"{shape}-{s:04d}", gen_scene(shape, s, cam, depth, int(params["num_keypoints"]))

    return _pmap(one, range(seed, seed + count), threads)


def load_scenes(params, seed, threads=1):
    """``[(name, SceneFixture)]`` from ``params["fixtures"]`` or freshly generated."""
    src = params.get("fixtures")
    if src is None:
        return _generate(params, seed, threads)
    root = Path(src)
    try:
        if (root / "fixtures.json").exists():
            index = pio.read_json(root / "fixtures.json")
            return [(e["name"], SceneFixture.load(root / e["path"])) for e in index["fixtures"]]
        return [(root.name, SceneFixture.load(root))]
    except OSError as e:
        raise IoError(f"cannot read fixtures from {src}: {e}") from None


def symmetry_flags(params):
    """Per-object symmetric flags recorded in a fixture set, keyed by scene name."""
    root = Path(params["fixtures"]) if params.get("fixtures") is not None else None
    if root is None or not (root / "fixtures.json").exists():
        return {}
    return {e["name"]: bool(e.get("symmetric", False)) for e in pio.read_json(root / "fixtures.json")["fixtures"]}


def _pose_errors(pose: Pose, gt: Pose):
    return geodesic_angle(pose.rotation, gt.rotation), float(np.linalg.norm(pose.translation - gt.translation))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_gen(params, seed, out, threads, profile):
    scenes = _generate(params, seed, threads)
    entries = []
    for name, fx in scenes:
        d = fx.save(out / "scenes" / name)
        if params["fields"] is not None:
            f = params["fields"]
            gen_prediction_fields(fx, float(f.get("offset_sigma", 0.0)), float(f.get("attention_sigma", 0.0)),
                                  float(f.get("fg_flip_rate", 0.0))).save(d / "fields")
        entries.append({"name": name, "path": f"scenes/{name}", "seed": fx.seed, "shape": fx.shape,
                        "symmetric": bool(params["symmetric"]), "checksum": fx.checksum()})
    pio.write_json(out / "fixtures.json", {"type": "fixture_set", "fixtures": entries})
    return {"scenes": len(entries)}


def _solve_user(params, out):
    try:
        k2d = pio.keypoints_from_dict(pio.read_json(params["keypoints2d"]))
        k3d = pio.keypoints_from_dict(pio.read_json(params["keypoints3d"]))
        cam = pio.camera_from_dict(pio.read_json(params["camera_file"]))
    except OSError as e:
        raise IoError(str(e)) from None
    except (KeyError, TypeError) as e:
        raise ConfigError("solving user data needs keypoints2d, keypoints3d and camera_file records") from e
    return [("user", k2d, k3d, cam, None)]


def cmd_solve(params, seed, out, threads, profile):
    if params["keypoints2d"] is not None:
        problems = _solve_user(params, out)
    else:
        problems = []
        for name, fx in load_scenes(params, seed, threads):
            k2d = fx.gt_keypoints2d
            if params["noise_px"] > 0:
                k2d = k2d + float(params["noise_px"]) * stream(fx.seed, "cli/solve/noise").normal(size=k2d.shape)
            problems.append((name, k2d, fx.keypoints3d, fx.cam, fx.gt_pose))

    def one(p):
        return epnp_solve(p[1], p[2], p[3])

    sols = _pmap(one, problems, threads)
    tol = PNP_TOLERANCES[profile]
    results, rows = [], []
    for (name, k2d, k3d, cam, gt), sol in zip(problems, sols):
        rec = {"name": name, "pose": pio.pose_to_dict(sol.pose), "reprojection_rms": sol.reprojection_rms,
               "iterations": sol.iterations, "converged": sol.converged}
        if gt is not None:
            rerr, terr = _pose_errors(sol.pose, gt)
            rec.update(rotation_error_rad=rerr, translation_error=terr,
                       within_tolerance=bool(rerr < tol["rotation_rad"] and terr < tol["translation"]))
        results.append(rec)
        res = project_points(sol.pose, k3d, cam) - k2d
        for i, (uv, r) in enumerate(zip(k2d, res)):
            rows.append((name, i, float(uv[0]), float(uv[1]), float(r[0]), float(r[1])))
    pio.write_json(out / "poses.json", {"type": "pose_results", "results": results})
    _write_csv(out / "reprojection.csv", ["sample", "keypoint", "u", "v", "residual_u", "residual_v"], rows)
    return {"solved": len(results), "converged": sum(r["converged"] for r in results)}


def perturb_pose(gt: Pose, rng, rotation_deg, translation_frac):
    """``gt`` rotated by exactly ``rotation_deg`` about a random axis and shifted by a
    random direction of length ``translation_frac * depth``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    dR = Rotation.from_rotvec(np.deg2rad(rotation_deg) * axis).as_matrix()
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    t = gt.translation + translation_frac * gt.translation[2] * d
    return Pose.from_matrix(dR @ gt.rotation, t)


def refine_scene(fx: SceneFixture, params):
    init = perturb_pose(fx.gt_pose, stream(fx.seed, "cli/refine/init"), float(params["rotation_deg"]),
                        float(params["translation_frac"]))
    pseudo = fx.gt_mask
    fg = np.ones(fx.cam.shape)
    res = refine_pose_vsa(init, pseudo, fg, fx.mesh, fx.cam, steps=int(params["steps"]),
                          step_size=float(params["step_size"]), tau=float(params["tau"]))
    return init, res


def _svg_plot(traces, width=640, height=400, pad=40):
    """Minimal SVG with one loss-vs-step polyline per trace."""
    steps = max((t[-1][0] for t in traces if t), default=1) or 1
    top = max((max(v for _, v in t) for t in traces if t), default=1.0) or 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">step (0..{steps})</text>',
           f'<text x="8" y="{pad - 12}" font-size="12">Dice loss (0..{top:.3g})</text>']
    for i, t in enumerate(traces):
        pts = " ".join(f"{pad + (width - 2 * pad) * s / steps:.2f},{height - pad - (height - 2 * pad) * v / top:.2f}"
                       for s, v in t)
        hue = (i * 137) % 360
        out.append(f'<polyline fill="none" stroke="hsl({hue},70%,40%)" stroke-width="1.5" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_refine(params, seed, out, threads, profile):
    scenes = load_scenes(params, seed, threads)
    runs = _pmap(lambda s: refine_scene(s[1], params), scenes, threads)
    results, rows, traces = [], [], []
    for (name, fx), (init, res) in zip(scenes, runs):
        depth = float(fx.gt_pose.translation[2])
        r0, t0 = _pose_errors(init, fx.gt_pose)
        r1, t1 = _pose_errors(res.pose, fx.gt_pose)
        ok = bool(np.rad2deg(r1) < params["success_deg"] and t1 < params["success_frac"] * depth)
        results.append({"name": name, "init_pose": pio.pose_to_dict(init), "pose": pio.pose_to_dict(res.pose),
                        "loss": res.loss, "steps": res.steps, "init_rotation_error_deg": float(np.rad2deg(r0)),
                        "init_translation_error": t0, "rotation_error_deg": float(np.rad2deg(r1)),
                        "translation_error": t1, "depth": depth, "recovered": ok})
        traces.append([(s, v) for s, v, _ in res.trace])
        rows += [(name, s, v) for s, v, _ in res.trace]
    pio.write_json(out / "refined.json", {"type": "pose_results", "results": results,
                                          "recovered": sum(r["recovered"] for r in results)})
    _write_csv(out / "trace.csv", ["sample", "step", "loss"], rows)
    if params["plot"]:
        (out / "convergence.svg").write_text(_svg_plot(traces))
    return {"recovered": sum(r["recovered"] for r in results), "samples": len(results)}


def cmd_pseudolabel(params, seed, out, threads, profile):
    scenes = load_scenes(params, seed, threads)
    rounds = int(params["rounds"])
    segs, masks, boxes = [], [], []
    for _, fx in scenes:
        segs.append(gen_noisy_segmenter(fx, params["schedule"], rounds))
        masks.append(fx.gt_mask)
        boxes.append([perturb_bbox(fx.tight_bbox, stream(fx.seed, "cli/pseudolabel/bbox"),
                                   float(params["max_expand"]), fx.cam.shape)])
    flips = (False, True) if params["tta_flip"] else (False,)
    shapes = {m.shape for m in masks}
    tta = tta_transforms(masks[0].shape, tuple(params["tta_scales"]), flips) if len(shapes) == 1 else None
    run = iterate_pseudo_labels(segs, masks, boxes, rounds, float(params["sigma_conf"]), tta, threads)
    for r, labels in enumerate(run.labels, start=1):
        d = out / f"round-{r}"
        d.mkdir(parents=True, exist_ok=True)
        for (name, _), lab in zip(scenes, labels):
            pio.write_pgm(d / f"{name}.pgm", labels_to_pgm(lab))
    rows = [(r, name, v) for r, row in enumerate(run.iou, start=1) for (name, _), v in zip(scenes, row)]
    _write_csv(out / "iou.csv", ["round", "sample", "iou"], rows)
    pio.write_json(out / "summary.json", {"type": "pseudolabel_summary", "mean_iou": run.mean_iou})
    return {"mean_iou": run.mean_iou}


def _load_poses(path):
    try:
        data = pio.read_json(path)
    except OSError as e:
        raise IoError(f"cannot read poses: {e}") from None
    try:
        return {r["name"]: pio.pose_from_dict(r["pose"]) for r in data["results"]}
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path} is not a pose results file") from e


def cmd_eval(params, seed, out, threads, profile):
    scenes = load_scenes(params, seed, threads)
    preds = _load_poses(params["poses"]) if params["poses"] is not None else {}
    frac = float(params["threshold_fraction"])
    flags = symmetry_flags(params)
    forced = params["symmetric"]

    def one(item):
        name, fx = item
        if params["poses"] is not None and name not in preds:
            raise ConfigError(f"no predicted pose for sample {name}")
        pred = preds.get(name, fx.gt_pose)
        n = int(params["surface_samples"])
        pts = sample_surface(fx.mesh, n, stream(fx.seed, "cli/eval/surface")) if n > 0 else fx.mesh.vertices
        sym = bool(forced) if forced is not None else flags.get(name, False)
        score = adds_score if sym else add_score
        return ("adds" if sym else "add"), score(pred, fx.gt_pose, pts), diameter(pts)

    vals = _pmap(one, scenes, threads)
    rows = [(name, kind, d, diam, frac * diam, int(d < frac * diam))
            for (name, _), (kind, d, diam) in zip(scenes, vals)]
    _write_csv(out / "metrics.csv", ["sample", "metric", "distance", "diameter", "threshold", "correct"], rows)
    recall = float(np.mean([r[-1] for r in rows]))
    pio.write_json(out / "summary.json", {"type": "metric_summary", "samples": len(rows),
                                          "symmetric_samples": sum(r[1] == "adds" for r in rows),
                                          "recall": recall, "threshold_fraction": frac,
                                          "mean_distance": float(np.mean([r[2] for r in rows]))})
    return {"recall": recall}


def cmd_gradcheck(params, seed, out, threads, profile):
    seeds = params["seeds"] if seed is None else [seed, seed + 1, seed + 2]
    checks = run_gradchecks(tuple(int(s) for s in seeds), profile, params["shape"])
    _write_csv(out / "gradcheck.csv", ["check", "relative_error", "tolerance", "passed"],
               [(c.name, c.rel_error, c.tolerance, int(c.passed)) for c in checks])
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {c.rel_error:.3e}  < {c.tolerance:.0e}  {'PASS' if c.passed else 'FAIL'}")
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise CheckFailed(f"gradient checks failed: {', '.join(failed)}")
    return {"checks": len(checks), "failed": 0}


COMMANDS = {
    "gen": (cmd_gen, "generate synthetic scene fixtures"),
    "solve": (cmd_solve, "solve PnP on fixtures or user keypoints"),
    "refine": (cmd_refine, "refine perturbed poses by silhouette alignment"),
    "pseudolabel": (cmd_pseudolabel, "iterate pseudo segmentation labels"),
    "eval": (cmd_eval, "ADD / ADD-S recall over a fixture set"),
    "gradcheck": (cmd_gradcheck, "analytic gradients vs finite differences"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with one section per command")
    common.add_argument("--seed", type=int, default=None, help="base seed (default 42; gradcheck: 0)")
    common.add_argument("--out", default="poseforge-out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--tolerance-profile", choices=sorted(TOLERANCE_PROFILES), default="default")
    common.add_argument("--fixtures", help="shorthand for --set fixtures=PATH")
    common.add_argument("--count", type=int, help="shorthand for --set count=N")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a parameter; VALUE is parsed as JSON when possible")
    parser = argparse.ArgumentParser(prog="poseforge", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=METHOD_DEFAULTS)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text, epilog=_param_help(name),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def run(argv=None):
    """Execute a command; returns ``(exit_code, summary_or_error)``."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        overrides = list(args.set)
        if args.fixtures is not None:
            overrides.append(f"fixtures={json.dumps(args.fixtures)}")
        if args.count is not None:
            overrides.append(f"count={args.count}")
        params = resolve_params(cmd, args.config, overrides)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        seed = args.seed if args.seed is not None or cmd == "gradcheck" else 42
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        # thread count and output path do not influence results, so they stay out of the echo
        pio.write_json(out / "resolved-config.json", {"command": cmd, "seed": seed,
                                                      "tolerance_profile": args.tolerance_profile,
                                                      "params": params})
        summary = COMMANDS[cmd][0](params, seed, out, args.threads, args.tolerance_profile)
        log.info("%s finished: %s", cmd, summary)
        return 0, summary
    except PoseForgeError as e:
        err = {"error": type(e).__name__, "message": str(e), "command": cmd, "module": _origin(e)}
        return 1, err
    except OSError as e:
        return 1, {"error": "IoError", "message": str(e), "command": cmd, "module": "io"}
    except Exception as e:  # noqa: BLE001 - anything else is a bug
        log.debug("%s", traceback.format_exc())
        return 2, {"error": type(e).__name__, "message": str(e), "command": cmd, "module": _origin(e)}


def _origin(exc):
    tb = exc.__traceback__
    mod = "cli"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("poseforge."):
            mod = name.split(".", 1)[1]
        tb = tb.tb_next
    return mod


def main(argv=None):
    logging.basicConfig(level=os.environ.get("POSEFORGE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    code, info = run(argv)
    if code:
        print(json.dumps(info, sort_keys=True), file=sys.stderr)
    else:
        print(json.dumps(info, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
