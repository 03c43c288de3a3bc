"""Command-line entry points: synth, refine, eval.

Exit codes: 0 success, 1 usage error, 2 runtime/numeric error. All refine
defaults reproduce the reference configuration (300 epochs, 40-frame
batches, 5000 sampled vertices, F_max = 5 N, the published energy weights,
and the 30 mm -> 2 mm contact-width schedule).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .contact import AnnealSchedule, ContactParams, annealed_z, contact_probability
from .energy import EnergyWeights
from .evaluation import score_scene, inject_finger_noise
from .forces import ForceField
from .refine import (
    RefineConfig,
    RefineError,
    read_manifest,
    refine,
    write_manifest,
    write_timing,
)
from .scene import SceneError, SceneTrajectory, load_scene, save_scene
from .scenegen import CertificateError, GraspError, generate_static_grasp, parse_grasp_token
from .kinematics import load_skin_model
from .utils import configure_threads


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_refine_flags(p: argparse.ArgumentParser) -> None:
    d = RefineConfig()
    w = d.weights
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-frames", type=int, default=d.batch_frames)
    p.add_argument("--sample-vertices", type=int, default=d.sample_vertices)
    p.add_argument("--z-start", type=float, default=d.z_start)
    p.add_argument("--z-end", type=float, default=d.z_end)
    p.add_argument("--p0", type=float, default=d.p0)
    p.add_argument("--fmax", type=float, default=d.f_max)
    p.add_argument("--mu", type=float, default=d.mu_s)
    p.add_argument("--mass", type=float, default=None)
    p.add_argument("--frame-dt", type=float, default=None)
    p.add_argument("--gamma-phy", type=float, default=w.gamma_phy)
    p.add_argument("--gamma-fr", type=float, default=w.gamma_fr)
    p.add_argument("--gamma-pen", type=float, default=w.gamma_pen)
    p.add_argument("--gamma-dev", type=float, default=w.gamma_dev)
    p.add_argument("--gamma-smooth", type=float, default=w.gamma_smooth)
    p.add_argument("--d-pen", type=float, default=w.d_pen)
    p.add_argument("--lr-pose", type=float, default=d.lr_pose)
    p.add_argument("--lr-field", type=float, default=d.lr_field)
    p.add_argument("--hidden", type=int, default=d.hidden_width)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--share-finger-pose", action=argparse.BooleanOptionalAction,
                   default=d.share_finger_pose)
    p.add_argument("--sdf-vertex-only", action="store_true",
                   help="compare against hand vertices instead of the surface")


def _config_from_args(args) -> RefineConfig:
    weights = EnergyWeights(args.gamma_phy, args.gamma_fr, args.gamma_pen,
                            args.gamma_dev, args.gamma_smooth, args.d_pen)
    try:
        return RefineConfig(
            epochs=args.epochs, batch_frames=args.batch_frames,
            sample_vertices=args.sample_vertices, lr_pose=args.lr_pose,
            lr_field=args.lr_field, share_finger_pose=args.share_finger_pose,
            seed=args.seed, hidden_width=args.hidden, p0=args.p0,
            z_start=args.z_start, z_end=args.z_end, f_max=args.fmax,
            mu_s=args.mu, mass=args.mass, frame_dt=args.frame_dt,
            sdf_mode="vertex" if args.sdf_vertex_only else "surface",
            weights=weights,
        )
    except (RefineError, ValueError) as err:
        raise UsageError(str(err))


def build_parser() -> _Parser:
    parser = _Parser(prog="forcefit",
                     description="physics-based hand-object pose refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic static-grasp scenes")
    p.add_argument("--shape", default="box", choices=("sphere", "box", "cylinder"))
    p.add_argument("--grasp", default="wrap",
                   help="pinch | wrap, optionally with -side / -up")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mass", type=float, default=None)
    p.add_argument("--mu", type=float, default=0.8)
    p.add_argument("--fmax", type=float, default=5.0)
    p.add_argument("--frame-dt", type=float, default=1.0 / 30.0)
    p.add_argument("--out", default=".")

    p = sub.add_parser("refine", help="refine scenes by energy minimization")
    p.add_argument("--scene", nargs="+", default=None)
    p.add_argument("--model", default=None,
                   help="substitute hand skinning model file")
    p.add_argument("--out", default="runs")
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--from-manifest", default=None)
    _add_refine_flags(p)

    p = sub.add_parser("eval", help="score initial vs refined poses")
    p.add_argument("--truth", nargs="+", required=True)
    p.add_argument("--run", required=True, help="directory written by refine")
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None, help="default: the run directory")
    p.add_argument("--z-end", type=float, default=0.002)
    p.add_argument("--p0", type=float, default=0.5)
    p.add_argument("--z-start", type=float, default=0.030)
    p.add_argument("--plot-contact-curves", action="store_true")
    p.add_argument("--plot", action="store_true",
                   help="also render SVG plots of emitted curve tables")
    return parser


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    if args.frames < 3:
        raise UsageError("--frames must be >= 3")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    style, orientation = parse_grasp_token(args.grasp)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_static_grasp(
            args.shape, style, frames=args.frames, seed=seed, mass=args.mass,
            mu_s=args.mu, f_max=args.fmax, frame_dt=args.frame_dt,
            orientation=orientation)
        path = os.path.join(args.out, f"{scene.scene_id}.scene")
        save_scene(scene, path)
        print(f"wrote {path} (contacts: {int((scene.contact_truth == 1).sum())})")
    return 0


# ---------------------------------------------------------------------------
# refine


def save_force_field(field: ForceField, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"FORCEFIELD 1\nhidden {field.hidden_width}\n")
        for x in field.to_flat():
            fh.write(f"{float(x)!r}\n")


def load_force_field(path) -> ForceField:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines[0] != "FORCEFIELD 1":
        raise RefineError(f"{path}: not a FORCEFIELD 1 file")
    hidden = int(lines[1].split()[1])
    flat = np.array([float(x) for x in lines[2:]])
    return ForceField.from_flat(flat, hidden)


def _refine_one(scene_path: str, out_dir: str, config: RefineConfig,
                noise_seed: int | None, model_path: str | None) -> str:
    configure_threads()
    truth = load_scene(scene_path)
    if model_path is not None:
        truth = replace(truth, hand_model=load_skin_model(model_path))
    initial = truth
    if noise_seed is not None:
        initial = truth.with_dofs(
            truth.object_dof,
            inject_finger_noise(truth.hand_dof, noise_seed,
                                shared=config.share_finger_pose))
    initial = replace(initial, contact_truth=None, certificate=None)
    scene_dir = os.path.join(out_dir, truth.scene_id)
    os.makedirs(scene_dir, exist_ok=True)
    save_scene(initial, os.path.join(scene_dir, "initial.scene"))
    result = refine(initial, config)
    save_scene(result.scene, os.path.join(scene_dir, "refined.scene"))
    save_force_field(result.force_field, os.path.join(scene_dir, "field.txt"))
    write_manifest(os.path.join(scene_dir, "manifest.json"), config,
                   truth.scene_id, noise_seed, result.history,
                   input_scene=os.path.relpath(scene_path, scene_dir))
    write_timing(os.path.join(scene_dir, "timing.txt"), result.epoch_seconds)
    for w in result.warnings:
        print(f"[{truth.scene_id}] warning: {w}", file=sys.stderr)
    return truth.scene_id


def _refine_job(job) -> str:
    scene_path, out_dir, config_dict, noise_seed, model_path = job
    return _refine_one(scene_path, out_dir, RefineConfig.from_dict(config_dict),
                       noise_seed, model_path)


def cmd_refine(args) -> int:
    if args.from_manifest is not None:
        data = read_manifest(args.from_manifest)
        config = RefineConfig.from_dict(data["config"])
        noise_seed = data.get("noise_seed")
        if args.scene is None and data.get("input_scene"):
            base = os.path.dirname(os.path.abspath(args.from_manifest))
            args.scene = [os.path.join(base, data["input_scene"])]
    else:
        config = _config_from_args(args)
        noise_seed = args.noise_seed
    if not args.scene:
        raise UsageError("refine needs --scene (or a manifest with input_scene)")
    jobs = [(path, args.out, config.to_dict(), noise_seed, args.model)
            for path in args.scene]
    if args.jobs > 1 and len(jobs) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(min(args.jobs, len(jobs))) as pool:
            ids = pool.map(_refine_job, jobs)
    else:
        ids = [_refine_job(j) for j in jobs]
    for scene_id in ids:
        print(f"refined {scene_id} -> {os.path.join(args.out, scene_id)}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _contact_curve_table(path, schedule: AnnealSchedule, p0: float) -> None:
    zs = [annealed_z(int(round(f * (schedule.epochs - 1))), schedule)
          for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
    d_mm = np.linspace(-20.0, 40.0, 241)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_mm", "d_mm", "p_contact"])
        for z in zs:
            probs = contact_probability(d_mm / 1000.0, ContactParams(z, p0)).numpy()
            for d, p in zip(d_mm, probs):
                writer.writerow([f"{z * 1000:.6g}", f"{d:.6g}", f"{p:.12g}"])


def _render_contact_curves(table_path, svg_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = {}
    with open(table_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["z_mm"], []).append(
                (float(row["d_mm"]), float(row["p_contact"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for z_mm, pts in rows.items():
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"z = {z_mm} mm")
    ax.set_xlabel("signed distance to hand (mm)")
    ax.set_ylabel("contact probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)


def cmd_eval(args) -> int:
    out_dir = args.out if args.out is not None else args.run
    os.makedirs(out_dir, exist_ok=True)
    params = ContactParams(args.z_end, args.p0)
    rows = []
    deltas = []
    for truth_path in args.truth:
        truth = load_scene(truth_path)
        if args.model is not None:
            truth = replace(truth, hand_model=load_skin_model(args.model))
        scene_dir = os.path.join(args.run, truth.scene_id)
        reports = {}
        skip = False
        for phase in ("initial", "refined"):
            scene_path = os.path.join(scene_dir, f"{phase}.scene")
            if not os.path.exists(scene_path):
                raise RefineError(f"missing {scene_path}; run refine first")
            posed = load_scene(scene_path)
            if args.model is not None:
                posed = replace(posed, hand_model=truth.hand_model)
            try:
                reports[phase] = score_scene(posed, truth, params)
            except Exception as err:
                print(f"[{truth.scene_id}] warning: skipped ({err})", file=sys.stderr)
                rows.append({"scene_id": truth.scene_id, "phase": phase,
                             "mpjpe_mm": "", "pr_auc": "", "roc_auc": ""})
                skip = True
                break
            rows.append({"scene_id": truth.scene_id, "phase": phase,
                         **{k: f"{v:.9g}" for k, v in reports[phase].as_row().items()}})
        if skip:
            continue
        init, ref = reports["initial"], reports["refined"]
        deltas.append({
            "scene_id": truth.scene_id,
            "delta_mpjpe_mm": ref.mpjpe_mm - init.mpjpe_mm,
            "delta_pr_auc": ref.pr_auc - init.pr_auc,
            "delta_roc_auc": ref.roc_auc - init.roc_auc,
        })

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, ["scene_id", "phase", "mpjpe_mm",
                                     "pr_auc", "roc_auc"])
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(out_dir, "deltas.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, ["scene_id", "delta_mpjpe_mm",
                                     "delta_pr_auc", "delta_roc_auc"])
        writer.writeheader()
        for d in deltas:
            writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v)
                             for k, v in d.items()})
    summary = {}
    if deltas:
        dm = np.array([d["delta_mpjpe_mm"] for d in deltas])
        dp = np.array([d["delta_pr_auc"] for d in deltas])
        summary = {
            "scenes": len(deltas),
            "mean_delta_mpjpe_mm": float(dm.mean()),
            "mean_delta_pr_auc": float(dp.mean()),
            "frac_mpjpe_improved": float((dm < 0).mean()),
            "frac_pr_auc_improved": float((dp > 0).mean()),
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"scenes: {summary['scenes']}  "
              f"mean dMPJPE: {summary['mean_delta_mpjpe_mm']:+.3f} mm  "
              f"improved: {100 * summary['frac_mpjpe_improved']:.1f}%  "
              f"PR-AUC improved: {100 * summary['frac_pr_auc_improved']:.1f}%")
    if args.plot_contact_curves:
        table = os.path.join(out_dir, "contact_curves.csv")
        _contact_curve_table(table, AnnealSchedule(args.z_start, args.z_end, 300),
                             args.p0)
        if args.plot:
            _render_contact_curves(table, os.path.join(out_dir, "contact_curves.svg"))
    print(f"wrote {metrics_path}")
    return 0


def main(argv=None) -> int:
    configure_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "refine":
            return cmd_refine(args)
        return cmd_eval(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (GraspError, CertificateError, RefineError, SceneError, OSError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
