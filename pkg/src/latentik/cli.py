"""Command-line interface: data synthesis, training, reconstruction,
evaluation, ablations and the live session service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import protocol
from .bvh import load_bvh, save_bvh
from .dataset import PoseDataset
from .errors import CheckpointError, LatentikError
from .metrics import compute_metrics
from .motion import MotionClip, make_sparse
from .optimizer import OptimizerConfig, Session, ConstraintSet
from .scenarios import (
    FaultSchedule,
    default_w_future,
    hipless_helper_constraints,
    iterations_to_threshold,
    parse_roles,
    reconstruct_clip,
    run_scenario,
    run_table_suite,
)
from .skeleton import Pose, RootState
from .synth import KINDS, synth_motion
from .temporal import TemporalConfig, TemporalPredictor, build_step_dataset, train_temporal
from .vae import PoseVae, VaeLossWeights, train_vae


def _load_clips(data: str) -> list[MotionClip]:
    path = Path(data)
    if path.is_dir():
        files = sorted(path.glob("*.bvh"))
        if not files:
            raise LatentikError(f"no .bvh files in {path}")
        return [load_bvh(f) for f in files]
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        clips = []
        for entry in manifest["clips"]:
            if entry.get("split", "train") == "train":
                clips.append(load_bvh(path.parent / entry["file"]))
        return clips
    return [load_bvh(path)]


def _eval_clips(data: str) -> list[MotionClip]:
    path = Path(data)
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        clips = [
            load_bvh(path.parent / e["file"])
            for e in manifest["clips"]
            if e.get("split") == "test"
        ]
        if clips:
            return clips
    return _load_clips(data)


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig.for_mode(
        args.mode,
        lambda_po=args.lambda_po,
        lambda_t=args.lambda_t,
        max_iterations=args.max_iters,
        eps_pos_m=None if args.epsilon_pos_cm is None else args.epsilon_pos_cm / 100.0,
        eps_rot_deg=args.epsilon_rot_deg,
    )


def _add_optimizer_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=["realtime", "offline", "ablation"], default="offline")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--epsilon-pos-cm", type=float, default=None)
    p.add_argument("--epsilon-rot-deg", type=float, default=None)
    p.add_argument("--lambda-po", type=float, default=None)
    p.add_argument("--lambda-t", type=float, default=None)
    p.add_argument("--wf", type=int, default=None)


def cmd_synth_data(args) -> int:
    clip = synth_motion(args.kind, args.duration, seed=args.seed)
    save_bvh(clip, args.out)
    print(f"wrote {clip.frame_count} frames to {args.out}")
    if args.stream_out:
        roles = parse_roles(args.roles)
        stream = make_sparse(clip, roles, args.dof)
        header = protocol.stream_header(
            clip.skeleton, roles, args.dof, clip.frame_rate, clip.initial_root, clip.pose(0)
        )
        frames = [protocol.sparse_frame_message(i, s) for i, s in enumerate(stream)]
        protocol.write_stream(args.stream_out, header, frames)
        print(f"wrote sensor stream to {args.stream_out}")
    return 0


def cmd_train_vae(args) -> int:
    clips = _load_clips(args.data)
    dataset = PoseDataset(clips)
    weights = VaeLossWeights(
        reconstruction=args.lambda_q, fk=args.lambda_fk,
        kld=args.lambda_kld, continuity=args.lambda_c,
    )
    model, log = train_vae(
        dataset, weights=weights, epochs=args.epochs, batch_size=args.batch,
        lr=args.lr, seed=args.seed,
        log_cb=lambda e: print(
            f"epoch {e.epoch}: q={e.reconstruction:.5f} fk={e.fk:.5f} "
            f"kld={e.kld:.4f} c={e.continuity:.5f} ({e.seconds:.1f}s)"
        ),
    )
    model.save(args.out)
    log_path = Path(args.out).with_suffix(".log.json")
    log_path.write_text(json.dumps([e.as_dict() for e in log], indent=1))
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_train_temporal(args) -> int:
    vae = PoseVae.load(args.vae)
    clips = _load_clips(args.data)
    cfg = TemporalConfig(past_window=args.wp, future_window=args.wf)
    latents, contexts = build_step_dataset(vae, clips, cfg)
    stats = vae.stats
    model, log = train_temporal(
        latents, contexts, cfg,
        stats_mean=None if stats is None else stats.latent_mean,
        stats_std=None if stats is None else stats.latent_std,
        limb_layout=vae.limb_layout or None,
        epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
        vae_hash=vae.content_hash(),
        log_cb=lambda e: print(f"epoch {e.epoch}: loss={e.loss:.5f} ({e.seconds:.1f}s)"),
    )
    model.save(args.out)
    print(f"saved checkpoint to {args.out}")
    return 0


def _load_models(args) -> tuple[PoseVae, TemporalPredictor | None]:
    vae = PoseVae.load(args.checkpoint)
    temporal = None
    if getattr(args, "temporal", None):
        temporal = TemporalPredictor.load(args.temporal, expected_vae_hash=vae.content_hash())
    return vae, temporal


def cmd_reconstruct(args) -> int:
    vae, temporal = _load_models(args)
    cfg = _optimizer_config(args)
    data = Path(args.data)
    if data.suffix == ".jsonl":
        header_msg, frame_msgs = protocol.read_stream(data)
        roles, dof, _rate, root, seed_pose = protocol.parse_stream_header(header_msg)
        frames = [protocol.parse_sparse_frame(m) for m in frame_msgs]
    else:
        clip = load_bvh(data)
        roles = parse_roles(args.roles)
        dof = args.dof
        root = clip.initial_root
        seed_pose = clip.pose(0)
        frames = list(enumerate(make_sparse(clip, roles, dof)))

    wf = args.wf if args.wf is not None else default_w_future(roles)
    session = Session(
        vae, ConstraintSet.from_roles(roles, dof), cfg,
        temporal=temporal, seed_pose=seed_pose, initial_root=root, w_future=wf,
    )
    out_lines = []
    trace_lines = []
    poses = []
    for frame_no, sparse in frames:
        pose, trace = session.optimize_frame(sparse)
        poses.append(pose)
        out_lines.append(
            protocol.encode_message(
                protocol.pose_frame_message(frame_no, session.root_state, pose, trace)
            )
        )
        trace_lines.append(protocol.canonical(trace.to_dict()) + "\n")
    Path(args.out).write_text("".join(out_lines))
    if args.trace_out:
        Path(args.trace_out).write_text("".join(trace_lines))
    if args.bvh_out and poses:
        clip_out = MotionClip(
            vae.skeleton,
            np.stack([p.joint_rotations for p in poses]),
            np.stack([p.root_displacement for p in poses]),
            60.0,
            root.copy(),
        )
        save_bvh(clip_out, args.bvh_out)
    print(f"reconstructed {len(poses)} frames -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .report import write_reports

    vae, temporal = _load_models(args)
    cfg = _optimizer_config(args)
    clips = _eval_clips(args.data)
    reports, traces = [], {}
    if args.suite:
        for clip in clips:
            for result in run_table_suite(
                vae, clip, temporal=temporal, config=cfg, fault_seed=args.seed
            ):
                result.report.scenario = f"{result.report.scenario}:{clip.name}"
                reports.append(result.report)
                traces[result.report.scenario] = result.traces
    else:
        roles = parse_roles(args.roles)
        fault = None
        if args.fault_prob > 0:
            fault = FaultSchedule(args.fault_prob, args.fault_reconnect, args.seed)
        extra = hipless_helper_constraints() if args.hipless_helpers else None
        for clip in clips:
            result = run_scenario(
                vae, clip, roles, args.dof, fault=fault, config=cfg,
                temporal=temporal, scenario=f"{len(roles)}s:{clip.name}",
                w_future=args.wf, extra_constraints=extra,
            )
            reports.append(result.report)
            traces[result.report.scenario] = result.traces
    write_reports(args.out, reports, traces)
    for r in reports:
        print(
            f"{r.scenario}: pos {r.pos_cm:.2f}cm rot {r.rot_deg:.2f}deg "
            f"vel {r.vel_cm_s:.2f}cm/s ee {r.ee_cm:.2f}cm iters {r.mean_iterations:.1f}"
        )
    print(f"reports written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from .report import write_reports

    vae, temporal = _load_models(args)
    cfg = _optimizer_config(args)
    clips = _eval_clips(args.data)
    nc = PoseVae.load(args.nc_checkpoint) if args.nc_checkpoint else None
    reports = []
    rows = []
    for clip in clips:
        full = run_scenario(
            vae, clip, parse_roles(args.roles), config=cfg, temporal=temporal,
            scenario=f"full:{clip.name}",
        )
        reports.append(full.report)
        row = {"clip": clip.name, "full_pos_cm": full.report.pos_cm}
        if args.which in ("no_temporal", "all"):
            no_t = run_scenario(
                vae, clip, parse_roles(args.roles), config=cfg, temporal=None,
                scenario=f"no_temporal:{clip.name}",
            )
            reports.append(no_t.report)
            row["no_temporal_pos_cm"] = no_t.report.pos_cm
        if args.which in ("no_continuity", "all") and nc is not None:
            itcfg = OptimizerConfig.for_mode(
                "ablation", eps_pos_m=args.iter_eps_pos_cm / 100.0,
                eps_rot_deg=args.iter_eps_rot_deg,
            )
            row["iters_full"] = iterations_to_threshold(
                vae, clip, parse_roles(args.roles), config=itcfg
            )
            row["iters_no_continuity"] = iterations_to_threshold(
                nc, clip, parse_roles(args.roles), config=itcfg
            )
        rows.append(row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(protocol.canonical(rows) + "\n")
    write_reports(out, reports)
    for row in rows:
        print(protocol.canonical(row))
    return 0


def cmd_serve(args) -> int:
    from .service import SessionService

    vae, temporal = _load_models(args)
    cfg = _optimizer_config(args)
    service = SessionService(
        (args.host, args.port), vae, temporal=temporal, config=cfg,
        default_roles=parse_roles(args.roles), default_dof=args.dof,
        w_future=args.wf,
    )
    print(f"listening on {args.host}:{service.port} (mode={cfg.mode})", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentik",
        description="Full-body motion reconstruction from sparse trackers "
        "via latent-space optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic motion clip")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stream-out", default=None, help="also record a sensor stream")
    p.add_argument("--roles", default="hip,head,hands,feet")
    p.add_argument("--dof", choices=["pos_rot", "pos_only"], default="pos_rot")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train-vae", help="train the pose autoencoder")
    p.add_argument("--data", required=True, help="bvh file, directory, or manifest.json")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-q", type=float, default=1.0)
    p.add_argument("--lambda-fk", type=float, default=100.0)
    p.add_argument("--lambda-kld", type=float, default=0.001)
    p.add_argument("--lambda-c", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_vae)

    p = sub.add_parser("train-temporal", help="train the temporal predictor")
    p.add_argument("--vae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wp", type=int, default=16)
    p.add_argument("--wf", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_temporal)

    p = sub.add_parser("reconstruct", help="reconstruct motion from a sensor stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--temporal", default=None)
    p.add_argument("--data", required=True, help="recorded stream (.jsonl) or .bvh")
    p.add_argument("--roles", default="hip,head,hands,feet")
    p.add_argument("--dof", choices=["pos_rot", "pos_only"], default="pos_rot")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--bvh-out", default=None)
    _add_optimizer_flags(p)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="run evaluation scenarios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--temporal", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--roles", default="hip,head,hands,feet")
    p.add_argument("--dof", choices=["pos_rot", "pos_only"], default="pos_rot")
    p.add_argument("--fault-prob", type=float, default=0.0)
    p.add_argument("--fault-reconnect", type=int, default=100)
    p.add_argument("--hipless-helpers", action="store_true")
    p.add_argument("--suite", action="store_true", help="run the full scenario grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_optimizer_flags(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="component ablation comparisons")
    p.add_argument("--which", choices=["no_continuity", "no_temporal", "full", "all"],
                   default="all")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nc-checkpoint", default=None,
                   help="VAE trained without the continuity loss")
    p.add_argument("--temporal", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--roles", default="hip,head,hands,feet")
    p.add_argument("--iter-eps-pos-cm", type=float, default=2.0)
    p.add_argument("--iter-eps-rot-deg", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_optimizer_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("serve", help="run the live session service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--temporal", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5928)
    p.add_argument("--roles", default="hip,head,hands,feet")
    p.add_argument("--dof", choices=["pos_rot", "pos_only"], default="pos_rot")
    p.add_argument("--seed", type=int, default=0)
    _add_optimizer_flags(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except LatentikError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
