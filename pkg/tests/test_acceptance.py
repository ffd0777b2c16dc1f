"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy fixtures (trained models) are shared across criteria; everything is
seed-fixed so two runs of this module produce identical numbers.
"""

import json
import time

import numpy as np
import pytest

from latentik import autodiff as ad
from latentik import quat
from latentik.autodiff import Tensor, backward
from latentik.dataset import PoseDataset
from latentik.motion import MotionClip, make_sparse
from latentik.optimizer import ConstraintSet, OptimizerConfig, Session, assemble_loss
from latentik.scenarios import ROLE_SETS, iterations_to_threshold, run_scenario
from latentik.skeleton import DEFAULT_ROLES, Pose, RootState, fk_batch
from latentik.synth import synth_motion
from latentik.temporal import TemporalConfig, build_step_dataset, indices, train_temporal
from latentik.vae import PoseVae, VaeLossWeights, loss_kld, reconstruction_position_error, train_vae

from tests.test_skeleton import matrix_chain_fk, random_pose, random_skeleton


def report(num: int, description: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {description}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# --- shared trained bundle ---------------------------------------------------

TRAIN_EPOCHS = 50
TEMPORAL_EPOCHS = 25


def training_clips():
    clips = [synth_motion("walk_cycle", 15.0, seed=s) for s in (0, 10, 20, 30)]
    clips += [
        synth_motion("arm_wave", 20.0, seed=1),
        synth_motion("arm_wave", 20.0, seed=11),
        synth_motion("squat", 20.0, seed=2),
        synth_motion("squat", 20.0, seed=12),
        synth_motion("pushup_like", 20.0, seed=3),
        synth_motion("pushup_like", 20.0, seed=13),
    ]
    return clips


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    clips = training_clips()
    dataset = PoseDataset(clips)
    assert dataset.frame_count >= 10_000

    t0 = time.perf_counter()
    vae, log = train_vae(dataset, epochs=TRAIN_EPOCHS, seed=0)
    vae_minutes = (time.perf_counter() - t0) / 60.0

    nolc, _ = train_vae(
        dataset, weights=VaeLossWeights(continuity=0.0), epochs=TRAIN_EPOCHS, seed=0
    )

    cfg = TemporalConfig()
    latents, contexts = build_step_dataset(vae, clips, cfg)
    temporal, _ = train_temporal(
        latents, contexts, cfg,
        stats_mean=vae.stats.latent_mean, stats_std=vae.stats.latent_std,
        limb_layout=vae.limb_layout, epochs=TEMPORAL_EPOCHS, seed=0,
        vae_hash=vae.content_hash(),
    )

    out = tmp_path_factory.mktemp("acceptance")
    vae_path = out / "vae.ckpt"
    temporal_path = out / "temporal.ckpt"
    vae.save(vae_path)
    temporal.save(temporal_path)

    return {
        "dataset": dataset,
        "clips": clips,
        "vae": vae,
        "vae_nolc": nolc,
        "temporal": temporal,
        "vae_minutes": vae_minutes,
        "log": log,
        "dir": out,
        "vae_path": vae_path,
        "temporal_path": temporal_path,
    }


def held_out_clips():
    return [
        synth_motion("walk_cycle", 5.0, seed=77),
        synth_motion("squat", 4.0, seed=55),
        synth_motion("pushup_like", 4.0, seed=66),
        synth_motion("arm_wave", 4.0, seed=44),
    ]


def predicted_to_clip(truth, result):
    return result.predicted


# --- criteria ---------------------------------------------------------------


def test_criterion_01_fk_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        skel = random_skeleton(rng, int(rng.integers(5, 23)))
        pose = random_pose(rng, skel.joint_count)
        got = __import__("latentik.skeleton", fromlist=["forward_kinematics"]).forward_kinematics(pose, skel)
        want, _ = matrix_chain_fk(pose, skel)
        worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.perf_counter() - t0
    report(
        1, "forward kinematics matches homogeneous-matrix oracle",
        worst <= 1e-6 and elapsed < 10.0,
        f"max err {worst:.2e} m, {elapsed:.1f}s",
    )


def test_criterion_02_dual_quaternion_round_trip():
    from latentik.skeleton import dq_translation, forward_kinematics, to_dual_quaternions

    rng = np.random.default_rng(2025)
    worst = 0.0
    for _ in range(1000):
        skel = random_skeleton(rng, int(rng.integers(5, 23)))
        pose = random_pose(rng, skel.joint_count)
        dq = to_dual_quaternions(pose, skel)
        back = dq_translation(dq)
        fk = forward_kinematics(pose, skel)
        worst = max(worst, float(np.abs(back[1:] - fk[1:]).max()))
        worst = max(worst, float(np.abs(back[0] - pose.root_displacement).max()))
    report(2, "dual-quaternion translation round trip", worst <= 1e-6,
           f"max err {worst:.2e} m")


def test_criterion_03_gradient_integrity():
    from tests.test_autodiff import finite_difference

    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0

    def fd_check(build, x0):
        nonlocal worst
        t = Tensor(x0.copy(), requires_grad=True)
        got = backward(build(t))[t]
        want = finite_difference(lambda x: build(Tensor(x)).item(), x0.copy())
        denom = max(np.abs(want).max(), 1.0)
        worst = max(worst, float(np.abs(got - want).max() / denom))

    b = Tensor(rng.standard_normal((3, 4)))
    m = Tensor(rng.standard_normal((4, 3)))
    c3 = Tensor(rng.standard_normal((3, 3)))
    primitives = [
        (lambda t: ad.mean(ad.add(t, b)), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.square(ad.sub(t, b))), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.mul(t, b)), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.square(ad.matmul(t, m))), rng.standard_normal((2, 4))),
        (lambda t: ad.mean(ad.square(ad.concat([t, b], axis=1))), rng.standard_normal((3, 2))),
        (lambda t: ad.mean(ad.square(ad.getitem(t, (slice(None), slice(0, 2))))),
         rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.square(ad.index_select(t, 1, [0, 0, 1]))),
         rng.standard_normal((2, 3, 2))),
        (lambda t: ad.mean(ad.square(ad.reshape(t, (8,)))), rng.standard_normal((2, 4))),
        (lambda t: ad.mean(ad.square(ad.swapaxes(t, 0, 1))), rng.standard_normal((2, 4))),
        (lambda t: ad.mean(ad.mul(ad.tile(t, 3, 0), b)), rng.standard_normal((1, 4))),
        (lambda t: ad.sum_(ad.square(ad.mean(t, axis=1))), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.square(ad.sum_(t, axis=0))), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.square(t)), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.sqrt(t)), rng.uniform(0.5, 2.0, (3, 4))),
        (lambda t: ad.mean(ad.exp(t)), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.log(t)), rng.uniform(0.5, 2.0, (3, 4))),
        (lambda t: ad.mean(ad.tanh(t)), rng.standard_normal((3, 4))),
        (lambda t: ad.mean(ad.relu(t)), rng.standard_normal((3, 4)) + 0.2),
        (lambda t: ad.mean(ad.square(ad.elu(t))), rng.standard_normal((3, 4)) + 0.2),
        (lambda t: ad.mean(ad.square(ad.softmax(t))), rng.standard_normal((3, 5))),
        (lambda t: ad.mean(ad.square(ad.layer_norm(t))), rng.standard_normal((3, 6))),
        (lambda t: ad.mean(ad.square(ad.vec_normalize(t))), rng.standard_normal((3, 4)) + 0.5),
        (lambda t: ad.mean(ad.square(ad.cross(t, c3))), rng.standard_normal((3, 3))),
        (lambda t: ad.mse(t, b), rng.standard_normal((3, 4))),
        (lambda t: ad.sum_(ad.scale(t, -1.7)), rng.standard_normal(5)),
    ]
    for build, x0 in primitives:
        fd_check(build, x0)

    # end-to-end constraint gradient through a random decoder
    vae = PoseVae(__import__("latentik.skeleton", fromlist=["default_humanoid"]).default_humanoid(), seed=5)
    clip = synth_motion("walk_cycle", 0.5, seed=3)
    roles = list(DEFAULT_ROLES)
    stream = make_sparse(clip, roles)
    cs = ConstraintSet.from_roles(roles)
    for sig in stream[10].signals:
        cs.get(f"ee_pos:{sig.role}").target_position = sig.position
        cs.get(f"ee_rot:{sig.role}").target_rotation = sig.rotation
    root = clip.root_states()[10]

    def lpo_loss(z_np):
        z = Tensor(z_np[None], requires_grad=True)
        loss, _ = assemble_loss(cs, vae.decoder(z), root, vae.skeleton)
        return loss, z

    z0 = rng.standard_normal(24) * 0.4
    loss, z = lpo_loss(z0)
    grad = backward(loss)[z][0]
    probes = rng.choice(24, size=24, replace=False)
    for k in list(probes) + list(rng.integers(0, 24, 26)):
        zp, zm = z0.copy(), z0.copy()
        zp[k] += 1e-4
        zm[k] -= 1e-4
        fd = (lpo_loss(zp)[0].item() - lpo_loss(zm)[0].item()) / 2e-4
        worst = max(worst, abs(grad[k] - fd) / max(abs(fd), 1.0))

    elapsed = time.perf_counter() - t0
    report(3, "gradients match central finite differences",
           worst <= 1e-4 and elapsed < 60.0, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_04_kld_quadrature():
    from scipy.integrate import quad

    exact_zero = loss_kld(np.zeros(24), np.ones(24)) == 0.0
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        mu = float(rng.uniform(-2, 2))
        sigma = float(rng.uniform(0.3, 2.5))

        def integrand(x):
            logp = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma * np.sqrt(2 * np.pi))
            logq = -0.5 * x * x - np.log(np.sqrt(2 * np.pi))
            return np.exp(logp) * (logp - logq)

        oracle, _ = quad(integrand, mu - 12 * sigma, mu + 12 * sigma, limit=200)
        worst = max(worst, abs(loss_kld(np.array([mu]), np.array([sigma])) - oracle))
    report(4, "closed-form KL matches quadrature", worst <= 1e-6 and exact_zero,
           f"max err {worst:.2e}, kld(0,1)==0 {exact_zero}")


def test_criterion_05_desk_scale_training(bundle):
    held = PoseDataset(held_out_clips())
    fresh = PoseVae(bundle["vae"].skeleton, seed=99)
    untrained = reconstruction_position_error(fresh, held)
    trained = reconstruction_position_error(bundle["vae"], held)
    ratio = trained / untrained
    ok = (
        bundle["dataset"].frame_count >= 10_000
        and ratio <= 0.25
        and bundle["vae_minutes"] <= 30.0
    )
    report(5, "50-epoch training cuts held-out positional error to <=25%",
           ok, f"{untrained * 100:.1f}cm -> {trained * 100:.1f}cm "
               f"(ratio {ratio:.3f}), {bundle['vae_minutes']:.1f} min")


def test_criterion_06_optimizer_efficacy(bundle):
    roles = ROLE_SETS["all"]
    eval_clips = [
        synth_motion("walk_cycle", 4.0, seed=77),
        synth_motion("squat", 3.0, seed=55),
        synth_motion("pushup_like", 3.0, seed=66),
    ]
    cfg = OptimizerConfig.for_mode("offline")
    assert cfg.max_iterations <= 10
    ees, baselines = [], []
    for clip in eval_clips:
        res = run_scenario(bundle["vae"], clip, roles, config=cfg,
                           temporal=bundle["temporal"], scenario="eff")
        base = run_scenario(
            bundle["vae"], clip, roles,
            config=OptimizerConfig.for_mode("offline", max_iterations=0, root_fusion=0.0),
            temporal=None, scenario="base",
        )
        ees.append(res.report.ee_cm)
        baselines.append(base.report.ee_cm)
    mean_ee = float(np.mean(ees))
    mean_base = float(np.mean(baselines))
    ok = mean_ee <= 3.0 and mean_ee <= 0.25 * mean_base
    report(6, "6-sensor offline end-effector error <=3cm and <=0.25x baseline",
           ok, f"ee {mean_ee:.2f}cm vs baseline {mean_base:.2f}cm "
               f"(ratio {mean_ee / mean_base:.3f})")


def test_criterion_07_continuity_iterations(bundle):
    kinds = ["pushup_like", "walk_cycle", "squat", "arm_wave"]
    evals = [synth_motion(kinds[i % 4], 2.0, seed=100 + i) for i in range(8)]
    cfg = OptimizerConfig.for_mode("ablation", eps_pos_m=0.02, eps_rot_deg=10.0)
    with_lc = float(np.mean([
        iterations_to_threshold(bundle["vae"], c, ROLE_SETS["all"], config=cfg)
        for c in evals
    ]))
    without_lc = float(np.mean([
        iterations_to_threshold(bundle["vae_nolc"], c, ROLE_SETS["all"], config=cfg)
        for c in evals
    ]))
    ratio = with_lc / without_lc
    report(7, "continuity loss cuts iterations-to-threshold to <=0.9x",
           ratio <= 0.9, f"{with_lc:.1f} vs {without_lc:.1f} iters (ratio {ratio:.3f})")


def test_criterion_08_temporal_ablation(bundle):
    clips = [synth_motion("walk_cycle", 4.0, seed=77),
             synth_motion("walk_cycle", 4.0, seed=88)]
    roles = ROLE_SETS["hip_head_hands"]
    pos_t, pos_n, vel_t, vel_n, invalid = [], [], [], [], 0
    for clip in clips:
        with_t = run_scenario(bundle["vae"], clip, roles, temporal=bundle["temporal"],
                              scenario="with_T")
        without_t = run_scenario(bundle["vae"], clip, roles, temporal=None,
                                 scenario="no_T")
        pos_t.append(with_t.report.pos_cm)
        pos_n.append(without_t.report.pos_cm)
        vel_t.append(with_t.report.vel_cm_s)
        vel_n.append(without_t.report.vel_cm_s)
        invalid += without_t.report.extras["invalid_region_frames"]
    pos_ok = np.mean(pos_t) <= np.mean(pos_n)
    secondary = invalid >= 1 or np.mean(vel_n) > np.mean(vel_t)
    report(8, "temporal predictor improves 4-sensor reconstruction",
           pos_ok and secondary,
           f"pos {np.mean(pos_t):.2f} vs {np.mean(pos_n):.2f} cm, "
           f"vel {np.mean(vel_t):.1f} vs {np.mean(vel_n):.1f}, invalid {invalid}")


def test_criterion_09_variable_sensor_robustness(bundle, tmp_path):
    from latentik.bvh import save_bvh
    from latentik.cli import main
    from latentik.scenarios import run_table_suite

    clip = synth_motion("walk_cycle", 3.0, seed=77)
    bvh_path = tmp_path / "eval.bvh"
    save_bvh(clip, bvh_path)
    out_dir = tmp_path / "suite"
    code = main([
        "evaluate", "--checkpoint", str(bundle["vae_path"]),
        "--temporal", str(bundle["temporal_path"]),
        "--data", str(bvh_path), "--suite", "--seed", "0",
        "--out", str(out_dir),
    ])
    assert code == 0
    rows = json.loads((out_dir / "report.json").read_text())
    assert len(rows) == 8
    finite = all(
        np.isfinite([r["pos_cm"], r["rot_deg"], r["vel_cm_s"], r["ee_cm"]]).all()
        for r in rows
    )
    by_name = {r["scenario"].split(":")[0]: r for r in rows}
    paired = (
        by_name["6_all_faulty_1pct"]["ee_cm"] >= by_name["6_all"]["ee_cm"]
        and by_name["6_all_faulty_05pct"]["ee_cm"] >= by_name["6_all"]["ee_cm"]
    )

    # unit-quaternion / finiteness check on the produced pose streams
    results = run_table_suite(
        bundle["vae"], synth_motion("walk_cycle", 2.0, seed=78),
        temporal=bundle["temporal"], fault_seed=0,
    )
    unit_ok = True
    for res in results:
        quats = res.predicted.quats
        unit_ok &= bool(np.all(np.isfinite(quats)))
        unit_ok &= bool(np.abs(np.linalg.norm(quats, axis=-1) - 1.0).max() <= 1e-9)
        unit_ok &= bool(np.all(np.isfinite(res.predicted.displacements)))
    report(9, "one binary runs all sensor/dof/fault scenarios",
           finite and paired and unit_ok,
           f"8 scenarios, faulty ee {by_name['6_all_faulty_1pct']['ee_cm']:.2f} >= "
           f"stable {by_name['6_all']['ee_cm']:.2f}")


def test_criterion_10_scheduling_exactness():
    from tests.test_temporal import brute_force_indices

    mismatches = 0
    for wf in (1, 16, 60):
        cfg = TemporalConfig(future_window=wf)
        for i in range(10_000):
            if indices(i, cfg) != brute_force_indices(i, 4, wf):
                mismatches += 1
    report(10, "predictor scheduling matches brute-force oracle",
           mismatches == 0, f"{mismatches} mismatches over 30k frames")


def test_criterion_11_offline_online_equivalence(bundle, tmp_path):
    import threading

    from latentik import protocol
    from latentik.cli import main
    from latentik.service import SessionService, replay_stream

    clip = synth_motion("walk_cycle", 1.0, seed=9)
    roles = list(DEFAULT_ROLES)
    stream = make_sparse(clip, roles)
    header = protocol.stream_header(
        clip.skeleton, roles, "pos_rot", clip.frame_rate, clip.initial_root, clip.pose(0)
    )
    frames = [protocol.sparse_frame_message(i, s) for i, s in enumerate(stream)]
    stream_path = tmp_path / "stream.jsonl"
    protocol.write_stream(stream_path, header, frames)

    out_path = tmp_path / "offline.jsonl"
    code = main([
        "reconstruct", "--checkpoint", str(bundle["vae_path"]),
        "--temporal", str(bundle["temporal_path"]),
        "--data", str(stream_path), "--mode", "offline",
        "--out", str(out_path), "--seed", "0",
    ])
    assert code == 0

    svc = SessionService(
        ("127.0.0.1", 0), PoseVae.load(bundle["vae_path"]),
        temporal=__import__("latentik.temporal", fromlist=["TemporalPredictor"]).TemporalPredictor.load(bundle["temporal_path"]),
        config=OptimizerConfig.for_mode("offline"),
    )
    thread = threading.Thread(target=svc.serve_forever, daemon=True)
    thread.start()
    try:
        replies = replay_stream("127.0.0.1", svc.port, header, frames)
    finally:
        svc.shutdown()
        svc.server_close()
    online = "".join(
        protocol.encode_message({k: v for k, v in m.items() if k != "seq"})
        for m in replies if m["type"] == "pose_frame"
    )
    ok = online.encode() == out_path.read_bytes()
    report(11, "offline reconstruct and live service agree bitwise", ok,
           f"{len(frames)} frames")


# --- derived examples needing the trained bundle -----------------------------


def test_predictor_beats_hold_last_baseline(bundle):
    held = synth_motion("walk_cycle", 8.0, seed=91)
    cfg = bundle["temporal"].cfg
    latents, contexts = build_step_dataset(bundle["vae"], [held], cfg)
    z, c = latents[0], contexts[0]
    tp = bundle["temporal"]
    errs_tp, errs_hold = [], []
    for s in range(cfg.past_window, z.shape[0] - 1):
        mem = tp.encode_batch(
            ad.constant(c[None, s - cfg.past_window + 1 : s + 1])
        ).data[0]
        pred = tp.decode_step(z[s : s + 1], mem)
        errs_tp.append(np.mean((pred - z[s + 1]) ** 2))
        errs_hold.append(np.mean((z[s] - z[s + 1]) ** 2))
    assert np.mean(errs_tp) < np.mean(errs_hold)


def test_zero_fault_probability_is_bitwise_identical(bundle):
    from latentik.scenarios import FaultSchedule

    clip = synth_motion("walk_cycle", 1.0, seed=42)
    roles = ROLE_SETS["all"]
    plain = run_scenario(bundle["vae"], clip, roles, scenario="s")
    faulty0 = run_scenario(bundle["vae"], clip, roles,
                           fault=FaultSchedule(0.0, 100, 0), scenario="s")
    assert np.array_equal(plain.predicted.quats, faulty0.predicted.quats)
    assert np.array_equal(plain.predicted.displacements, faulty0.predicted.displacements)
    assert plain.report.to_dict() == faulty0.report.to_dict()


def test_identical_ablation_variants_give_identical_tables(bundle):
    from latentik.scenarios import run_ablation

    clip = synth_motion("squat", 1.0, seed=21)
    a = run_ablation("no_continuity", bundle["vae"], bundle["vae"], clip,
                     ROLE_SETS["all"], temporal=None)
    assert a["full"].to_dict()["pos_cm"] == a["no_continuity"].to_dict()["pos_cm"]


def test_faulty_stream_has_no_teleports(bundle):
    from latentik.scenarios import FaultSchedule

    clip = synth_motion("walk_cycle", 3.0, seed=31)
    result = run_scenario(
        bundle["vae"], clip, ROLE_SETS["all"], fault=FaultSchedule(0.01, 100, 5),
        temporal=bundle["temporal"], scenario="faulty",
    )
    world = result.predicted.world_positions()
    speeds = np.linalg.norm(np.diff(world, axis=0), axis=-1) * clip.frame_rate
    assert np.isfinite(world).all()
    assert speeds.max() < 10.0  # m/s; disconnects must not teleport limbs


# --- module invariants needing the trained bundle ---------------------------


def test_latent_sanity_after_training(bundle):
    dataset = bundle["dataset"]
    idx = np.linspace(0, dataset.frame_count - 1, 1000).astype(int)
    mu, logvar = bundle["vae"].encoder(ad.constant(dataset.dq[idx]))
    sigma = np.exp(0.5 * logvar.data)
    per_dim_mu = mu.data.mean(axis=0)
    assert np.abs(per_dim_mu).max() <= 0.5
    assert 0.1 <= sigma.mean() <= 2.0


def test_random_sample_validity(bundle):
    vae = bundle["vae"]
    rng = np.random.default_rng(123)
    zs = rng.standard_normal((1000, vae.latent_dim))
    decoded = vae.decode_batch(zs)
    j = vae.skeleton.joint_count
    quats = decoded[:, : j * 4].reshape(-1, j, 4)
    norms = np.linalg.norm(quats, axis=-1)
    assert np.abs(norms - 1.0).max() <= 1e-9
    fk = fk_batch(quat.normalize(quats), vae.skeleton)
    stats = vae.stats
    center = (stats.bbox_min + stats.bbox_max) / 2
    half = (stats.bbox_max - stats.bbox_min) / 2 + 1e-9
    inside = np.all(
        (np.abs(fk - center) <= 2.0 * half).reshape(1000, -1), axis=1
    )
    assert inside.mean() >= 0.95
