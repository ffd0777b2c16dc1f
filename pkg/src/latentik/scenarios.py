"""Scenario runner: streaming reconstruction of held-out clips under varying
sensor configurations, fault schedules, and ablation variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, DimensionError
from .metrics import MetricsReport, compute_metrics
from .motion import MotionClip, make_sparse
from .optimizer import Constraint, ConstraintSet, FrameTrace, OptimizerConfig, Session
from .skeleton import SparseInput
from .temporal import TemporalPredictor
from .vae import PoseVae

ROLE_SETS = {
    "head_hands": ["head", "left_hand", "right_hand"],
    "hip_hands": ["hip", "left_hand", "right_hand"],
    "hip_head_hands": ["hip", "head", "left_hand", "right_hand"],
    "hip_head_hands_rfoot": ["hip", "head", "left_hand", "right_hand", "right_foot"],
    "all": ["hip", "head", "left_hand", "right_hand", "left_foot", "right_foot"],
}


def parse_roles(spec: str) -> list[str]:
    """'hip,head,hands' style list; 'hands'/'feet' expand to both sides."""
    if spec in ROLE_SETS:
        return list(ROLE_SETS[spec])
    roles: list[str] = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "hands":
            roles += ["left_hand", "right_hand"]
        elif token == "feet":
            roles += ["left_foot", "right_foot"]
        else:
            roles.append(token)
    return roles


@dataclass
class FaultSchedule:
    """Random sensor dropouts: at most one new disconnect per frame."""

    probability: float = 0.01
    reconnect_after: int = 100
    seed: int = 0

    def disconnect_frames(self, frame_count: int, sensor_count: int) -> np.ndarray:
        """Boolean validity matrix [frame_count, sensor_count]."""
        rng = np.random.default_rng(self.seed)
        valid = np.ones((frame_count, sensor_count), dtype=bool)
        down_until = np.zeros(sensor_count, dtype=int)
        for t in range(frame_count):
            connected = np.flatnonzero(down_until <= t)
            if connected.size and rng.random() < self.probability:
                victim = connected[rng.integers(connected.size)]
                down_until[victim] = t + self.reconnect_after
            valid[t] = down_until <= t
        return valid

    def apply(self, stream: list[SparseInput]) -> list[SparseInput]:
        if not stream:
            return stream
        validity = self.disconnect_frames(len(stream), len(stream[0].signals))
        out = []
        for t, frame in enumerate(stream):
            signals = []
            for k, sig in enumerate(frame.signals):
                copy = type(sig)(
                    sig.role, sig.position.copy(), sig.rotation.copy(), sig.dof,
                    bool(sig.valid and validity[t, k]),
                )
                signals.append(copy)
            out.append(SparseInput(signals))
        return out


@dataclass
class ScenarioResult:
    report: MetricsReport
    traces: list[FrameTrace]
    predicted: MotionClip


def hipless_helper_constraints(target_floor: float = 0.04) -> list[Constraint]:
    """Extra losses for root-less tracking: feet near the floor plane and the
    hip kept under the head's ground projection."""
    return [
        Constraint(
            "floor:feet", "floor_proximity", ("left_foot", "right_foot"),
            weight=0.5, target_value=target_floor,
        ),
        Constraint(
            "ground:hip_head", "ground_projection_distance", ("hip", "head"), weight=0.5
        ),
    ]


def reconstruct_clip(
    vae: PoseVae,
    truth: MotionClip,
    stream: list[SparseInput],
    roles: list[str],
    config: OptimizerConfig,
    temporal: TemporalPredictor | None = None,
    w_future: int | None = None,
    dof: str = "pos_rot",
    extra_constraints: list[Constraint] | None = None,
) -> ScenarioResult:
    """Run a session over a recorded sparse stream and compare to ground truth."""
    constraints = ConstraintSet.from_roles(roles, dof)
    for c in extra_constraints or []:
        constraints.add(c)
    session = Session(
        vae,
        constraints,
        config,
        temporal=temporal,
        seed_pose=truth.pose(0),
        initial_root=truth.initial_root,
        w_future=w_future,
    )
    poses, traces = [], []
    for frame in stream:
        pose, trace = session.optimize_frame(frame)
        poses.append(pose)
        traces.append(trace)
    predicted = MotionClip(
        truth.skeleton,
        np.stack([p.joint_rotations for p in poses]),
        np.stack([p.root_displacement for p in poses]),
        truth.frame_rate,
        truth.initial_root.copy(),
        name=f"pred-{truth.name}",
    )
    report = compute_metrics(
        predicted, truth, roles,
        mean_iterations=float(np.mean([t.iterations for t in traces])),
    )
    return ScenarioResult(report, traces, predicted)


def default_w_future(roles: list[str]) -> int:
    """Six sensors leave little ambiguity (pure regularizer mode); fewer
    sensors look ahead. Desk-scale predictors stay reliable over short
    autoregressive chunks, so ambiguity cases refresh every 4 steps."""
    return 1 if len(roles) >= 6 else 4


def run_scenario(
    vae: PoseVae,
    truth: MotionClip,
    roles: list[str],
    dof: str = "pos_rot",
    fault: FaultSchedule | None = None,
    config: OptimizerConfig | None = None,
    temporal: TemporalPredictor | None = None,
    scenario: str = "",
    w_future: int | None = None,
    extra_constraints: list[Constraint] | None = None,
) -> ScenarioResult:
    config = config or OptimizerConfig.for_mode("offline")
    if vae.skeleton.content_hash() != truth.skeleton.content_hash():
        raise CheckpointError("checkpoint skeleton does not match the evaluation clip")
    stream = make_sparse(truth, roles, dof)
    if fault is not None:
        stream = fault.apply(stream)
    if w_future is None:
        w_future = default_w_future(roles)
    result = reconstruct_clip(
        vae, truth, stream, roles, config,
        temporal=temporal, w_future=w_future, dof=dof,
        extra_constraints=extra_constraints,
    )
    result.report.scenario = scenario or f"{len(roles)}sensors-{dof}"
    result.report.extras = {
        "roles": roles,
        "dof": dof,
        "fault_probability": fault.probability if fault else 0.0,
        "invalid_region_frames": sum(
            1 for t in result.traces if "invalid_region" in t.diagnostics
        ),
    }
    return result


def table_scenarios(fault_seed: int = 0) -> list[dict]:
    """The dynamic-constraint evaluation grid: 3-6 sensors, position-only DoF,
    and faulty-sensor variants, all through one code path."""
    return [
        {"scenario": "3_head_hands", "roles": ROLE_SETS["head_hands"], "dof": "pos_rot",
         "extra": "hipless"},
        {"scenario": "3_hip_hands", "roles": ROLE_SETS["hip_hands"], "dof": "pos_rot"},
        {"scenario": "4_hip_head_hands", "roles": ROLE_SETS["hip_head_hands"],
         "dof": "pos_rot"},
        {"scenario": "5_hip_head_hands_rfoot", "roles": ROLE_SETS["hip_head_hands_rfoot"],
         "dof": "pos_rot"},
        {"scenario": "6_all_faulty_1pct", "roles": ROLE_SETS["all"], "dof": "pos_rot",
         "fault": FaultSchedule(0.01, 100, fault_seed)},
        {"scenario": "6_all_faulty_05pct", "roles": ROLE_SETS["all"], "dof": "pos_rot",
         "fault": FaultSchedule(0.005, 100, fault_seed)},
        {"scenario": "6_all_pos_only", "roles": ROLE_SETS["all"], "dof": "pos_only"},
        {"scenario": "6_all", "roles": ROLE_SETS["all"], "dof": "pos_rot"},
    ]


def run_table_suite(
    vae: PoseVae,
    truth: MotionClip,
    temporal: TemporalPredictor | None = None,
    config: OptimizerConfig | None = None,
    fault_seed: int = 0,
) -> list[ScenarioResult]:
    results = []
    for spec in table_scenarios(fault_seed):
        extra = hipless_helper_constraints() if spec.get("extra") == "hipless" else None
        results.append(
            run_scenario(
                vae, truth, spec["roles"], spec["dof"],
                fault=spec.get("fault"),
                config=config, temporal=temporal,
                scenario=spec["scenario"],
                extra_constraints=extra,
            )
        )
    return results


def iterations_to_threshold(
    vae: PoseVae,
    truth: MotionClip,
    roles: list[str],
    config: OptimizerConfig | None = None,
    temporal: TemporalPredictor | None = None,
) -> float:
    """Mean per-frame iterations in ablation mode (threshold-gated, cap 100)."""
    config = config or OptimizerConfig.for_mode("ablation")
    result = run_scenario(
        vae, truth, roles, config=config, temporal=temporal, scenario="iterations"
    )
    return float(np.mean([t.iterations for t in result.traces]))


def run_ablation(
    which: str,
    vae_full: PoseVae,
    vae_variant: PoseVae | None,
    truth: MotionClip,
    roles: list[str],
    temporal: TemporalPredictor | None,
    config: OptimizerConfig | None = None,
) -> dict[str, MetricsReport]:
    """Compare the full system against a deactivated-component variant.

    ``no_continuity`` needs a VAE trained without the continuity loss;
    ``no_temporal`` runs the full VAE with the predictor disabled.
    """
    if which not in ("no_continuity", "no_temporal", "full"):
        raise DimensionError(f"unknown ablation {which!r}")
    out: dict[str, MetricsReport] = {}
    full = run_scenario(
        vae_full, truth, roles, config=config, temporal=temporal, scenario="full"
    )
    out["full"] = full.report
    if which == "no_temporal":
        variant = run_scenario(
            vae_full, truth, roles, config=config, temporal=None, scenario="no_temporal"
        )
        out["no_temporal"] = variant.report
    elif which == "no_continuity":
        if vae_variant is None:
            raise DimensionError("no_continuity ablation needs the L_C-free VAE")
        variant = run_scenario(
            vae_variant, truth, roles, config=config, temporal=None,
            scenario="no_continuity",
        )
        out["no_continuity"] = variant.report
    return out
