"""Per-frame latent-space optimization against a dynamic constraint set.

Each frame warm-starts from the previous committed latent, decodes through
the frozen VAE decoder, assembles a weighted constraint loss over the sparse
forward-kinematics outputs, and descends both the constraint gradient and the
pull toward the temporal predictor's latent until the residual thresholds are
met or the iteration budget runs out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import diffgeom, quat
from .autodiff import Tensor, backward
from .errors import ConfigurationError, RefreshRequiredError
from .skeleton import Pose, RootState, Skeleton, SparseInput, compose_root
from .temporal import PredictorState, StepContext, TemporalPredictor, indices
from .vae import PoseVae

CONSTRAINT_KINDS = (
    "end_effector_position",
    "end_effector_rotation",
    "look_at",
    "floor_proximity",
    "ground_projection_distance",
    "joint_distance",
)

# Weight of rad^2 terms relative to m^2 terms. Matches a plain MSE over raw
# quaternion components, which equals theta^2/4 for small angles.
ROTATION_BALANCE = 0.25

MODES = {"realtime": 1, "offline": 10, "ablation": 100}


@dataclass
class Constraint:
    id: str
    kind: str
    roles: tuple[str, ...]
    weight: float = 1.0
    target_position: np.ndarray | None = None
    target_rotation: np.ndarray | None = None
    target_value: float = 0.0
    direction: np.ndarray | None = None
    axis: np.ndarray | None = None
    valid: bool = True

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ConfigurationError(f"unknown constraint kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigurationError("constraint weight must be nonnegative")
        self.roles = tuple(self.roles)
        for name in ("target_position", "target_rotation", "direction", "axis"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))

    @property
    def active(self) -> bool:
        return self.valid and self.weight > 0


class ConstraintSet:
    """Ordered, editable collection of constraints keyed by id."""

    def __init__(self, constraints: list[Constraint] | None = None):
        self._items: dict[str, Constraint] = {}
        for c in constraints or []:
            self.add(c)

    def add(self, c: Constraint) -> None:
        if c.id in self._items:
            raise ConfigurationError(
                f"constraint id {c.id!r} already exists; remove it before re-adding"
            )
        self._items[c.id] = c

    def remove(self, cid: str) -> Constraint:
        if cid not in self._items:
            raise ConfigurationError(f"no constraint with id {cid!r}")
        return self._items.pop(cid)

    def get(self, cid: str) -> Constraint | None:
        return self._items.get(cid)

    def __iter__(self):
        return iter(self._items.values())

    def __len__(self):
        return len(self._items)

    def ids(self) -> list[str]:
        return list(self._items)

    @classmethod
    def from_roles(cls, roles: list[str], dof: str = "pos_rot") -> "ConstraintSet":
        cs = cls()
        for role in roles:
            cs.add(Constraint(f"ee_pos:{role}", "end_effector_position", (role,)))
            if dof == "pos_rot":
                cs.add(Constraint(f"ee_rot:{role}", "end_effector_rotation", (role,)))
        return cs


@dataclass
class OptimizerConfig:
    lambda_po: float = 12.0
    lambda_t: float = 0.1
    max_iterations: int = 10
    eps_pos_m: float = 0.01
    eps_rot_deg: float = 5.0
    mode: str = "offline"
    # blend factor pulling the committed root state toward a valid hip sensor;
    # 0 disables the filter and leaves pure increment integration
    root_fusion: float = 1.0

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "OptimizerConfig":
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r} (choose from {sorted(MODES)})")
        cfg = cls(mode=mode, max_iterations=MODES[mode])
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg


@dataclass
class FrameTrace:
    frame: int
    iterations: int
    lpo: list[float]
    residuals: dict[str, float]
    wall_ms: float
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "iterations": self.iterations,
            "lpo": self.lpo,
            "residuals": self.residuals,
            "wall_ms": self.wall_ms,
            "diagnostics": self.diagnostics,
        }


def temporal_term(z: np.ndarray, z_t: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE pull toward the predicted latent and its analytic gradient."""
    z = np.asarray(z, dtype=float)
    z_t = np.asarray(z_t, dtype=float)
    diff = z - z_t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def assemble_loss(
    constraints: ConstraintSet,
    decoded: tuple[Tensor, Tensor, Tensor],
    root: RootState,
    sk: Skeleton,
) -> tuple[Tensor | None, dict[str, float]]:
    """Weighted constraint loss over the decoded pose plus raw residuals.

    ``decoded`` is the (vector, quats, displacement) triple from the decoder
    with batch size 1. Terms are averaged by total weight so the step size is
    insensitive to the number of active sensors. Position-style terms are in
    m^2; rotation-style terms are squared geodesic surrogates scaled by
    ROTATION_BALANCE.
    """
    _, quats, disp = decoded
    fk = diffgeom.fk_positions(quats, sk)
    world_pos = diffgeom.world_positions(fk, disp, root)  # [1, J, 3]
    world_rot: Tensor | None = None

    def joint_pos(role: str) -> Tensor:
        return ad.getitem(world_pos, (0, sk.role_index(role)))

    terms: list[tuple[float, Tensor]] = []
    residuals: dict[str, float] = {}

    for c in constraints:
        if not c.active:
            continue
        if c.kind == "end_effector_position":
            if c.target_position is None:
                continue
            p = joint_pos(c.roles[0])
            term = ad.mean(ad.square(ad.sub(p, ad.constant(c.target_position))))
            residuals[c.id] = float(np.linalg.norm(p.data - c.target_position))
            terms.append((c.weight, term))
        elif c.kind == "end_effector_rotation":
            if c.target_rotation is None:
                continue
            if world_rot is None:
                world_rot = diffgeom.world_rotations(quats, root)
            q = ad.getitem(world_rot, (0, sk.role_index(c.roles[0])))
            term = ad.scale(
                diffgeom.rotation_alignment(q, c.target_rotation), ROTATION_BALANCE
            )
            residuals[c.id] = float(
                quat.rotation_angle_deg(quat.normalize(q.data), c.target_rotation)
            )
            terms.append((c.weight, term))
        elif c.kind == "look_at":
            if c.direction is None:
                continue
            if world_rot is None:
                world_rot = diffgeom.world_rotations(quats, root)
            q = ad.getitem(world_rot, (0, sk.role_index(c.roles[0])))
            axis = c.axis if c.axis is not None else np.array([0.0, 0.0, 1.0])
            d = diffgeom.rotate_vectors(ad.reshape(q, (1, 1, 4)), axis[None, None, :])
            target = c.direction / np.linalg.norm(c.direction)
            dot = ad.sum_(ad.mul(ad.reshape(d, (3,)), ad.constant(target)))
            term = ad.scale(ad.sub(ad.constant(np.array(1.0)), dot), 2.0 * ROTATION_BALANCE)
            cosang = np.clip(float(dot.data), -1.0, 1.0)
            residuals[c.id] = float(np.degrees(np.arccos(cosang)))
            terms.append((c.weight, term))
        elif c.kind == "floor_proximity":
            heights = []
            for role in c.roles:
                y = ad.getitem(world_pos, (0, sk.role_index(role), 1))
                heights.append(ad.reshape(y, (1,)))
            h = ad.concat(heights, axis=0)
            delta = ad.sub(h, ad.constant(np.full(len(heights), c.target_value)))
            term = ad.mean(ad.square(delta))
            residuals[c.id] = float(np.abs(delta.data).mean())
            terms.append((c.weight, term))
        elif c.kind == "ground_projection_distance":
            a = joint_pos(c.roles[0])
            b = joint_pos(c.roles[1])
            diff = ad.sub(a, b)
            horiz = ad.getitem(diff, ([0, 2],))
            term = ad.sum_(ad.square(horiz))
            residuals[c.id] = float(np.linalg.norm(diff.data[[0, 2]]))
            terms.append((c.weight, term))
        elif c.kind == "joint_distance":
            a = joint_pos(c.roles[0])
            b = joint_pos(c.roles[1])
            sq = ad.sum_(ad.square(ad.sub(a, b)))
            dist = ad.sqrt(ad.add(sq, ad.constant(np.array(1e-12))))
            term = ad.square(ad.sub(dist, ad.constant(np.array(c.target_value))))
            residuals[c.id] = float(abs(np.sqrt(sq.data) - c.target_value))
            terms.append((c.weight, term))

    if not terms:
        return None, residuals
    total_w = sum(w for w, _ in terms)
    acc = None
    for w, term in terms:
        piece = ad.scale(term, w / total_w)
        acc = piece if acc is None else ad.add(acc, piece)
    return acc, residuals


class Session:
    """Single-writer streaming reconstruction session (Algorithm-1 runtime)."""

    def __init__(
        self,
        vae: PoseVae,
        constraints: ConstraintSet,
        config: OptimizerConfig | None = None,
        temporal: TemporalPredictor | None = None,
        seed_pose: Pose | None = None,
        initial_root: RootState | None = None,
        w_future: int | None = None,
    ):
        self.vae = vae
        vae.freeze()
        self.sk = vae.skeleton
        self.constraints = constraints
        self.config = config or OptimizerConfig()
        self.temporal = temporal
        if temporal is not None:
            temporal.freeze()
            cfg = temporal.cfg
            if w_future is not None and w_future != cfg.future_window:
                cfg = replace(cfg, future_window=w_future)
            self.tcfg = cfg
            self.pstate = PredictorState(temporal)
        else:
            self.tcfg = None
            self.pstate = None

        self.frame = 0
        self.root_state = (initial_root or RootState()).copy()
        seed = seed_pose or Pose.identity(self.sk.joint_count)
        self.z = vae.encode_mean(seed)
        self.z_t: np.ndarray | None = None
        self._pending_edits: list[tuple[str, object]] = []
        self._hip_signal = None
        self._height_indices = [
            self.sk.role_index(r) for r in
            ("hip", "head", "left_hand", "right_hand", "left_foot", "right_foot")
            if r in self.sk.end_effectors
        ]
        if self.pstate is not None:
            self.pstate.seed(self._step_context(seed, self.z))

    # --- constraint editing ------------------------------------------------

    def edit_constraints(
        self, add: list[Constraint] | None = None, remove: list[str] | None = None
    ) -> None:
        """Queue edits; they take effect at the start of the next frame."""
        live = set(self.constraints.ids())
        for kind, value in self._pending_edits:
            if kind == "remove":
                live.discard(value)
            else:
                live.add(value.id)
        for cid in remove or []:
            self._pending_edits.append(("remove", cid))
            live.discard(cid)
        for c in add or []:
            if c.id in live:
                raise ConfigurationError(
                    f"constraint id {c.id!r} already exists; remove it first"
                )
            self._pending_edits.append(("add", c))
            live.add(c.id)

    def _apply_pending_edits(self) -> None:
        for kind, value in self._pending_edits:
            if kind == "remove":
                if self.constraints.get(value) is not None:
                    self.constraints.remove(value)
            else:
                self.constraints.add(value)
        self._pending_edits.clear()

    def _apply_sparse(self, sparse: SparseInput) -> None:
        self._hip_signal = None
        for sig in sparse.signals:
            if sig.role == "hip" and sig.valid:
                self._hip_signal = sig
            pos_c = self.constraints.get(f"ee_pos:{sig.role}")
            if pos_c is not None:
                pos_c.target_position = np.asarray(sig.position, dtype=float)
                pos_c.valid = bool(sig.valid)
            rot_c = self.constraints.get(f"ee_rot:{sig.role}")
            if rot_c is not None:
                if sig.dof == "pos_rot":
                    rot_c.target_rotation = quat.canonical_sign(
                        quat.normalize(sig.rotation)
                    )
                    rot_c.valid = bool(sig.valid)
                else:
                    rot_c.valid = False

    # --- internals ----------------------------------------------------------

    def _step_context(self, pose: Pose, z: np.ndarray) -> StepContext:
        from .skeleton import global_positions

        world = global_positions(pose, self.sk, self.root_state)
        heights = world[self._height_indices, 1]
        if heights.size < 6:
            heights = np.pad(heights, (0, 6 - heights.size))
        return StepContext(z.copy(), pose.root_displacement.copy(), heights)

    def _has_root_sensor(self) -> bool:
        c = self.constraints.get("ee_pos:hip")
        return c is not None and c.active and c.target_position is not None

    def _evaluate(self, z_np: np.ndarray):
        z = Tensor(z_np[None], requires_grad=True)
        decoded = self.vae.decoder(z)
        loss, residuals = assemble_loss(self.constraints, decoded, self.root_state, self.sk)
        if loss is None:
            grad = np.zeros_like(z_np)
            value = 0.0
        else:
            grads = backward(loss)
            grad = grads.get(z, np.zeros((1, z_np.size)))[0]
            value = loss.item()
        return value, grad, residuals, decoded[0].data[0].copy()

    def _satisfied(self, residuals: dict[str, float]) -> bool:
        checked = False
        ok = True
        for cid, value in residuals.items():
            if cid.startswith("ee_pos:"):
                checked = True
                ok &= value <= self.config.eps_pos_m
            elif cid.startswith("ee_rot:"):
                checked = True
                ok &= value <= self.config.eps_rot_deg
        return bool(checked and ok)

    def _commit_root(self, pose: Pose) -> Pose:
        """Finalize the root increment before composing the world state.

        With a valid hip sensor the committed increments are blended toward the
        directly measured root transform (complementary filter against
        integration drift; the sensed hip *is* the next root state). Without
        one, the world translation stays frozen.
        """
        sig = self._hip_signal
        gain = self.config.root_fusion
        if sig is None or gain <= 0.0:
            if not self._has_root_sensor():
                return Pose(pose.joint_rotations.copy(), np.zeros(3))
            return pose
        prev = self.root_state
        composed = compose_root(prev, pose)
        rot = composed.world_rotation
        if sig.dof == "pos_rot":
            rot = quat.slerp(rot, quat.normalize(sig.rotation), gain)
        pos = (1.0 - gain) * composed.world_position + gain * sig.position
        delta = quat.canonical_sign(
            quat.normalize(quat.multiply(quat.conjugate(prev.world_rotation), rot))
        )
        disp = quat.rotate_vector(
            quat.conjugate(prev.world_rotation), pos - prev.world_position
        )
        rotations = pose.joint_rotations.copy()
        rotations[0] = delta
        return Pose(rotations, disp)

    def _bbox_diagnostic(self, pose_vec: np.ndarray) -> bool:
        stats = self.vae.stats
        if stats is None:
            return False
        j = self.sk.joint_count
        quats = quat.normalize(pose_vec[: j * 4].reshape(j, 4))
        from .skeleton import fk_batch

        fk = fk_batch(quats[None], self.sk)[0]
        center = (stats.bbox_min + stats.bbox_max) / 2
        half = (stats.bbox_max - stats.bbox_min) / 2 + 1e-6
        return bool(np.any(np.abs(fk - center) > 2.0 * half))

    # --- main loop ------------------------------------------------------------

    def optimize_frame(self, sparse: SparseInput | None) -> tuple[Pose, FrameTrace]:
        t0 = time.perf_counter()
        i = self.frame
        self._apply_pending_edits()
        if sparse is not None:
            self._apply_sparse(sparse)
        else:
            self._hip_signal = None

        diagnostics: list[str] = []
        if self.temporal is not None:
            if i % self.tcfg.step == 0:
                j, _ = indices(i, self.tcfg)
                if j % self.tcfg.future_window == 0:
                    self.pstate.refresh()
                try:
                    self.z_t = self.pstate.predict_next()
                except RefreshRequiredError:
                    self.pstate.refresh()
                    self.z_t = self.pstate.predict_next()
        z_t = self.z_t
        lam_po = self.config.lambda_po
        lam_t = self.config.lambda_t if z_t is not None else 0.0

        z_start = self.z.copy()
        zhat = self.z.copy()
        lpo: list[float] = []
        steps = 0
        prev_value = None
        while True:
            value, grad, residuals, pose_vec = self._evaluate(zhat)
            lpo.append(value)
            if self._satisfied(residuals):
                break
            if steps >= self.config.max_iterations:
                break
            if prev_value is not None and value > 1.1 * prev_value:
                lam_po *= 0.5
                lam_t *= 0.5
                diagnostics.append(f"step_halved@{steps}")
            prev_value = value
            update = lam_po * grad
            if z_t is not None:
                update = update + lam_t * temporal_term(zhat, z_t)[1]
            if not np.all(np.isfinite(update)):
                diagnostics.append("nonfinite_gradient")
                zhat = z_start
                _, _, residuals, pose_vec = self._evaluate(zhat)
                break
            zhat = zhat - update
            steps += 1

        pose = Pose.from_vector(pose_vec, self.sk.joint_count).canonical()
        if self._bbox_diagnostic(pose_vec):
            diagnostics.append("invalid_region")

        self.z = zhat
        pose = self._commit_root(pose)
        if self.pstate is not None and i % self.tcfg.step == 0:
            # context features use the state *before* this frame's increment
            self.pstate.seed(self._step_context(pose, self.z))
        self.root_state = compose_root(self.root_state, pose)
        self.frame += 1

        trace = FrameTrace(
            frame=i,
            iterations=steps,
            lpo=lpo,
            residuals=residuals,
            wall_ms=(time.perf_counter() - t0) * 1e3,
            diagnostics=diagnostics,
        )
        return pose, trace
