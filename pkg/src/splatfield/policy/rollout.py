"""Policy evaluation against the planar simulator.

The simulator world is mirrored as a splat scene (table, disk objects,
gripper marker, goal marker) rendered by an overhead camera, so the three
observation pathways share one ground truth:

* ``state``  — object and goal centroids straight from the simulator.
* ``pixels`` — downsampled overhead render, flattened.
* ``s2gs``   — the manipulated object (and, when stacking, the base disk
  it must land on) is extracted from the splat scene once by semantic
  query, then followed with the rigid tracker; the commanded gripper
  motion is the per-step prior for whichever disk rides the gripper.
  Tracked centroids replace the ground-truth ones.

A domain style recolors every entity; features are untouched, which is
the point of the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DomainError
from ..geometry import Camera, RigidTransform, look_at_camera
from ..query import QueryConfig, extract_object
from ..scene import SH_C0, SceneModel, logit
from ..semantics import SemanticDecoder, decode
from ..tracker import TrackState, apply_motion, track_frame
from ..rasterizer import render
from .diffusion import sample
from .network import PolicyNet
from .schedule import NoiseSchedule
from .simulator import HORIZON, SimState, expert_action, make_task, step, success

OBS_SOURCES = ("state", "pixels", "s2gs")
EXECUTED_CHUNK = 4

FEATURE_SCALE = 2.0
_FEATURE_SLOTS = {"object0": 0, "object1": 1, "ee": 2, "table": 3, "goal": 4}

QUERY_CONFIG = QueryConfig(similarity_threshold=0.6, dbscan_eps=0.025,
                           dbscan_min_samples=4)


@dataclass(frozen=True)
class DomainStyle:
    name: str
    object_colors: tuple
    ee_color: tuple
    table_color: tuple
    goal_color: tuple
    background: tuple


TRAIN_DOMAIN = DomainStyle(
    name="train",
    object_colors=((0.85, 0.15, 0.10), (0.12, 0.30, 0.85)),
    ee_color=(0.10, 0.80, 0.25),
    table_color=(0.55, 0.52, 0.50),
    goal_color=(0.90, 0.80, 0.15),
    background=(0.20, 0.20, 0.22),
)

SHIFTED_DOMAIN = DomainStyle(
    name="shifted",
    object_colors=((0.10, 0.75, 0.90), (0.90, 0.20, 0.80)),
    ee_color=(0.95, 0.40, 0.05),
    table_color=(0.30, 0.18, 0.10),
    goal_color=(0.25, 0.10, 0.60),
    background=(0.04, 0.05, 0.30),
)

DOMAINS = {d.name: d for d in (TRAIN_DOMAIN, SHIFTED_DOMAIN)}

# chosen so the decoded heads of the five entity features stay well apart
_SCENE_DECODER_SEED = 3


def feature_vector(slot: str, d_f: int = 8) -> np.ndarray:
    v = np.zeros(d_f)
    v[_FEATURE_SLOTS[slot]] = FEATURE_SCALE
    return v


def scene_decoder() -> SemanticDecoder:
    return SemanticDecoder.create(seed=_SCENE_DECODER_SEED)


def query_vector(slot: str, decoder: SemanticDecoder | None = None) -> np.ndarray:
    """Unit query embedding matching a feature slot's decoded local head."""
    decoder = decoder or scene_decoder()
    local, _ = decode(decoder, feature_vector(slot))
    return local


def _disk_layout(center_xy, z):
    """Center + two rings, spaced under the clustering radius."""
    pts = [(0.0, 0.0)]
    for r, count in ((0.018, 6), (0.0365, 10)):
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        pts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    pts = np.asarray(pts)
    out = np.zeros((len(pts), 3))
    out[:, 0] = center_xy[0] + pts[:, 0]
    out[:, 1] = center_xy[1] + pts[:, 1]
    out[:, 2] = z
    return out


def _marker_layout(center_xy, z, radius, count):
    ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    out = np.zeros((count + 1, 3))
    out[0] = (center_xy[0], center_xy[1], z)
    out[1:, 0] = center_xy[0] + radius * np.cos(ang)
    out[1:, 1] = center_xy[1] + radius * np.sin(ang)
    out[1:, 2] = z
    return out


def _solid_sh(color) -> np.ndarray:
    c = np.clip(np.asarray(color, dtype=np.float64), 1e-4, 1 - 1e-4)
    return logit(c)[None, :] / SH_C0


def build_sim_scene(sim: SimState, domain: DomainStyle = TRAIN_DOMAIN,
                    include_ee: bool = True):
    """Splat mirror of the simulator state.

    Returns (scene, slices) where slices maps entity names to index ranges.
    """
    groups = []          # (centers, scale, color, feature-slot)
    ys, xs = np.meshgrid(np.linspace(0.1, 0.9, 5), np.linspace(0.1, 0.9, 5))
    table = np.stack([xs.ravel(), ys.ravel(), np.full(25, 0.025)], axis=1)
    groups.append((table, 0.16, domain.table_color, "table"))
    if sim.task != "stack":
        goal = _marker_layout(sim.goal, 0.012, 0.03, 8)
        groups.append((goal, 0.013, domain.goal_color, "goal"))
    for i in range(sim.objects.shape[0]):
        # one depth layer per disk: when they overlap during placement the
        # compositing order stays fixed instead of interleaving coplanar splats
        disk = _disk_layout(sim.objects[i], 0.005 * i)
        groups.append((disk, 0.014, domain.object_colors[i], f"object{i}"))
    if include_ee:
        ee = _marker_layout(sim.ee, -0.03, 0.012, 3)
        groups.append((ee, 0.011, domain.ee_color, "ee"))

    slices = {}
    centers, log_scales, sh, features = [], [], [], []
    start = 0
    for pts, scale, color, slot in groups:
        n = pts.shape[0]
        slices[slot] = np.arange(start, start + n)
        start += n
        centers.append(pts)
        log_scales.append(np.full((n, 2), np.log(scale)))
        sh.append(np.repeat(_solid_sh(color)[None, :, :], n, axis=0))
        features.append(np.tile(feature_vector(slot), (n, 1)))
    n_total = start
    rotations = np.zeros((n_total, 4))
    rotations[:, 0] = 1.0
    scene = SceneModel(
        centers=np.concatenate(centers),
        rotations=rotations,
        log_scales=np.concatenate(log_scales),
        opacity_logits=np.full(n_total, 3.0),
        sh=np.concatenate(sh),
        features=np.concatenate(features),
        decoder=scene_decoder(),
        background=np.asarray(domain.background, dtype=np.float64),
    )
    return scene, slices


def overhead_camera(size: int) -> Camera:
    return look_at_camera(
        eye=np.array([0.5, 0.5, -1.1]),
        target=np.array([0.5, 0.5, 0.0]),
        fx=0.92 * size, fy=0.92 * size,
        width=size, height=size,
        up=(0.0, 1.0, 0.0),
    )


OBS_RENDER_SIZE = 32
TRACK_RENDER_SIZE = 48
POOL = 2
# tracker step sizes matched to this camera's gradient scale (masked-mean
# L1 gradients here run ~1-4, so these give few-mm optimizer steps: small
# enough not to overshoot at contact, large enough to keep up with pushes)
TRACK_STEP_SIZES = (1e-3, 3e-3)


def render_pixels_obs(sim: SimState, domain: DomainStyle) -> np.ndarray:
    scene, _ = build_sim_scene(sim, domain)
    img = render(scene, overhead_camera(OBS_RENDER_SIZE)).color
    h = OBS_RENDER_SIZE // POOL
    pooled = img.reshape(h, POOL, h, POOL, 3).mean(axis=(1, 3))
    return pooled.ravel()


def _goal3(sim: SimState) -> np.ndarray:
    g = sim.goal_point
    return np.array([g[0], g[1], 0.0])


class Observer:
    """Produces the policy observation vector for one episode."""

    def __init__(self, source: str, domain: DomainStyle = TRAIN_DOMAIN):
        if source not in OBS_SOURCES:
            raise DomainError(f"unknown observation source {source!r}")
        self.source = source
        self.domain = domain
        self._scene = None
        self._tracks = {}        # object index -> TrackState
        self._goal_point = None

    def reset(self, sim: SimState) -> None:
        if self.source != "s2gs":
            return
        scene, _ = build_sim_scene(sim, self.domain, include_ee=False)
        self._scene = scene
        # the stack target is itself a movable disk, so it gets a tracker of
        # its own; for the other tasks the goal is a fixed task input
        tracked = (0, 1) if sim.task == "stack" else (0,)
        self._tracks = {}
        for idx in tracked:
            extract = extract_object(scene, query_vector(f"object{idx}"),
                                     QUERY_CONFIG)
            self._tracks[idx] = TrackState(
                object=extract,
                current_transform=RigidTransform.identity(),
                step_sizes=TRACK_STEP_SIZES)
        self._goal_point = None if sim.task == "stack" else _goal3(sim)

    def _tracked_centroid(self, idx: int) -> np.ndarray:
        track = self._tracks[idx]
        return track.current_transform.apply(track.object.centroid)

    def observe(self, sim: SimState) -> np.ndarray:
        q = sim.robot_state
        if self.source == "pixels":
            return np.concatenate([render_pixels_obs(sim, self.domain), q])
        if self.source == "state":
            obj = sim.objects[0]
            centroid = np.array([obj[0], obj[1], 0.0])
            goal = _goal3(sim)
        else:
            centroid = self._tracked_centroid(0)
            goal = (self._tracked_centroid(1) if self._goal_point is None
                    else self._goal_point)
        # relative offsets: the manipulation geometry is translation
        # invariant, so hand these to the net instead of making it learn that
        rel = np.concatenate([centroid[:2] - sim.ee, goal[:2] - centroid[:2]])
        return np.concatenate([centroid, goal, q, rel])

    def advance(self, sim_after: SimState, ee_delta: np.ndarray,
                carried: int) -> None:
        """Update tracking after one executed simulator step.

        `carried` is the index of the object that rode the gripper through
        the step, or -1.
        """
        if self.source != "s2gs":
            return
        # the gripper marker is masked out of the tracking view so it cannot
        # occlude the object it is carrying
        observed_scene, slices = build_sim_scene(sim_after, self.domain,
                                                 include_ee=False)
        cam = overhead_camera(TRACK_RENDER_SIZE)
        observed = render(observed_scene, cam).color
        ee_prior = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]),
                                  np.array([ee_delta[0], ee_delta[1], 0.0]))
        before = dict(self._tracks)
        for idx, track in before.items():
            # any sibling disk is baked into the model at its last estimated
            # pose, so overlap pixels compare against an honest render
            model = self._scene
            for other, other_track in before.items():
                if other != idx:
                    model = apply_motion(model, other_track.indices,
                                         other_track.current_transform)
            mask = render(observed_scene.subset(slices[f"object{idx}"]),
                          cam).weight > 1e-3
            prior = ee_prior if carried == idx else RigidTransform.identity()
            new_track = track_frame(track, model, observed, mask, cam,
                                    prior=prior)
            # planar-manipulation prior: table-top motion is SE(2), so project
            # the estimate to in-plane translation + yaw. Without this, tilt
            # accumulated over frames carries the object out of plane until
            # the table occludes it and the photometric gradient dies.
            t = new_track.current_transform
            yaw = np.array([t.rotation[0], 0.0, 0.0, t.rotation[3]])
            flat = RigidTransform(
                yaw / np.linalg.norm(yaw),
                np.array([t.translation[0], t.translation[1], 0.0]))
            self._tracks[idx] = replace(new_track, current_transform=flat)


def run_episode(policy, sim: SimState, observer: Observer,
                rng: np.random.Generator, horizon: int = HORIZON,
                chunk: int = EXECUTED_CHUNK):
    """Drive the simulator with `policy(obs, rng) -> (H, 3) action sequence`.

    Returns (success flag, list of SimStates).
    """
    observer.reset(sim)
    states = [sim]
    steps_done = 0
    while steps_done < horizon:
        obs = observer.observe(sim)
        plan = policy(obs, rng)
        for a in plan[:chunk]:
            prev = sim
            sim = step(sim, a)
            # a disk rides the gripper only if it stayed attached through the
            # step; on the attach transition it has not moved yet
            carried = prev.attached if prev.attached == sim.attached else -1
            observer.advance(sim, sim.ee - prev.ee, carried)
            states.append(sim)
            steps_done += 1
            if success(sim) or steps_done >= horizon:
                break
        if success(sim):
            return True, states
    return False, states


def net_policy(net: PolicyNet, sched: NoiseSchedule):
    def policy(obs, rng):
        return sample(net, sched, obs, rng)
    return policy


def rollout(net: PolicyNet, sched: NoiseSchedule, sim: SimState, obs_source: str,
            horizon: int = HORIZON, rng: np.random.Generator | None = None,
            domain: DomainStyle = TRAIN_DOMAIN):
    rng = rng or np.random.default_rng(0)
    observer = Observer(obs_source, domain)
    return run_episode(net_policy(net, sched), sim, observer, rng, horizon)


DEMO_NOISE = 0.01


def _expert_plan(sim: SimState, plan_horizon: int) -> np.ndarray:
    """Clean expert plan from this state; zero-hold once the task is done."""
    plan = np.zeros((plan_horizon, 3))
    virt = sim
    for i in range(plan_horizon):
        if success(virt):
            break
        plan[i] = expert_action(virt)
        virt = step(virt, plan[i])
    return plan


def generate_demos(kind: str, obs_source: str, n_episodes: int = 100,
                   plan_horizon: int = 8,
                   domain: DomainStyle = TRAIN_DOMAIN, seed: int = 0,
                   noise: float = DEMO_NOISE):
    """Expert demonstrations encoded through an observation source.

    Returns (observations (M, obs_dim), action chunks (M, plan_horizon, 3)).
    Executed actions carry Gaussian jitter so the dataset covers a tube of
    states around the nominal trajectories; the recorded chunk is always the
    clean expert plan from the state actually visited, which gives the
    policy corrective labels once it drifts at evaluation time.
    """
    all_obs, all_chunks = [], []
    for ep in range(n_episodes):
        rng = np.random.default_rng([seed, ep])
        sim = make_task(kind, seed + ep)
        observer = Observer(obs_source, domain)
        observer.reset(sim)
        for _ in range(HORIZON):
            all_obs.append(observer.observe(sim))
            plan = _expert_plan(sim, plan_horizon)
            all_chunks.append(plan)
            a = plan[0].copy()
            a[:2] += rng.normal(0.0, noise, 2)
            prev = sim
            sim = step(sim, a)
            carried = prev.attached if prev.attached == sim.attached else -1
            observer.advance(sim, sim.ee - prev.ee, carried)
            if success(sim):
                break
    return np.array(all_obs), np.array(all_chunks)


def evaluate(net: PolicyNet, sched: NoiseSchedule, kind: str, obs_source: str,
             n_episodes: int = 50, seed: int = 0,
             domain: DomainStyle = TRAIN_DOMAIN) -> dict:
    """Seeded evaluation episodes; returns rates plus per-episode outcomes."""
    outcomes = []
    for ep in range(n_episodes):
        sim = make_task(kind, seed + ep)
        rng = np.random.default_rng([seed, ep])
        ok, states = rollout(net, sched, sim, obs_source, rng=rng, domain=domain)
        outcomes.append({"episode": ep, "success": bool(ok),
                         "steps": len(states) - 1})
    rate = float(np.mean([o["success"] for o in outcomes]))
    return {"task": kind, "obs_source": obs_source, "domain": domain.name,
            "episodes": n_episodes, "success_rate": rate, "outcomes": outcomes}
