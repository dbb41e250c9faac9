"""Mock policies with a controllable reliance on the light patch.

Both learned-policy stand-ins blend an object-seeking behavior with a
light-seeking one through a mixture weight. The categorical variant
exposes per-dimension distributions directly; the diffusion variant
exposes only an action sampler, so its distributions must be estimated
from samples. A scripted expert provides the oracle behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dists import BinGrid, CategoricalDist
from .raster import LIGHT_PLANE, OBJECT_PLANE, Observation, cell_centers
from .world import (
    GRASP_RADIUS,
    GRIPPER_INTENSITY,
    STEP_MAX,
    Instruction,
    Scene,
    TaskSpec,
    class_intensity,
)

# Object pixels match a class when within this distance of its palette
# intensity; palette spacing is 0.08 so classes cannot be confused.
INTENSITY_TOL = 0.03
LIGHT_PEAK_TOL = 0.02


@dataclass(frozen=True)
class PrefixContext:
    """Bin indices already committed for earlier action dimensions."""

    committed: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "committed", tuple(int(i) for i in self.committed))

    def extended(self, index: int) -> "PrefixContext":
        return PrefixContext(self.committed + (index,))


@dataclass(frozen=True)
class SpuriousMixtureParams:
    """Knobs shared by the mock policies.

    lam is the mixture weight on the light-seeking branch; sharpness
    divides the step budget to set the concentration of the motion
    distributions.
    """

    lam: float
    sharpness: float = 6.0
    action_bins: int = 21
    step_max: float = STEP_MAX
    action_sigma: float = 0.02

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("mixture weight must lie in [0, 1]")
        if not (self.sharpness > 0.0):
            raise ValueError("sharpness must be > 0")
        if self.action_bins < 2:
            raise ValueError("action_bins must be >= 2")
        if not (self.step_max > 0.0):
            raise ValueError("step_max must be > 0")
        if not (self.action_sigma > 0.0):
            raise ValueError("action_sigma must be > 0")


def default_grids(params: SpuriousMixtureParams) -> tuple[BinGrid, BinGrid, BinGrid]:
    motion = BinGrid(-params.step_max, params.step_max, params.action_bins)
    return (motion, motion, BinGrid(0.0, 1.0, 2))


# -- perception helpers ---------------------------------------------------


def find_gripper(obs: Observation) -> tuple[float, float] | None:
    hits = np.abs(obs.planes[OBJECT_PLANE] - GRIPPER_INTENSITY) <= INTENSITY_TOL
    if not hits.any():
        return None
    xs, ys = cell_centers(obs.width, obs.height)
    return float(xs[hits].mean()), float(ys[hits].mean())


def find_class_blob(
    obs: Observation, label: str, near: tuple[float, float] | None = None
) -> tuple[float, float] | None:
    """Centroid of the connected component of `label` pixels nearest to
    `near` (largest component when no reference is given)."""
    hits = np.abs(obs.planes[OBJECT_PLANE] - class_intensity(label)) <= INTENSITY_TOL
    if not hits.any():
        return None
    labeled, n = ndimage.label(hits)
    xs, ys = cell_centers(obs.width, obs.height)
    best: tuple[float, float] | None = None
    best_key = math.inf
    for comp in range(1, n + 1):
        sel = labeled == comp
        cx, cy = float(xs[sel].mean()), float(ys[sel].mean())
        if near is None:
            key = -float(sel.sum())
        else:
            key = math.hypot(cx - near[0], cy - near[1])
        if key < best_key:
            best_key, best = key, (cx, cy)
    return best


def find_light_peak(obs: Observation) -> tuple[float, float]:
    plane = obs.planes[LIGHT_PLANE]
    hits = plane >= plane.max() - LIGHT_PEAK_TOL
    xs, ys = cell_centers(obs.width, obs.height)
    return float(xs[hits].mean()), float(ys[hits].mean())


def _aim(
    origin: tuple[float, float], goal: tuple[float, float], step_max: float
) -> tuple[float, float]:
    vx, vy = goal[0] - origin[0], goal[1] - origin[1]
    norm = math.hypot(vx, vy)
    if norm > step_max:
        scale = step_max / norm
        vx, vy = vx * scale, vy * scale
    return vx, vy


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _gaussian_categorical(grid: BinGrid, mean: float, sigma: float) -> np.ndarray:
    z = (grid.centers() - mean) / sigma
    weights = np.exp(-0.5 * z * z)
    total = weights.sum()
    if total <= 0.0:
        return np.full(grid.count, 1.0 / grid.count)
    return weights / total


class SpuriousMixturePolicy:
    """Autoregressive categorical policy over (dx, dy, grip).

    Each action dimension mixes an object-seeking distribution with a
    light-seeking one. The object branch reads only the object plane, so
    removing the target from that plane collapses it to uniform; the
    light branch reads only the brightness plane and is untouched by
    object masking. Dimensions are conditionally independent given the
    observation: the prefix selects which dimension is predicted next.
    """

    def __init__(self, params: SpuriousMixtureParams) -> None:
        self.params = params
        self.grids = default_grids(params)

    @property
    def m(self) -> int:
        return len(self.grids)

    def predict(
        self, obs: Observation, instruction: Instruction, prefix: PrefixContext
    ) -> CategoricalDist:
        t = len(prefix.committed)
        if t >= self.m:
            raise ValueError(f"prefix already covers all {self.m} action dimensions")
        for dim, idx in enumerate(prefix.committed):
            if not (0 <= idx < self.grids[dim].count):
                raise ValueError(f"prefix index {idx} invalid for dimension {dim}")

        gripper = find_gripper(obs)
        target = (
            None
            if gripper is None
            else find_class_blob(obs, instruction.target_labels[0], near=gripper)
        )
        obj_probs = self._branch(t, gripper, target)
        spur_probs = self._branch(t, gripper, None if gripper is None else find_light_peak(obs))
        lam = self.params.lam
        return CategoricalDist(self.grids[t], (1.0 - lam) * obj_probs + lam * spur_probs)

    def _branch(
        self,
        t: int,
        gripper: tuple[float, float] | None,
        goal: tuple[float, float] | None,
    ) -> np.ndarray:
        grid = self.grids[t]
        if gripper is None or goal is None:
            return np.full(grid.count, 1.0 / grid.count)
        if t < 2:
            step = _aim(gripper, goal, self.params.step_max)
            sigma = self.params.step_max / self.params.sharpness
            return _gaussian_categorical(grid, step[t], sigma)
        q_close = _sigmoid(
            (GRASP_RADIUS - math.hypot(goal[0] - gripper[0], goal[1] - gripper[1])) / 0.02
        )
        return np.array([1.0 - q_close, q_close])


# -- diffusion-based sampler ----------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step coefficients of an ancestral denoising chain.

    Index k runs 1..steps; arrays are stored with entry k-1 for step k.
    scale multiplies the denoised bracket, noise_coef multiplies the
    predicted noise inside it, sigma is the additive noise level, and
    signal_frac is the forward-process signal fraction used to convert a
    density's score into a noise prediction.
    """

    steps: int
    scale: np.ndarray
    noise_coef: np.ndarray
    sigma: np.ndarray
    signal_frac: np.ndarray

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")
        for name in ("scale", "noise_coef", "sigma", "signal_frac"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.steps,):
                raise ValueError(f"{name} must have shape ({self.steps},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma < 0.0):
            raise ValueError("sigma must be >= 0")
        if np.any((self.signal_frac <= 0.0) | (self.signal_frac > 1.0)):
            raise ValueError("signal_frac must lie in (0, 1]")

    @classmethod
    def cosine(cls, steps: int, offset: float = 0.008) -> "DiffusionSchedule":
        if steps < 1:
            raise ValueError("schedule needs at least one step")
        t = np.arange(steps + 1, dtype=np.float64)
        f = np.cos(((t / steps + offset) / (1.0 + offset)) * math.pi / 2.0) ** 2
        ratio = f[1:] / f[0]
        betas = np.clip(1.0 - ratio[1:] / ratio[:-1], 1e-4, 0.999)
        betas = np.concatenate([[np.clip(1.0 - ratio[0], 1e-4, 0.999)], betas])
        step_alphas = 1.0 - betas
        signal_frac = np.cumprod(step_alphas)
        sigma = np.sqrt(betas)
        sigma[0] = 0.0  # final denoising step is deterministic
        return cls(
            steps=steps,
            scale=1.0 / np.sqrt(step_alphas),
            noise_coef=betas / np.sqrt(1.0 - signal_frac),
            sigma=sigma,
            signal_frac=signal_frac,
        )


def denoise_step(
    actions: np.ndarray,
    k: int,
    schedule: DiffusionSchedule,
    noise_prediction,
    rng: np.random.Generator,
) -> np.ndarray:
    """One ancestral update from noise level k to k-1.

    Accepts a single action vector or a batch (rows are actions); the
    predicted noise must match the input shape.
    """
    if not (1 <= k <= schedule.steps):
        raise ValueError(f"step index {k} outside 1..{schedule.steps}")
    x = np.asarray(actions, dtype=np.float64)
    eps = np.asarray(noise_prediction(x, k), dtype=np.float64)
    if eps.shape != x.shape:
        raise ValueError("noise prediction shape must match the action shape")
    i = k - 1
    out = schedule.scale[i] * (x - schedule.noise_coef[i] * eps)
    if schedule.sigma[i] > 0.0:
        out = out + schedule.sigma[i] * rng.standard_normal(x.shape)
    return out


@dataclass(frozen=True)
class GaussianMixture:
    """Diagonal Gaussian mixture over action vectors."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.sigmas, dtype=np.float64)
        if w.ndim != 1 or m.ndim != 2 or s.shape != m.shape or m.shape[0] != w.size:
            raise ValueError("mixture arrays have inconsistent shapes")
        if not (np.all(w >= 0.0) and abs(w.sum() - 1.0) <= 1e-9):
            raise ValueError("weights must be a distribution")
        if np.any(s <= 0.0):
            raise ValueError("sigmas must be > 0")
        for name, arr in (("weights", w), ("means", m), ("sigmas", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def mixture_noise_prediction(mix: GaussianMixture, schedule: DiffusionSchedule):
    """Exact noise prediction for actions drawn from `mix`.

    At noise level k the diffused density is again a Gaussian mixture
    with means sqrt(signal_frac)*mu and variances signal_frac*sigma^2 +
    (1 - signal_frac); the predicted noise follows from its score.
    """

    log_w = np.where(mix.weights > 0.0, np.log(np.maximum(mix.weights, 1e-300)), -np.inf)

    def predict(x: np.ndarray, k: int) -> np.ndarray:
        frac = schedule.signal_frac[k - 1]
        means = np.sqrt(frac) * mix.means  # (B, M)
        variances = frac * mix.sigmas**2 + (1.0 - frac)
        batch = np.atleast_2d(x)  # (n, M)
        diff = batch[None, :, :] - means[:, None, :]  # (B, n, M)
        log_resp = (
            log_w[:, None]
            - 0.5 * (diff**2 / variances[:, None, :]).sum(axis=2)
            - 0.5 * np.log(2.0 * math.pi * variances).sum(axis=1)[:, None]
        )
        log_resp -= log_resp.max(axis=0, keepdims=True)
        resp = np.exp(log_resp)
        resp /= resp.sum(axis=0, keepdims=True)
        score = (resp[:, :, None] * (-diff) / variances[:, None, :]).sum(axis=0)
        eps = -math.sqrt(1.0 - frac) * score if frac < 1.0 else np.zeros_like(batch)
        return eps.reshape(np.shape(x))

    return predict


class MixtureDiffusionPolicy:
    """Sampler-only policy: actions come from an ancestral denoising
    chain whose target density is a two-component mixture, one component
    aimed at the perceived object and one at the light patch.

    No per-dimension distribution is exposed; downstream consumers must
    estimate densities from batches of samples.
    """

    def __init__(
        self, params: SpuriousMixtureParams, schedule: DiffusionSchedule | None = None
    ) -> None:
        self.params = params
        self.schedule = schedule if schedule is not None else DiffusionSchedule.cosine(120)
        self.grids = default_grids(params)

    @property
    def m(self) -> int:
        return 3

    def target_mixture(self, obs: Observation, instruction: Instruction) -> GaussianMixture:
        gripper = find_gripper(obs)
        target = (
            None
            if gripper is None
            else find_class_blob(obs, instruction.target_labels[0], near=gripper)
        )
        light = None if gripper is None else find_light_peak(obs)
        lam = self.params.lam
        return GaussianMixture(
            weights=np.array([1.0 - lam, lam]),
            means=np.stack(
                [self._component_mean(gripper, target), self._component_mean(gripper, light)]
            ),
            sigmas=np.stack(
                [self._component_sigma(target), self._component_sigma(light)]
            ),
        )

    def _component_mean(
        self, gripper: tuple[float, float] | None, goal: tuple[float, float] | None
    ) -> np.ndarray:
        if gripper is None or goal is None:
            # nothing perceived: a wide prior centered on staying put
            return np.array([0.0, 0.0, 0.5])
        dx, dy = _aim(gripper, goal, self.params.step_max)
        dist = math.hypot(goal[0] - gripper[0], goal[1] - gripper[1])
        q_close = _sigmoid((GRASP_RADIUS - dist) / 0.02)
        return np.array([dx, dy, 0.25 + 0.5 * q_close])

    def _component_sigma(self, goal: tuple[float, float] | None) -> np.ndarray:
        if goal is None:
            return np.array([0.12, 0.12, 0.30])
        return np.array([self.params.action_sigma, self.params.action_sigma, 0.08])

    def sample(
        self,
        obs: Observation,
        instruction: Instruction,
        n: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one sample")
        mix = self.target_mixture(obs, instruction)
        predict = mixture_noise_prediction(mix, self.schedule)
        x = rng.standard_normal((n, 3))
        for k in range(self.schedule.steps, 0, -1):
            x = denoise_step(x, k, self.schedule, predict, rng)
        return x


# -- scripted oracle -------------------------------------------------------


class ScriptedExpert:
    """Deterministic task solver reading privileged scene state."""

    def __init__(self, task: TaskSpec) -> None:
        self.task = task
        self._target_label = task.instruction.target_labels[0]
        self._goal_label = task.goal if isinstance(task.goal, str) else None

    @property
    def m(self) -> int:
        return 3

    def act(self, scene: Scene) -> np.ndarray:
        target_idx = next(
            i for i, o in enumerate(scene.objects) if o.label == self._target_label
        )
        target = scene.objects[target_idx]
        gripper = (scene.gripper_x, scene.gripper_y)

        if self.task.kind == "reach":
            dx, dy = _aim(gripper, (target.x, target.y), STEP_MAX)
            return np.array([dx, dy, 0.0])

        if self._goal_label is not None:
            goal_obj = next(o for o in scene.objects if o.label == self._goal_label)
            goal = (goal_obj.x, goal_obj.y)
        else:
            goal = self.task.goal  # type: ignore[assignment]

        holding_target = scene.held_index == target_idx
        if not holding_target:
            if scene.held_index is not None:
                return np.array([0.0, 0.0, 0.0])  # wrong object: release first
            d = math.hypot(target.x - gripper[0], target.y - gripper[1])
            nearest_other = min(
                (
                    math.hypot(o.x - gripper[0], o.y - gripper[1])
                    for i, o in enumerate(scene.objects)
                    if i != target_idx
                ),
                default=math.inf,
            )
            # close only when the grasp cannot pick up a different object
            if d <= 0.8 * GRASP_RADIUS and d < nearest_other:
                return np.array([0.0, 0.0, 1.0])
            dx, dy = _aim(gripper, (target.x, target.y), STEP_MAX)
            return np.array([dx, dy, 0.0])

        d_goal = math.hypot(goal[0] - gripper[0], goal[1] - gripper[1])
        if d_goal <= 0.8 * self.task.success_radius:
            if self.task.kind == "stack":
                return np.array([0.0, 0.0, 0.0])  # release on top
            return np.array([0.0, 0.0, 1.0])  # hold in place; success is positional
        dx, dy = _aim(gripper, goal, STEP_MAX)
        return np.array([dx, dy, 1.0])
