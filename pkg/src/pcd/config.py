"""Run configuration: dataclasses, JSON mapping, stable hashing.

A run is fully described by one nested dict; the hash of its canonical
JSON form identifies result rows. CLI flags and config files both feed
through `from_dict`, so every entry point validates identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dists import DecodeConfig, KdeConfig
from .world import TASK_KINDS, ShiftSpec

POLICY_KINDS = ("mixture", "diffusion", "expert")
PROMPT_KINDS = ("point", "box", "detector")
TRACKER_KINDS = ("exact", "nearest")
INPAINT_KINDS = ("constant", "mean", "diffusion")
METHODS = ("baseline", "pcd")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "mixture"
    lam: float = 0.6
    sharpness: float = 6.0
    bins: int = 21
    diffusion_steps: int = 120

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must lie in [0, 1]")
        if not (self.sharpness > 0.0):
            raise ValueError("sharpness must be > 0")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")


@dataclass(frozen=True)
class MaskConfig:
    """Annotation, tracking, and inpainting choices for the masked branch."""

    prompt: str = "detector"
    tracker: str = "nearest"
    inpaint: str = "mean"
    miss_prob: float = 0.0
    jitter: int = 0
    constant_value: float = 0.0
    diffusion_iterations: int = 25

    def __post_init__(self) -> None:
        if self.prompt not in PROMPT_KINDS:
            raise ValueError(f"unknown prompt kind {self.prompt!r}")
        if self.tracker not in TRACKER_KINDS:
            raise ValueError(f"unknown tracker {self.tracker!r}")
        if self.inpaint not in INPAINT_KINDS:
            raise ValueError(f"unknown inpaint strategy {self.inpaint!r}")
        if not (0.0 <= self.miss_prob <= 1.0):
            raise ValueError("miss_prob must lie in [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if not (0.0 <= self.constant_value <= 1.0):
            raise ValueError("constant_value must lie in [0, 1]")
        if self.diffusion_iterations < 1:
            raise ValueError("diffusion_iterations must be >= 1")


@dataclass(frozen=True)
class PcdRunConfig:
    method: str = "pcd"
    task_kind: str = "reach"
    max_steps: int | None = None
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    kde: KdeConfig = field(default_factory=KdeConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    trials: int = 100
    base_seed: int = 0
    both_metrics: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def to_dict(cfg: PcdRunConfig) -> dict[str, Any]:
    return {
        "method": cfg.method,
        "task": {"kind": cfg.task_kind, "max_steps": cfg.max_steps},
        "shift": {
            "variant": cfg.shift.kind,
            "brightness_offset": cfg.shift.brightness_offset,
            "distractor_count": cfg.shift.distractor_count,
            "distractor_label": cfg.shift.distractor_label,
            "texture_id": cfg.shift.texture_id,
        },
        "decode": {
            "alpha": cfg.decode.alpha,
            "prob_floor": cfg.decode.prob_floor,
            "selection": cfg.decode.selection,
        },
        "kde": {
            "n_samples": cfg.kde.n_samples,
            "bandwidth": cfg.kde.bandwidth,
            "grid_count": cfg.kde.grid_count,
            "support_pad": cfg.kde.support_pad,
        },
        "mask": {
            "prompt": cfg.mask.prompt,
            "tracker": cfg.mask.tracker,
            "inpaint": cfg.mask.inpaint,
            "miss_prob": cfg.mask.miss_prob,
            "jitter": cfg.mask.jitter,
            "constant_value": cfg.mask.constant_value,
            "diffusion_iterations": cfg.mask.diffusion_iterations,
        },
        "policy": {
            "kind": cfg.policy.kind,
            "lambda": cfg.policy.lam,
            "sharpness": cfg.policy.sharpness,
            "bins": cfg.policy.bins,
            "diffusion": {"steps": cfg.policy.diffusion_steps},
        },
        "trials": cfg.trials,
        "seed": cfg.base_seed,
        "both_metrics": cfg.both_metrics,
    }


def _take(section: dict, allowed: dict[str, Any], where: str) -> dict[str, Any]:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(section)
    return merged


def from_dict(raw: dict[str, Any]) -> PcdRunConfig:
    base = to_dict(PcdRunConfig())
    top = _take(raw, base, "config")
    for key in ("task", "shift", "decode", "kde", "mask", "policy"):
        top[key] = _take(raw.get(key, {}) or {}, base[key], key)
    top["policy"]["diffusion"] = _take(
        top["policy"].get("diffusion", {}) or {}, base["policy"]["diffusion"], "policy.diffusion"
    )

    return PcdRunConfig(
        method=top["method"],
        task_kind=top["task"]["kind"],
        max_steps=top["task"]["max_steps"],
        shift=ShiftSpec(
            kind=top["shift"]["variant"],
            brightness_offset=top["shift"]["brightness_offset"],
            distractor_count=top["shift"]["distractor_count"],
            distractor_label=top["shift"]["distractor_label"],
            texture_id=top["shift"]["texture_id"],
        ),
        decode=DecodeConfig(
            alpha=top["decode"]["alpha"],
            prob_floor=top["decode"]["prob_floor"],
            selection=top["decode"]["selection"],
        ),
        kde=KdeConfig(
            n_samples=top["kde"]["n_samples"],
            bandwidth=top["kde"]["bandwidth"],
            grid_count=top["kde"]["grid_count"],
            support_pad=top["kde"]["support_pad"],
        ),
        mask=MaskConfig(
            prompt=top["mask"]["prompt"],
            tracker=top["mask"]["tracker"],
            inpaint=top["mask"]["inpaint"],
            miss_prob=top["mask"]["miss_prob"],
            jitter=top["mask"]["jitter"],
            constant_value=top["mask"]["constant_value"],
            diffusion_iterations=top["mask"]["diffusion_iterations"],
        ),
        policy=PolicyConfig(
            kind=top["policy"]["kind"],
            lam=top["policy"]["lambda"],
            sharpness=top["policy"]["sharpness"],
            bins=top["policy"]["bins"],
            diffusion_steps=top["policy"]["diffusion"]["steps"],
        ),
        trials=top["trials"],
        base_seed=top["seed"],
        both_metrics=top["both_metrics"],
    )


def merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Deep-merge override into base without mutating either."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def config_hash(cfg: PcdRunConfig) -> str:
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path) -> PcdRunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return from_dict(raw)
