"""End-to-end front-end loop and its configuration.

Per frame: track against the keyframe, re-estimate the keyframe depth by
grid search, absorb the measurements into the per-pixel posterior, then
check the keyframe criteria and hand over (with semantic fusion) when
they fire. The posterior update and the inlier down-weighting can each be
switched off to reproduce the ablation arms.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dataset_io import (
    SequenceReader,
    Trajectory,
    write_f32,
    write_image,
    write_trajectory,
)
from .depth_filter import FilterParams, dump_state, update_map
from .depth_search import SearchConfig, search_frame
from .geometry import Intrinsics, Pose, compose, inverse
from .image_pyramid import build_pyramid, to_gray
from .keyframe_mgr import (
    Keyframe,
    KfCriteria,
    insert_keyframe,
    propagate_semantics,
    should_insert,
)
from .tracker import AffineLight, TrackConfig, TrackingFailure, track


@dataclass
class PipelineConfig:
    tracker: TrackConfig = field(default_factory=TrackConfig)
    filter: FilterParams = field(default_factory=FilterParams)
    search: SearchConfig = field(default_factory=SearchConfig)
    criteria: KfCriteria = field(default_factory=KfCriteria)
    snippet_len: Optional[int] = None
    frame_rate: float = 10.0
    use_mask_prior: bool = True  # outlier-mask prior vs all-ones
    posterior_update: bool = True  # depth search + measurement fusion
    downweighting: bool = True  # inlier-probability weights in tracking
    pixel_stride: int = 1  # interleaved depth-search decimation


_SECTIONS = {
    "tracker": TrackConfig,
    "filter": FilterParams,
    "search": SearchConfig,
    "keyframe": KfCriteria,
}
_PIPELINE_KEYS = {
    "snippet_len",
    "frame_rate",
    "use_mask_prior",
    "posterior_update",
    "downweighting",
    "pixel_stride",
}


def _convert(raw: str, ftype):
    if ftype is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return ftype(raw)


def parse_config(text: str) -> PipelineConfig:
    """Flat key=value config. Keys are the field names of the component
    configs; a name used by more than one component must be prefixed with
    its section (tracker./filter./search./keyframe.). Unknown keys raise.
    """
    field_types = {}
    owners = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            owners.setdefault(f.name, []).append(section)
            field_types[(section, f.name)] = f.type

    updates = {section: {} for section in _SECTIONS}
    pipeline_updates = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS or (section, name) not in field_types:
                raise ValueError(f"config line {ln}: unknown key {key!r}")
            updates[section][name] = raw
        elif key in _PIPELINE_KEYS:
            pipeline_updates[key] = raw
        elif key in owners:
            if len(owners[key]) > 1:
                opts = ", ".join(f"{s}.{key}" for s in owners[key])
                raise ValueError(
                    f"config line {ln}: ambiguous key {key!r}; use one of {opts}"
                )
            updates[owners[key][0]][key] = raw
        else:
            raise ValueError(f"config line {ln}: unknown key {key!r}")

    cfg = PipelineConfig()
    kwargs = {}
    base_types = {bool: bool, int: int, float: float}
    for section, cls in _SECTIONS.items():
        if updates[section]:
            cur = getattr(cfg, {"keyframe": "criteria"}.get(section, section))
            values = {}
            for f in dataclasses.fields(cls):
                ftype = type(getattr(cur, f.name))
                if f.name in updates[section]:
                    values[f.name] = _convert(updates[section][f.name], base_types.get(ftype, ftype))
                else:
                    values[f.name] = getattr(cur, f.name)
            kwargs[{"keyframe": "criteria"}.get(section, section)] = cls(**values)
    for key, raw in pipeline_updates.items():
        default = getattr(cfg, key)
        if key == "snippet_len":
            kwargs[key] = int(raw)
        else:
            kwargs[key] = _convert(raw, type(default))
    return dataclasses.replace(cfg, **kwargs)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass
class FrameDiag:
    frame_index: int
    keyframe_index: int
    cost: float
    valid_ratio: float
    iterations: int
    converged: bool
    tracking_failed: bool
    keyframe_inserted: bool


@dataclass
class KeyframeOutput:
    frame_index: int
    timestamp: float
    pose: Pose
    depth: np.ndarray  # final fused depth, meters
    inlier: np.ndarray  # final mean inlier probability
    sem_fused: Optional[np.ndarray]
    sem_raw: Optional[np.ndarray]
    gray: np.ndarray


@dataclass
class RunOutput:
    trajectory: Trajectory
    keyframes: List[KeyframeOutput]
    diagnostics: List[FrameDiag]


def _retire(kf: Keyframe, raw_sem) -> KeyframeOutput:
    return KeyframeOutput(
        frame_index=kf.frame_index,
        timestamp=kf.timestamp,
        pose=kf.pose,
        depth=1.0 / kf.filter.mu,
        inlier=kf.filter.inlier_prob(),
        sem_fused=None if kf.sem_probs is None else kf.sem_probs.copy(),
        sem_raw=raw_sem,
        gray=kf.gray.copy(),
    )


def run(seq: SequenceReader, cfg: PipelineConfig,
        debug_dir: Optional[str] = None) -> RunOutput:
    """Process a sequence start to finish; poses are world-from-camera with
    the first frame at the origin."""
    frames = iter(seq)
    first = next(frames)
    K = seq.intrinsics
    n_levels = cfg.tracker.levels

    kf = insert_keyframe(
        first, first.priors, Pose.identity(), cfg.filter, K,
        n_levels=n_levels, use_mask_prior=cfg.use_mask_prior,
    )
    kf_raw_sem = None if first.priors.sem is None else first.priors.sem.copy()
    trajectory: Trajectory = [(first.timestamp, kf.pose)]
    keyframes: List[KeyframeOutput] = []
    diagnostics: List[FrameDiag] = []

    history: List[Pose] = []  # poses of recent frames, relative to current kf
    light = AffineLight()
    frames_since_kf = 0
    last_priors = first.priors

    for frame in frames:
        frames_since_kf += 1
        gray = to_gray(frame.image)
        frame_pyr = build_pyramid(gray, K, n_levels)
        failed = False
        try:
            result = track(
                frame_pyr, kf, cfg.tracker, pose_history=history,
                init_light=light, use_weights=cfg.downweighting,
            )
            rel = result.pose
            light = result.light
        except TrackingFailure:
            failed = True
            rel = history[-1] if history else Pose.identity()
            result = None

        world = compose(kf.pose, inverse(rel))
        trajectory.append((frame.timestamp, world))

        if not failed and cfg.posterior_update:
            d_k, tau_sq, measured, _ = search_frame(
                kf, gray, rel, light, cfg.search, cfg.filter,
                stride=cfg.pixel_stride, phase=frame.index % max(cfg.pixel_stride, 1),
            )
            kf.filter, _ = update_map(kf.filter, d_k, tau_sq, measured, cfg.filter)
            if debug_dir is not None:
                dump_state(kf.filter, debug_dir, frame.index)

        insert = failed or should_insert(
            frames_since_kf,
            result.valid_ratio if result is not None else 0.0,
            cfg.criteria,
        )
        diagnostics.append(
            FrameDiag(
                frame_index=frame.index,
                keyframe_index=kf.frame_index,
                cost=result.final_cost if result else float("nan"),
                valid_ratio=result.valid_ratio if result else 0.0,
                iterations=result.iterations if result else 0,
                converged=result.converged if result else False,
                tracking_failed=failed,
                keyframe_inserted=insert,
            )
        )
        if insert:
            if frame.priors is None:
                frame_priors = last_priors  # stale but better than nothing
            else:
                frame_priors = frame.priors
            new_kf = insert_keyframe(
                frame, frame_priors, world, cfg.filter, K,
                n_levels=n_levels, use_mask_prior=cfg.use_mask_prior,
            )
            fused = propagate_semantics(kf, new_kf, rel)
            keyframes.append(_retire(kf, kf_raw_sem))
            if fused is not None:
                new_kf.sem_probs = fused
            kf_raw_sem = None if frame_priors.sem is None else frame_priors.sem.copy()
            kf = new_kf
            # re-express the motion history against the new keyframe: the
            # keyframe itself sits at identity, the previous frame at
            # T_prev * T_kf^-1, which keeps the constant-motion model warm
            if history and not failed:
                history = [compose(history[-1], inverse(rel)), Pose.identity()]
            else:
                history = [Pose.identity()]
            frames_since_kf = 0
            light = AffineLight()
        else:
            history.append(rel)
            if len(history) > 2:
                history = history[-2:]
        last_priors = frame.priors or last_priors

    keyframes.append(_retire(kf, kf_raw_sem))
    return RunOutput(trajectory, keyframes, diagnostics)


def run_snippets(seq: SequenceReader, cfg: PipelineConfig, n: int) -> List[RunOutput]:
    """Independent runs over consecutive n-frame windows (trailing partial
    window dropped). Each window starts fresh from its own keyframe."""
    if n < 2:
        raise ValueError("snippets need at least 2 frames")
    indices = seq.indices
    outputs: List[RunOutput] = []
    for start in range(0, len(indices) - n + 1, n):
        window = indices[start : start + n]
        outputs.append(_run_window(seq, cfg, window))
    return outputs


def _run_window(seq: SequenceReader, cfg: PipelineConfig, window) -> RunOutput:
    class _View:
        intrinsics = seq.intrinsics
        indices = list(window)
        rate = seq.rate

        def __iter__(self):
            return (seq.frame(i) for i in window)

    return run(_View(), cfg)


def write_outputs(out: RunOutput, out_dir: str, seq: SequenceReader):
    """Persist a run: trajectory, per-keyframe rasters, diagnostics CSV."""
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory(out.trajectory, os.path.join(out_dir, "traj.txt"))
    from .geometry import save_intrinsics

    save_intrinsics(seq.intrinsics, os.path.join(out_dir, "calib.txt"))

    kf_poses = [(kf.timestamp, kf.pose) for kf in out.keyframes]
    write_trajectory(kf_poses, os.path.join(out_dir, "keyframes.txt"))
    for sub in ("kf/depth", "kf/image"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    have_labels = any(kf.sem_fused is not None for kf in out.keyframes)
    if have_labels:
        os.makedirs(os.path.join(out_dir, "kf/labels"), exist_ok=True)
    for kf in out.keyframes:
        stem = f"{kf.frame_index:06d}"
        write_f32(kf.depth, os.path.join(out_dir, "kf/depth", stem + ".f32"))
        write_image(
            np.round(kf.gray * 255).astype(np.uint8),
            os.path.join(out_dir, "kf/image", stem + ".png"),
        )
        if kf.sem_fused is not None:
            np.argmax(kf.sem_fused, axis=0).astype(np.uint8).tofile(
                os.path.join(out_dir, "kf/labels", stem + ".u8")
            )
    with open(os.path.join(out_dir, "diagnostics.csv"), "w") as fh:
        fh.write(
            "frame_index,keyframe_index,cost,valid_ratio,iterations,"
            "converged,tracking_failed,keyframe_inserted\n"
        )
        for d in out.diagnostics:
            fh.write(
                f"{d.frame_index},{d.keyframe_index},{d.cost:.9g},"
                f"{d.valid_ratio:.6f},{d.iterations},{int(d.converged)},"
                f"{int(d.tracking_failed)},{int(d.keyframe_inserted)}\n"
            )
