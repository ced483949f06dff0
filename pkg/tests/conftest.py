import numpy as np
import pytest

from maskvo.dataset_io import PriorBundle, SequenceFrame
from maskvo.depth_filter import FilterParams
from maskvo.geometry import Pose, compose, inverse
from maskvo.image_pyramid import to_gray
from maskvo.keyframe_mgr import insert_keyframe
from maskvo.synth import SceneSpec, default_intrinsics, render_frame


def quantize(gray):
    return np.round(gray * 255.0).astype(np.uint8)


def make_keyframe(truth, K, params=None, n_levels=3, depth=None, mask=None,
                  sem=None, use_mask_prior=True):
    """Keyframe from a rendered frame; priors default to exact ground truth."""
    priors = PriorBundle(
        truth.depth.copy() if depth is None else depth,
        truth.mask.copy() if mask is None else mask,
        sem,
    )
    frame = SequenceFrame(0, 0.0, quantize(truth.gray), priors)
    return insert_keyframe(
        frame, priors, truth.pose, params or FilterParams(), K,
        n_levels=n_levels, use_mask_prior=use_mask_prior,
    )


def relative_pose(truth_kf, truth_frame) -> Pose:
    """Ground-truth keyframe->frame transform from camera-to-world poses."""
    return compose(inverse(truth_frame.pose), truth_kf.pose)


@pytest.fixture(scope="session")
def plane_pair():
    """Two adjacent frames of a textured plane with exact ground truth."""
    spec = SceneSpec(kind="plane", seed=11)
    K = default_intrinsics(160, 96, 120.0)
    return spec, K, render_frame(spec, K, 0), render_frame(spec, K, 1)


@pytest.fixture(scope="session")
def plane_seq_dir(tmp_path_factory):
    """A small noise-free plane sequence on disk in the dataset layout."""
    from maskvo.synth import render

    spec = SceneSpec(kind="plane", seed=5)
    K = default_intrinsics(96, 64, 80.0)
    out = tmp_path_factory.mktemp("plane_seq")
    render(spec, K, 5, out)
    return spec, K, str(out)
