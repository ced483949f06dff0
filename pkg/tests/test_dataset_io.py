import math
import os

import numpy as np
import pytest

from maskvo.dataset_io import (
    DatasetError,
    PriorBundle,
    SequenceReader,
    read_f32,
    read_trajectory,
    write_f32,
    write_ply,
    write_trajectory,
)
from maskvo.geometry import Pose, se3_exp


class TestSequenceLoading:
    def test_well_formed_sequence(self, plane_seq_dir):
        _, K, root = plane_seq_dir
        seq = SequenceReader(root)
        frames = list(seq)
        assert len(frames) == 5
        assert seq.intrinsics.width == K.width
        assert [f.index for f in frames] == [0, 1, 2, 3, 4]
        for f in frames:
            assert f.priors is not None
            assert f.priors.depth.shape == (K.height, K.width)
        # timestamps follow index / rate
        assert frames[3].timestamp == pytest.approx(0.3)

    def test_negative_depth_rejected(self, plane_seq_dir, tmp_path):
        import shutil

        _, K, root = plane_seq_dir
        bad = tmp_path / "bad"
        shutil.copytree(root, bad)
        path = bad / "priors" / "depth" / "000001.f32"
        depth = read_f32(path, (K.height, K.width))
        depth[3, 4] = -1.0
        write_f32(depth, path)
        with pytest.raises(DatasetError, match="000001"):
            SequenceReader(bad).frame(1)

    def test_missing_mask_marks_priors_absent(self, plane_seq_dir, tmp_path):
        import shutil

        _, _, root = plane_seq_dir
        trimmed = tmp_path / "trimmed"
        shutil.copytree(root, trimmed)
        os.remove(trimmed / "priors" / "mask" / "000002.f32")
        frame = SequenceReader(trimmed).frame(2)
        assert frame.priors is not None
        assert frame.priors.mask is None
        assert frame.priors.depth is not None

    def test_missing_calib(self, tmp_path):
        with pytest.raises(DatasetError, match="calib"):
            SequenceReader(tmp_path)

    def test_validation_catches_bad_sem_sums(self):
        depth = np.ones((4, 4))
        sem = np.full((3, 4, 4), 0.5)
        with pytest.raises(DatasetError, match="sum"):
            PriorBundle(depth, None, sem).validate()


class TestTrajectoryIO:
    def test_identity_line_format(self, tmp_path):
        path = tmp_path / "traj.txt"
        write_trajectory([(0.0, Pose.identity())], path)
        assert path.read_text() == "0.000000000 0 0 0 0 0 0 1\n"

    def test_quarter_turn_quaternion(self, tmp_path):
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        path = tmp_path / "traj.txt"
        write_trajectory([(1.5, Pose(R, np.zeros(3)))], path)
        vals = [float(v) for v in path.read_text().split()]
        assert vals[6] == pytest.approx(math.sin(math.pi / 4), abs=1e-9)  # qz
        assert vals[7] == pytest.approx(math.cos(math.pi / 4), abs=1e-9)  # qw

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        traj = []
        for i in range(25):
            w = rng.normal(size=3)
            w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
            traj.append((0.1 * i, se3_exp(np.concatenate([w, rng.normal(size=3)]))))
        path = tmp_path / "traj.txt"
        write_trajectory(traj, path)
        back = read_trajectory(path)
        assert len(back) == len(traj)
        for (t0, p0), (t1, p1) in zip(traj, back):
            assert t1 == pytest.approx(t0, abs=1e-9)
            assert np.max(np.abs(p1.matrix() - p0.matrix())) < 1e-7

    def test_non_monotonic_timestamps_rejected(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")
        with pytest.raises(DatasetError, match="increasing"):
            read_trajectory(path)


def parse_ply(path):
    lines = open(path).read().splitlines()
    assert lines[0] == "ply"
    assert lines[1] == "format ascii 1.0"
    n = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    header_end = lines.index("end_header")
    props = [l.split()[-1] for l in lines[:header_end] if l.startswith("property")]
    body = [l.split() for l in lines[header_end + 1 :] if l]
    assert len(body) == n
    return props, body


class TestPly:
    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "cloud.ply"
        write_ply(path, np.zeros((0, 3)), np.zeros((0, 3)))
        props, body = parse_ply(path)
        assert props == ["x", "y", "z", "red", "green", "blue"]
        assert body == []

    def test_single_point_with_label(self, tmp_path):
        path = tmp_path / "cloud.ply"
        write_ply(path, [[1.0, 2.0, 3.0]], [[10, 20, 30]], labels=[4])
        props, body = parse_ply(path)
        assert props[-1] == "label"
        assert body[0] == ["1", "2", "3", "10", "20", "30", "4"]

    def test_rejects_nan(self, tmp_path):
        with pytest.raises(DatasetError):
            write_ply(tmp_path / "c.ply", [[np.nan, 0, 0]], [[0, 0, 0]])

    def test_backprojected_plane(self, plane_pair, tmp_path):
        # fronto-parallel plane at a fixed depth: all back-projected points
        # land on that plane (world z = plane_z)
        from maskvo.geometry import backproject_grid

        spec, K, f0, _ = plane_pair
        pts = backproject_grid(f0.depth, K).reshape(-1, 3)
        world = f0.pose.apply(pts)
        assert np.allclose(world[:, 2], spec.plane_z, atol=1e-9)
        gray = np.clip(f0.gray.reshape(-1) * 255, 0, 255).astype(np.uint8)
        rgb = np.stack([gray] * 3, axis=1)
        path = tmp_path / "plane.ply"
        write_ply(path, world, rgb)
        _, body = parse_ply(path)
        zs = np.array([float(row[2]) for row in body])
        assert np.allclose(zs, spec.plane_z, atol=1e-5)
