import numpy as np
import pytest

from conftest import rotvec_pose
from errors import ParseError
from geometry import CameraIntrinsics, RigidPose
from scale import SparsePointCloud
from utils import (
    parse_floats,
    read_cameras,
    read_key_values,
    read_pfm,
    read_ppm,
    read_sparse_cloud,
    write_cameras,
    write_csv,
    write_pfm,
    write_ppm,
    write_sparse_cloud,
)


class TestPFM:
    def test_grid_round_trip(self, tmp_path, rng):
        grid = rng.uniform(0.5, 20.0, size=(5, 7)).astype(np.float32)
        write_pfm(tmp_path / "d.pfm", grid)
        back = read_pfm(tmp_path / "d.pfm")
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back, grid)

    def test_color_round_trip(self, tmp_path, rng):
        image = rng.uniform(size=(3, 4, 3)).astype(np.float32)
        write_pfm(tmp_path / "c.pfm", image)
        np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), image)

    def test_rows_stored_bottom_up(self, tmp_path):
        write_pfm(tmp_path / "d.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
        raw = (tmp_path / "d.pfm").read_bytes()
        samples = np.frombuffer(raw[-16:], dtype="<f4")
        np.testing.assert_array_equal(samples, [3.0, 4.0, 1.0, 2.0])

    def test_big_endian(self, tmp_path):
        data = np.array([[5.0, 6.0, 7.0]], dtype=">f4").tobytes()
        (tmp_path / "be.pfm").write_bytes(b"Pf\n3 1\n1.0\n" + data)
        np.testing.assert_array_equal(read_pfm(tmp_path / "be.pfm"), [[5.0, 6.0, 7.0]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n-1.0\n\x00\x00\x00\x00")
        with pytest.raises(ParseError, match="not a PFM file"):
            read_pfm(tmp_path / "x.pfm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + np.zeros(3, dtype="<f4").tobytes())
        with pytest.raises(ParseError, match="expected 4 samples"):
            read_pfm(tmp_path / "t.pfm")


class TestPPM:
    def test_quantized_round_trip(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(4, 6, 3)) / 255.0
        write_ppm(tmp_path / "i.ppm", image)
        np.testing.assert_array_equal(read_ppm(tmp_path / "i.ppm"), image)

    def test_header(self, tmp_path):
        write_ppm(tmp_path / "i.ppm", np.zeros((2, 3, 3)))
        assert (tmp_path / "i.ppm").read_bytes().startswith(b"P6\n3 2\n255\n")

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 51]))
        np.testing.assert_allclose(read_ppm(tmp_path / "c.ppm"), [[[1.0, 0.0, 0.2]]])

    def test_sixteen_bit_rejected(self, tmp_path):
        (tmp_path / "w.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(ParseError, match="8-bit"):
            read_ppm(tmp_path / "w.ppm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(ParseError, match="expected 12 bytes of pixel data, got 5"):
            read_ppm(tmp_path / "t.ppm")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "m.ppm").write_bytes(b"P6\nwide 1\n255\n" + bytes(3))
        with pytest.raises(ParseError, match="malformed"):
            read_ppm(tmp_path / "m.ppm")


class TestSparseCloud:
    def test_round_trip_is_exact(self, tmp_path, rng):
        cloud = SparsePointCloud(rng.normal(size=(6, 3)) * 10, ["0", "0", "0", "1", "1", "1"])
        write_sparse_cloud(tmp_path / "s.txt", cloud)
        back = read_sparse_cloud(tmp_path / "s.txt")
        np.testing.assert_array_equal(back.points, cloud.points)
        assert back.pair_ids == cloud.pair_ids

    def test_bad_line_number(self, tmp_path):
        (tmp_path / "s.txt").write_text("# points\n1 2 3 0\n1 2 0\n")
        with pytest.raises(ParseError) as info:
            read_sparse_cloud(tmp_path / "s.txt")
        assert info.value.line == 3
        assert ":3:" in str(info.value)


class TestCameras:
    def test_round_trip_is_exact(self, tmp_path):
        intrinsics = [CameraIntrinsics(64.0, 64.0, 31.5, 31.5), CameraIntrinsics(60.0, 61.0, 30.0, 29.5)]
        poses = [RigidPose.identity(), rotvec_pose(0.0, -0.05, 0.0, 0.5, 0.05, 0.1)]
        write_cameras(tmp_path / "cameras.txt", intrinsics, poses)
        k_back, poses_back = read_cameras(tmp_path / "cameras.txt")
        assert k_back == intrinsics
        for a, b in zip(poses, poses_back):
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.translation, b.translation)

    def test_incomplete_view(self, tmp_path):
        (tmp_path / "cameras.txt").write_text("1 1 0 0\n1 0 0 0\n0 1 0 0\n")
        with pytest.raises(ParseError, match="4 rows per view"):
            read_cameras(tmp_path / "cameras.txt")

    def test_invalid_rotation(self, tmp_path):
        (tmp_path / "cameras.txt").write_text("1 1 0 0\n2 0 0 0\n0 1 0 0\n0 0 1 0\n")
        with pytest.raises(ParseError, match="orthonormal"):
            read_cameras(tmp_path / "cameras.txt")


class TestKeyValues:
    def test_comments_and_blank_lines(self, tmp_path):
        (tmp_path / "kv.txt").write_text("# header\n\nwidth = 16  # pixels\nname=a=b\n")
        entries = read_key_values(tmp_path / "kv.txt")
        assert [(e.key, e.value, e.line) for e in entries] == [("width", "16", 3), ("name", "a=b", 4)]

    def test_missing_equals(self, tmp_path):
        (tmp_path / "kv.txt").write_text("width = 1\nheight 2\n")
        with pytest.raises(ParseError) as info:
            read_key_values(tmp_path / "kv.txt")
        assert info.value.line == 2

    def test_parse_floats(self, tmp_path):
        (tmp_path / "kv.txt").write_text("pose = 0 0 x\n")
        entry = read_key_values(tmp_path / "kv.txt")[0]
        with pytest.raises(ParseError, match="non-numeric"):
            parse_floats(entry, tmp_path / "kv.txt", 3)
        with pytest.raises(ParseError, match="expects 2 numbers"):
            parse_floats(entry, tmp_path / "kv.txt", 2)


def test_csv_floats_round_trip(tmp_path):
    value = 0.1 + 0.2
    write_csv(tmp_path / "t.csv", ["name", "value"], [["a", value], ["b", np.float64(1e-17)], ["c", 3]])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "name,value"
    assert float(lines[1].split(",")[1]) == value
    assert lines[2] == "b,1e-17"
    assert lines[3] == "c,3"
