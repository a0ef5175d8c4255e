"""
Unit tests for OFF / XYZ parsing, mesh sampling and dataset directories.
"""

import numpy as np
import pytest

from models.errors import EmptyInputError, ParseError
from models.geometry import PointCloud
from models.point_io import (parse_off, sample_mesh, triangle_areas, load_off, parse_xyz, save_xyz,
                             load_xyz, load_cloud, write_dataset_dir, load_dataset_dir)
from models.shapes import make_dataset

TETRA_OFF = """OFF
4 4 6
0 0 0
1 0 0
0 1 0
0 0 1
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3
"""


class TestParseOff:
    """Tests for the OFF mesh parser."""

    def test_minimal_tetrahedron(self):
        """Test vertices and triangles of a tetrahedron."""
        vertices, triangles = parse_off(TETRA_OFF)
        assert vertices.shape == (4, 3)
        assert triangles.tolist() == [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]

    def test_non_finite_vertex(self):
        """Test that an inf vertex coordinate is a parse error on its line."""
        text = TETRA_OFF.replace("1 0 0\n", "inf 0 0\n", 1)
        with pytest.raises(ParseError, match="m.off:4: vertex coordinates must be finite"):
            parse_off(text, path="m.off")

    @pytest.mark.parametrize("header", ["OFF 4 4 6", "OFF4 4 6"])
    def test_counts_on_header_line(self, header):
        """Test that counts glued onto the header line are accepted."""
        body = TETRA_OFF.split("\n", 2)[2]
        vertices, triangles = parse_off(header + "\n" + body)
        assert len(vertices) == 4 and len(triangles) == 4

    def test_comments_and_blank_lines(self):
        """Test that comments and blank lines are skipped."""
        text = "# exported\nOFF\n\n4 1 0  # counts\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        _, triangles = parse_off(text)
        assert triangles.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_bad_header_line_number(self):
        """Test that a wrong magic reports line 1."""
        with pytest.raises(ParseError, match=":1:"):
            parse_off("PLY\n1 0 0\n0 0 0\n", path="m.off")

    def test_bad_vertex_line_number(self):
        """Test that a malformed vertex reports its own line."""
        text = TETRA_OFF.replace("1 0 0\n", "1 zero 0\n", 1)
        with pytest.raises(ParseError, match="m.off:4:"):
            parse_off(text, path="m.off")

    def test_face_out_of_range(self):
        """Test that a face naming a missing vertex is rejected."""
        text = TETRA_OFF.replace("3 1 2 3", "3 1 2 9")
        with pytest.raises(ParseError, match=":10:"):
            parse_off(text)

    def test_truncated_file(self):
        """Test that a file ending before its faces is rejected."""
        with pytest.raises(ParseError):
            parse_off("\n".join(TETRA_OFF.splitlines()[:6]))

    def test_empty_file(self):
        """Test that an empty file is rejected."""
        with pytest.raises(ParseError):
            parse_off("")


class TestSampleMesh:
    """Tests for area-weighted surface sampling."""

    def test_area_weighting(self):
        """Test that a 9:1 area split draws 9000 +- 200 of 10000 samples from the big triangle."""
        vertices = np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]], dtype=float)
        triangles = np.array([[0, 1, 2], [3, 4, 5]])
        np.testing.assert_allclose(triangle_areas(vertices, triangles), [4.5, 0.5])
        _, chosen = sample_mesh(vertices, triangles, 10000, np.random.default_rng(0))
        assert abs(int((chosen == 0).sum()) - 9000) <= 200

    def test_samples_inside_triangle(self):
        """Test that every sample has nonnegative barycentric coordinates."""
        vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        points, _ = sample_mesh(vertices, np.array([[0, 1, 2]]), 2000, np.random.default_rng(1))
        x, y = points[:, 0], points[:, 1]
        assert np.all(x >= 0) and np.all(y >= 0) and np.all(x + y <= 1 + 1e-12)
        assert np.all(points[:, 2] == 0)

    def test_degenerate_mesh(self):
        """Test that a zero-area mesh is rejected."""
        vertices = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        with pytest.raises(EmptyInputError):
            sample_mesh(vertices, np.array([[0, 1, 2]]), 10, np.random.default_rng(0))

    def test_load_off(self, tmp_path):
        """Test loading a mesh file into a seeded cloud."""
        path = tmp_path / "tetra.off"
        path.write_text(TETRA_OFF)
        a = load_off(path, n_points=128, seed=3)
        assert len(a) == 128
        np.testing.assert_array_equal(a.points, load_off(path, n_points=128, seed=3).points)


class TestXyz:
    """Tests for XYZ text clouds."""

    def test_round_trip_is_exact(self, tmp_path, random_cloud):
        """Test that save/load reproduces float64 coordinates bit for bit."""
        path = tmp_path / "cloud.xyz"
        save_xyz(path, random_cloud, comment="gaussian\nseed 1234")
        np.testing.assert_array_equal(load_xyz(path).points, random_cloud.points)

    def test_comments(self):
        """Test that comment lines are ignored."""
        assert parse_xyz("# header\n1 2 3\n4 5 6 # trailing\n").tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_wrong_field_count(self):
        """Test that rows with extra fields report their line."""
        with pytest.raises(ParseError, match=":2:"):
            parse_xyz("1 2 3\n1 2 3 4\n")

    @pytest.mark.parametrize("value", ["nan", "inf", "-inf"])
    def test_non_finite_coordinates(self, value):
        """Test that nan / inf coordinates are parse errors naming their line."""
        with pytest.raises(ParseError, match=":2: coordinates must be finite"):
            parse_xyz(f"1 2 3\n{value} 1 2\n")

    def test_no_points(self):
        """Test that a comment-only file is empty input."""
        with pytest.raises(EmptyInputError):
            parse_xyz("# nothing\n")

    def test_subsample_large_clouds(self, tmp_path, random_cloud):
        """Test that load_cloud subsamples XYZ clouds to n_points."""
        path = tmp_path / "big.xyz"
        save_xyz(path, random_cloud)
        assert len(load_cloud(path, n_points=50, seed=0)) == 50
        assert len(load_cloud(path, n_points=500, seed=0)) == len(random_cloud)

    def test_unsupported_suffix(self, tmp_path):
        """Test that unknown formats are rejected."""
        with pytest.raises(ParseError):
            load_cloud(tmp_path / "cloud.ply")


class TestDatasetDir:
    """Tests for <root>/<class>/<split>/<item> directories."""

    def test_round_trip(self, tmp_path):
        """Test that a written dataset loads back with sorted class labels."""
        dataset = make_dataset(2, 5, 32, seed=0)
        write_dataset_dir(dataset, tmp_path)
        loaded = load_dataset_dir(tmp_path, n_points=1000)
        assert loaded.class_names == ["cube", "sphere"]
        assert len(loaded.train()) == len(dataset.train())
        assert len(loaded.test()) == len(dataset.test())
        originals = {f"{dataset.class_names[i.label]}/{i.item_id}": i for i in dataset.items}
        for item in loaded.items:
            source = originals[item.item_id]
            assert loaded.class_names[item.label] == dataset.class_names[source.label]
            np.testing.assert_array_equal(item.cloud.points, source.cloud.points)

    def test_missing_root(self, tmp_path):
        """Test that a missing directory raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_dataset_dir(tmp_path / "absent")

    def test_no_items(self, tmp_path):
        """Test that a directory without clouds is empty input."""
        (tmp_path / "chair" / "train").mkdir(parents=True)
        with pytest.raises(EmptyInputError):
            load_dataset_dir(tmp_path)

    def test_ignores_other_files(self, tmp_path):
        """Test that files with other suffixes are skipped."""
        folder = tmp_path / "box" / "train"
        folder.mkdir(parents=True)
        save_xyz(folder / "a.xyz", PointCloud.from_points([[0, 0, 0], [1, 1, 1]]))
        (folder / "notes.txt").write_text("not a cloud")
        assert [i.item_id for i in load_dataset_dir(tmp_path).items] == ["box/a"]
