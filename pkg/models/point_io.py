"""
Point-cloud file IO: OFF meshes (sampled to a cloud), XYZ text clouds, and
dataset directories laid out as <root>/<class_name>/<split>/<item>.{off,xyz}.
"""

import logging
from pathlib import Path

import numpy as np

from models.errors import EmptyInputError, ParseError
from models.geometry import PointCloud
from models.shapes import LabeledDataset, LabeledItem

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
SUFFIXES = (".off", ".xyz")


def _content_lines(text):
    """(line_no, tokens) for every non-blank line, '#' comments stripped."""
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].split()
        if body:
            yield line_no, body


def _read_text(path):
    return Path(path).read_text(encoding="utf-8")


# --- OFF -------------------------------------------------------------------

def parse_off(text, path="<off>"):
    """Vertices (nV, 3) and triangles (nT, 3); polygons are fan-triangulated."""
    lines = list(_content_lines(text))
    if not lines:
        raise ParseError(path, 1, "empty OFF file")
    line_no, tokens = lines[0]
    if not tokens[0].startswith("OFF"):
        raise ParseError(path, line_no, f"expected 'OFF' header, got {tokens[0]!r}")
    # some exporters glue the counts onto the header line ("OFF8 6 0" or "OFF 8 6 0")
    rest = [tokens[0][3:]] if len(tokens[0]) > 3 else []
    rest += tokens[1:]
    cursor = 1
    if not rest:
        if len(lines) < 2:
            raise ParseError(path, line_no, "missing vertex/face counts")
        line_no, rest = lines[1]
        cursor = 2
    try:
        n_vertices, n_faces = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise ParseError(path, line_no, "malformed counts line (expected 'nV nF nE')") from None
    if n_vertices < 0 or n_faces < 0:
        raise ParseError(path, line_no, "negative vertex or face count")
    if len(lines) < cursor + n_vertices + n_faces:
        last = lines[-1][0]
        raise ParseError(path, last, f"expected {n_vertices} vertices and {n_faces} faces, file ends early")

    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for k in range(n_vertices):
        line_no, tokens = lines[cursor + k]
        if len(tokens) < 3:
            raise ParseError(path, line_no, "vertex needs three coordinates")
        try:
            vertices[k] = [float(t) for t in tokens[:3]]
        except ValueError:
            raise ParseError(path, line_no, "vertex coordinates must be numbers") from None
        if not np.all(np.isfinite(vertices[k])):
            raise ParseError(path, line_no, "vertex coordinates must be finite")
    cursor += n_vertices

    triangles = []
    for k in range(n_faces):
        line_no, tokens = lines[cursor + k]
        try:
            count = int(tokens[0])
            corners = [int(t) for t in tokens[1:1 + count]]
        except ValueError:
            raise ParseError(path, line_no, "face indices must be integers") from None
        if count < 3 or len(corners) != count:
            raise ParseError(path, line_no, f"face needs at least 3 vertex indices, got {len(corners)}")
        if min(corners) < 0 or max(corners) >= n_vertices:
            raise ParseError(path, line_no, "face references a vertex that does not exist")
        for j in range(1, count - 1):
            triangles.append((corners[0], corners[j], corners[j + 1]))
    return vertices, np.asarray(triangles, dtype=np.int64).reshape(-1, 3)


def triangle_areas(vertices, triangles):
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_mesh(vertices, triangles, n_points, rng):
    """Area-weighted uniform surface samples; returns (points, triangle index per point)."""
    areas = triangle_areas(vertices, triangles)
    total = areas.sum()
    if total <= 0:
        raise EmptyInputError("mesh with zero surface area")
    chosen = rng.choice(len(triangles), size=n_points, p=areas / total)
    r1 = np.sqrt(rng.random(n_points))
    r2 = rng.random(n_points)
    a, b, c = (vertices[triangles[chosen, k]] for k in range(3))
    points = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return points, chosen


def load_off(path, n_points=1024, seed=0):
    vertices, triangles = parse_off(_read_text(path), path=path)
    if len(triangles) == 0:
        raise ParseError(path, 1, "mesh has no faces to sample")
    points, _ = sample_mesh(vertices, triangles, n_points, np.random.default_rng(seed))
    log.debug("%s: %d vertices, %d triangles -> %d points", path, len(vertices), len(triangles), n_points)
    return PointCloud.from_points(points)


# --- XYZ -------------------------------------------------------------------

def parse_xyz(text, path="<xyz>"):
    rows = []
    for line_no, tokens in _content_lines(text):
        if len(tokens) != 3:
            raise ParseError(path, line_no, f"expected 'x y z', got {len(tokens)} fields")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise ParseError(path, line_no, "coordinates must be numbers") from None
        if not np.all(np.isfinite(rows[-1])):
            raise ParseError(path, line_no, "coordinates must be finite")
    if not rows:
        raise EmptyInputError(f"no points in {path}")
    return np.asarray(rows, dtype=np.float64)


def load_xyz(path):
    return PointCloud.from_points(parse_xyz(_read_text(path), path=path))


def save_xyz(path, cloud, comment=None):
    """One 'x y z' line per point with 17 significant digits (exact float64 round trip)."""
    lines = [f"# {line}" for line in (comment or "").splitlines()]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cloud(path, n_points=1024, seed=0):
    """Dispatch on suffix; XYZ clouds larger than n_points are subsampled without replacement."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".off":
        return load_off(path, n_points, seed)
    if suffix == ".xyz":
        cloud = load_xyz(path)
        if len(cloud) > n_points:
            keep = np.sort(np.random.default_rng(seed).choice(len(cloud), n_points, replace=False))
            cloud = cloud.subset(keep)
        return cloud
    raise ParseError(path, 0, f"unsupported point-cloud format {suffix!r} (expected .off or .xyz)")


# --- dataset directories ----------------------------------------------------

def write_dataset_dir(dataset, root):
    root = Path(root)
    for item in dataset.items:
        folder = root / dataset.class_names[item.label] / item.split
        folder.mkdir(parents=True, exist_ok=True)
        save_xyz(folder / f"{item.item_id}.xyz", item.cloud)
    log.info("wrote %d items to %s", len(dataset), root)


def load_dataset_dir(root, n_points=1024, seed=0):
    """Classes are the sorted sub-directory names of `root`; labels follow that order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    items = []
    for label, name in enumerate(class_names):
        for split in SPLITS:
            folder = root / name / split
            if not folder.is_dir():
                continue
            for index, path in enumerate(sorted(folder.iterdir())):
                if path.suffix.lower() not in SUFFIXES:
                    continue
                cloud = load_cloud(path, n_points, seed=np.random.SeedSequence((seed, label, index)))
                items.append(LabeledItem(cloud, label, f"{name}/{path.stem}", split))
    if not items:
        raise EmptyInputError(f"no .off or .xyz items under {root}")
    log.info("loaded %d items in %d classes from %s", len(items), len(class_names), root)
    return LabeledDataset(items, class_names)
