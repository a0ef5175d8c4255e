"""
The invariant suite behind `pointseq check`.

Every check returns (passed, details). Details are only printed for failures
and carry the witness input that broke the invariant. The brute-force oracles
below are written independently of the models they verify.
"""

import logging
import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from rich.console import Console
from scipy.spatial.distance import cdist

from models.config import PRESETS, TrainConfig
from models.geometry import PointCloud, farthest_point_sampling, knn_group, normalize
from models.metrics import MetricsWriter
from models.perturb import KINDS, PerturbSpec, apply, rotate
from models.pipeline import collate, prepare_items
from models.point_io import load_xyz, sample_mesh, save_xyz
from models.point_mamba import PatchEncoder, PointSequenceClassifier
from models.serializer import nimba_reorder, sort_axis
from models.shapes import ShapeKind, gen_shape, make_dataset
from models.ssm import (DTYPE, S6Params, AttnParams, s6_scan, s6_via_matrix, s6_materialize, sdpa,
                        attention_matrix, permutation_discrepancy, check_order_dependence)
from models.trainer import finite_difference_check, seed_everything, train

log = logging.getLogger(__name__)

SCAN_TOL = 1e-10
EQUIVARIANCE_TOL = 1e-10
WITNESS_TOL = 1e-6
GRADIENT_TOL = 1e-4
INVARIANCE_TOL = 1e-12
NIMBA_MAX_R = 2 * math.sqrt(3)


# --- brute-force oracles ----------------------------------------------------

def fps_oracle(points, n_c, start=0):
    """Recomputes every unchosen point's distance to the chosen set at each step."""
    points = [tuple(p) for p in points]
    chosen = [start]
    while len(chosen) < n_c:
        best, best_dist = None, -1.0
        for j in range(len(points)):
            if j in chosen:
                continue
            d = min(math.dist(points[j], points[k]) for k in chosen)
            if d > best_dist:
                best, best_dist = j, d
        chosen.append(best)
    return chosen


def knn_oracle(points, center, n_p):
    points = [tuple(p) for p in points]
    center = tuple(center)
    return sorted(range(len(points)), key=lambda j: (math.dist(points[j], center), j))[:n_p]


def nimba_replay(centers, r, candidate="first"):
    """The greedy gap-repair pass written out as plain list manipulation."""
    pts = [tuple(c) for c in centers]
    seq = sorted(range(len(pts)), key=lambda j: (pts[j][1], j))
    for i in range(len(seq) - 1):
        cur = pts[seq[i]]
        if math.dist(cur, pts[seq[i + 1]]) < r:
            continue
        close = [k for k in range(i + 2, len(seq)) if math.dist(cur, pts[seq[k]]) < r]
        if not close:
            continue
        if candidate == "nearest":
            k = min(close, key=lambda k: (math.dist(cur, pts[seq[k]]), k))
        else:
            k = close[0]
        seq.insert(i + 1, seq.pop(k))
    return seq


def _barycentric(points, a, b, c):
    """(u, v, residual) with points ~ a + u (b - a) + v (c - a), row by row."""
    e1, e2, w = b - a, c - a, points - a
    d11, d12, d22 = (e1 * e1).sum(1), (e1 * e2).sum(1), (e2 * e2).sum(1)
    w1, w2 = (w * e1).sum(1), (w * e2).sum(1)
    det = d11 * d22 - d12 * d12
    u = (d22 * w1 - d12 * w2) / det
    v = (d11 * w2 - d12 * w1) / det
    residual = np.linalg.norm(a + u[:, None] * e1 + v[:, None] * e2 - points, axis=1)
    return u, v, residual


def _tie_free_centers(rng, n_c, r, margin=1e-9):
    """Random centers with distinct y values and no pairwise distance within `margin` of r."""
    while True:
        centers = rng.uniform(-1, 1, size=(n_c, 3))
        y = np.sort(centers[:, 1])
        dist = cdist(centers, centers)
        if np.all(np.diff(y) > margin) and not np.any(np.abs(dist - r) < margin):
            return centers


# --- the suite --------------------------------------------------------------

class CheckSuite:
    def __init__(self, seed=0, corrupt_a_log=False):
        self.seed = seed
        self.corrupt_a_log = corrupt_a_log
        self.rng = np.random.default_rng(seed)
        self.gen = torch.Generator().manual_seed(seed)

    def _s6(self, d, n, seed):
        p = S6Params.random(d, n, seed=seed)
        if self.corrupt_a_log:
            with torch.no_grad():
                p.A_log.neg_()
        return p

    def _toy(self, pe=None):
        config = PRESETS["toy"].model
        if pe is not None:
            config = replace(config, use_positional_embedding=pe)
        torch.manual_seed(self.seed)
        model = PointSequenceClassifier(config)
        dataset = make_dataset(config.num_classes, 2, config.n_points, seed=self.seed)
        batch = collate(prepare_items(dataset.items, config))
        return model, batch

    def _randint(self, low, high):
        return int(self.rng.integers(low, high + 1))

    # mixers
    def check_scan_matrix(self):
        worst, witness = 0.0, None
        for trial in range(100):
            N, d, n = self._randint(1, 64), self._randint(1, 8), self._randint(1, 8)
            p = self._s6(d, n, seed=self.seed * 1000 + trial)
            X = torch.randn(N, d, generator=self.gen, dtype=DTYPE)
            with torch.no_grad():
                diff = float((s6_scan(p, X) - s6_via_matrix(p, X)).abs().max())
            if not diff <= worst:
                worst, witness = diff, (trial, N, d, n)
        return worst < SCAN_TOL, f"max |scan - matrix| = {worst:.3e} at (trial, N, d, n) = {witness}"

    def check_attention_equivariance(self):
        worst, witness = 0.0, None
        for trial in range(100):
            N, d = self._randint(1, 64), self._randint(1, 8)
            p = AttnParams.random(d, seed=self.seed * 1000 + trial)
            X = torch.randn(1, N, d, generator=self.gen, dtype=DTYPE)
            perm = torch.randperm(N, generator=self.gen)
            diff = permutation_discrepancy(lambda Z: sdpa(p, Z, causal=False), X, perm)
            if not diff <= worst:
                worst, witness = diff, (trial, N, d, perm.tolist())
        return worst < EQUIVARIANCE_TOL, f"max discrepancy {worst:.3e} at {witness}"

    def check_s6_order_dependence(self):
        generic = check_order_dependence(self._s6(4, 4, seed=self.seed), trials=10, seed=self.seed)
        pointwise = check_order_dependence(S6Params.pointwise(4, 4), trials=10, seed=self.seed)
        passed = generic.found_witness(WITNESS_TOL) and pointwise.max_discrepancy == 0.0
        return passed, (f"generic max discrepancy {generic.max_discrepancy:.3e} "
                        f"(witness {generic.witness.tolist()}); "
                        f"pointwise {pointwise.max_discrepancy:.3e}")

    def check_s6_causality(self):
        p = self._s6(4, 4, seed=self.seed)
        X = torch.randn(12, 4, generator=self.gen, dtype=DTYPE)
        Z = X.clone()
        Z[-1] += torch.randn(4, generator=self.gen, dtype=DTYPE)
        with torch.no_grad():
            same = torch.equal(s6_scan(p, X)[:-1], s6_scan(p, Z)[:-1])
        return same, "perturbing the last token changed an earlier output"

    def check_s6_stability(self):
        layers = [self._s6(8, 8, seed=self.seed + k) for k in range(5)]
        X = torch.randn(16, 8, generator=self.gen, dtype=DTYPE)
        for k, p in enumerate(layers):
            with torch.no_grad():
                delta = torch.nn.functional.softplus(X @ p.W_delta.T + p.b_delta)
                decay = torch.exp(-delta.unsqueeze(-1) * p.A_log)
            if not p.is_stable() or bool((decay > 1).any()) or bool((decay <= 0).any()):
                return False, (f"layer {k}: min A_log {float(p.A_log.min()):.3e}, "
                               f"max decay {float(decay.max()):.3e}")
        return True, ""

    def check_s6_lower_triangular(self):
        for trial in range(20):
            N, d = self._randint(1, 32), self._randint(1, 6)
            p = self._s6(d, self._randint(1, 6), seed=self.seed * 1000 + trial)
            X = torch.randn(N, d, generator=self.gen, dtype=DTYPE)
            with torch.no_grad():
                phi = s6_materialize(p, X, channel=trial % d)
            upper = torch.triu(phi, diagonal=1)
            if torch.count_nonzero(upper):
                return False, f"trial {trial}: nonzero entry above the diagonal (N={N}, d={d})"
        return True, ""

    def check_softmax_rows(self):
        worst = 0.0
        for trial in range(20):
            N, d = self._randint(1, 64), self._randint(1, 8)
            p = AttnParams.random(d, seed=self.seed * 1000 + trial)
            X = torch.randn(N, d, generator=self.gen, dtype=DTYPE)
            with torch.no_grad():
                for causal in (False, True):
                    rows = attention_matrix(p, X, causal=causal).sum(-1)
                    worst = max(worst, float((rows - 1).abs().max()))
        return worst < INVARIANCE_TOL, f"largest row-sum error {worst:.3e}"

    # serialization
    def check_nimba_replay(self):
        for trial in range(1000):
            n_c = self._randint(1, 128)
            centers = self.rng.uniform(-1, 1, size=(n_c, 3))
            r = float(self.rng.uniform(0.05, 1.5))
            order = nimba_reorder(centers, r).order
            if not np.array_equal(np.sort(order), np.arange(n_c)):
                return False, f"trial {trial}: not a permutation: {order.tolist()}"
            replay = nimba_replay(centers, r)
            if order.tolist() != replay:
                return False, f"trial {trial}: replay differs (r={r}, centers={centers.tolist()})"
            ysort = sort_axis(centers, "y").order
            for degenerate in (0.0, NIMBA_MAX_R):
                if not np.array_equal(nimba_reorder(centers, degenerate).order, ysort):
                    return False, f"trial {trial}: r={degenerate} differs from the y-sorted order"
        return True, ""

    def check_nimba_isometry(self):
        r = 0.8
        for trial in range(100):
            centers = _tie_free_centers(self.rng, self._randint(2, 64), r)
            base = nimba_reorder(centers, r).order
            shifted = centers + self.rng.uniform(-5, 5, size=3)
            turned = rotate(PointCloud.from_points(centers), axis=(0, 1, 0),
                            angle=float(self.rng.uniform(0, 2 * np.pi))).points
            for name, moved in (("translation", shifted), ("y-rotation", turned)):
                if not np.array_equal(nimba_reorder(moved, r).order, base):
                    return False, f"trial {trial}: {name} changed the order; centers={centers.tolist()}"
        return True, ""

    # geometry
    def check_fps_knn(self):
        for trial in range(50):
            n = self._randint(16, 256)
            points = self.rng.normal(size=(n, 3))
            if trial % 5 == 0:
                # coincident rows: FPS must still pick distinct indices
                points[n // 2:] = points[: n - n // 2]
            cloud = PointCloud.from_points(points)
            n_c, n_p = self._randint(1, min(n, 32)), self._randint(1, min(n, 16))
            centers, rows = farthest_point_sampling(cloud, n_c)
            expected = fps_oracle(cloud.points, n_c)
            if len(set(rows.tolist())) != n_c:
                return False, f"trial {trial}: fps repeated an index: {rows.tolist()}"
            if rows.tolist() != expected:
                return False, f"trial {trial}: fps {rows.tolist()} != oracle {expected}"
            patches = knn_group(cloud, centers, n_p)
            for k, center in enumerate(centers):
                expected = knn_oracle(cloud.points, center, n_p)
                if patches.patch_indices[k].tolist() != expected:
                    return False, f"trial {trial}, center {k}: knn differs from oracle"
        return True, ""

    def check_rotation_isometry(self):
        cloud = PointCloud.from_points(self.rng.normal(size=(200, 3)))
        turned = rotate(cloud, seed=self.seed)
        diff = float(np.abs(cdist(cloud.points, cloud.points) - cdist(turned.points, turned.points)).max())
        return diff < INVARIANCE_TOL, f"pairwise distance drift {diff:.3e}"

    def check_normalize_idempotent(self):
        worst = 0.0
        for trial in range(50):
            cloud = PointCloud.from_points(self.rng.normal(size=(self._randint(1, 200), 3)) * 10 + 3)
            once = normalize(cloud)
            diff = float(np.abs(normalize(once).points - once.points).max())
            if diff > INVARIANCE_TOL:
                return False, f"trial {trial}: normalizing twice moved a point by {diff:.3e}"
            worst = max(worst, diff)
        return True, f"max drift {worst:.3e}"

    def check_fps_knn_isometry(self):
        for trial in range(20):
            cloud = PointCloud.from_points(self.rng.normal(size=(self._randint(16, 200), 3)))
            moved = rotate(cloud, seed=self.seed * 100 + trial)
            moved = moved.with_points(moved.points + self.rng.uniform(-5, 5, size=3))
            n_c, n_p = self._randint(1, 16), self._randint(1, 12)
            centers, rows = farthest_point_sampling(cloud, n_c)
            moved_centers, moved_rows = farthest_point_sampling(moved, n_c)
            if not np.array_equal(rows, moved_rows):
                return False, f"trial {trial}: fps {rows.tolist()} became {moved_rows.tolist()}"
            before = knn_group(cloud, centers, n_p).patch_indices
            after = knn_group(moved, moved_centers, n_p).patch_indices
            if not np.array_equal(before, after):
                return False, f"trial {trial}: knn patch indices changed under an isometry"
        return True, ""

    def check_generated_shapes(self):
        for kind in ShapeKind:
            cloud = gen_shape(kind, 256, seed=self.seed)
            centroid = float(np.abs(cloud.points.mean(axis=0)).max())
            radius = float(np.linalg.norm(cloud.points, axis=1).max())
            if centroid >= 1e-9 or abs(radius - 1.0) > INVARIANCE_TOL:
                return False, f"{kind.value}: centroid {centroid:.3e}, max norm {radius!r}"
            if not np.array_equal(cloud.points, gen_shape(kind, 256, seed=self.seed).points):
                return False, f"{kind.value}: same seed gave a different cloud"
        return True, ""

    def check_mesh_sampling(self):
        vertices = self.rng.uniform(-1, 1, size=(12, 3))
        triangles = np.arange(12).reshape(4, 3)
        points, owner = sample_mesh(vertices, triangles, 2000, np.random.default_rng(self.seed))
        a, b, c = (vertices[triangles[owner, k]] for k in range(3))
        u, v, residual = _barycentric(points, a, b, c)
        tol = 1e-9
        bad = (u < -tol) | (v < -tol) | (u + v > 1 + tol) | (residual > tol)
        if bad.any():
            k = int(np.argmax(bad))
            return False, f"sample {k} = {points[k].tolist()} is off triangle {int(owner[k])}"
        return True, ""

    # perturbations
    def check_perturbations(self):
        cloud = PointCloud.from_points(self.rng.normal(size=(300, 3)))
        for kind in KINDS:
            spec = PerturbSpec(kind, seed=self.seed)
            first, second = apply(cloud, spec), apply(cloud, spec)
            if not np.array_equal(first.points, second.points):
                return False, f"{kind}: same seed gave different clouds"
            if kind in ("jitter", "rhf", "rotation") and len(first) != len(cloud):
                return False, f"{kind}: point count changed from {len(cloud)} to {len(first)}"
            if len(first) > len(cloud):
                return False, f"{kind}: point count grew from {len(cloud)} to {len(first)}"
        return True, ""

    # model
    def check_patch_pooling(self):
        torch.manual_seed(self.seed)
        encoder = PatchEncoder(16, 32)
        patches = torch.randn(5, 12, 3, generator=self.gen, dtype=DTYPE)
        shuffled = patches.clone()
        shuffled[2] = shuffled[2][torch.randperm(12, generator=self.gen)]
        with torch.no_grad():
            diff = float((encoder(patches) - encoder(shuffled)).abs().max())
        return diff <= INVARIANCE_TOL, f"within-patch permutation changed a token by {diff:.3e}"

    def check_pe_dead_branch(self):
        model, batch = self._toy(pe=False)
        with torch.no_grad():
            before = model(batch.centers, batch.patches, batch.serializations)
            for param in model.center_encoder.parameters():
                param.add_(torch.randn(param.shape, generator=self.gen, dtype=DTYPE))
            after = model(batch.centers, batch.patches, batch.serializations)
        return torch.equal(before, after), "center encoder leaked into the output with PE off"

    def check_model_order_sensitivity(self):
        model, batch = self._toy()
        with torch.no_grad():
            for param in model.parameters():
                param.copy_(0.5 * torch.randn(param.shape, generator=self.gen, dtype=DTYPE))
            for block in model.blocks:
                block.s6.A_log.abs_()
            tokens = model.tokens(batch.centers, batch.patches, batch.serializations)
            logits = model.classify(model.encoder_forward(tokens))
            worst = 0.0
            for _ in range(5):
                perm = torch.randperm(tokens.shape[1], generator=self.gen)
                permuted = model.classify(model.encoder_forward(tokens[:, perm]))
                worst = max(worst, float((permuted - logits).abs().max()))
        return worst > WITNESS_TOL, f"largest logit change under reordering {worst:.3e}"

    def check_gradients(self):
        model, batch = self._toy()
        errors = finite_difference_check(model, batch)
        name = max(errors, key=errors.get)
        return errors[name] < GRADIENT_TOL, f"worst relative error {errors[name]:.3e} in {name}"

    def check_determinism(self):
        config = PRESETS["toy"].model
        dataset = make_dataset(config.num_classes, 4, config.n_points, seed=self.seed)
        samples = prepare_items(dataset.train(), config)
        tests = prepare_items(dataset.test(), config)
        run_config = TrainConfig(epochs=2, batch_size=2, seed=self.seed)
        reports = []
        for _ in range(2):
            seed_everything(self.seed)
            model = PointSequenceClassifier(config)
            reports.append(train(model, samples, tests, run_config).to_dict())
        return reports[0] == reports[1], f"runs differ: {reports[0]} vs {reports[1]}"

    # persistence
    def check_round_trips(self):
        model, _ = self._toy()
        loaded = PointSequenceClassifier.load_from_json(model.to_json())
        restored = loaded.state_dict()
        for name, tensor in model.state_dict().items():
            if not torch.equal(tensor, restored[name]):
                return False, f"checkpoint changed parameter {name}"
        cloud = PointCloud.from_points(self.rng.normal(size=(50, 3)) * 1e3)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cloud.xyz"
            save_xyz(path, cloud)
            back = load_xyz(path)
        return np.array_equal(cloud.points, back.points), "XYZ round trip changed coordinates"

    def groups(self):
        return [
            ("Sequence mixers", [
                ("scan / matrix equivalence", self.check_scan_matrix),
                ("attention permutation equivariance", self.check_attention_equivariance),
                ("S6 order dependence (generic vs pointwise)", self.check_s6_order_dependence),
                ("S6 causality", self.check_s6_causality),
                ("S6 decay stability", self.check_s6_stability),
                ("S6 matrix strictly lower triangular", self.check_s6_lower_triangular),
                ("attention rows sum to 1", self.check_softmax_rows),
            ]),
            ("Serialization", [
                ("nimba replay and degenerate thresholds", self.check_nimba_replay),
                ("nimba isometry stability", self.check_nimba_isometry),
            ]),
            ("Geometry", [
                ("fps / knn against brute force", self.check_fps_knn),
                ("normalize idempotence", self.check_normalize_idempotent),
                ("rotation preserves distances", self.check_rotation_isometry),
                ("fps / knn isometry equivariance", self.check_fps_knn_isometry),
                ("generated shapes normalized and seeded", self.check_generated_shapes),
                ("OFF samples lie on their triangles", self.check_mesh_sampling),
            ]),
            ("Perturbations", [
                ("determinism and point counts", self.check_perturbations),
            ]),
            ("Model", [
                ("patch pooling invariance", self.check_patch_pooling),
                ("PE-off dead branch", self.check_pe_dead_branch),
                ("order sensitivity of the classifier", self.check_model_order_sensitivity),
                ("gradients against finite differences", self.check_gradients),
                ("training determinism", self.check_determinism),
            ]),
            ("Persistence", [
                ("checkpoint and XYZ round trips", self.check_round_trips),
            ]),
        ]


class CheckController:
    def __init__(self, console=None, metrics=None):
        self.console = console or Console()
        self.metrics = metrics or MetricsWriter(None, "check")

    def print_header(self, text):
        self.console.print(f"\n{'=' * 60}\n [bold]{text}[/bold]\n{'=' * 60}")

    def print_result(self, name, passed, details=""):
        status = "[green]✓ PASS[/green]" if passed else "[red]✗ FAIL[/red]"
        self.console.print(f"  \\[{status}] {name}")
        if details and not passed:
            self.console.print(f"        {details}", markup=False)

    def cmd_check(self, seed=0, corrupt_a_log=False):
        """Run every check; returns (all_passed, [(name, passed, details)])."""
        suite = CheckSuite(seed=seed, corrupt_a_log=corrupt_a_log)
        results = []
        for title, checks in suite.groups():
            self.print_header(title)
            for name, fn in checks:
                try:
                    passed, details = fn()
                except Exception as e:
                    log.debug("check %r raised", name, exc_info=True)
                    passed, details = False, f"raised {type(e).__name__}: {e}"
                self.print_result(name, passed, details)
                self.metrics.write("check", name=name, passed=bool(passed), details=details if not passed else "")
                results.append((name, bool(passed), details))

        failed = [name for name, passed, _ in results if not passed]
        self.print_header("Summary")
        self.console.print(f"  {len(results) - len(failed)}/{len(results)} checks passed")
        return not failed, results
