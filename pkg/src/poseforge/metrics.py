"""Pose and mask evaluation metrics: ADD, ADD-S, diameter, recall and IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import DimensionMismatch, EmptyModel, TooFewPoints
from .geometry import Pose

DEFAULT_RECALL_FRACTION = 0.1


def _model(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("model has no points")
    return pts


def _dist(a, b):
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def add_score(pred: Pose, gt: Pose, model_points):
    """Mean distance between corresponding model points under the two poses."""
    pts = _model(model_points)
    return float(np.mean(_dist(pred.transform(pts), gt.transform(pts))))


def _nearest_brute(query, ref, chunk=1024):
    out = np.empty(len(query))
    for s in range(0, len(query), chunk):
        out[s:s + chunk] = _dist(query[s:s + chunk, None, :], ref[None, :, :]).min(axis=1)
    return out


def _nearest_kdtree(query, ref, k=4):
    # candidates from the tree, distances recomputed with the brute-force formula
    k = min(k, len(ref))
    tree = cKDTree(ref)
    _, idx = tree.query(query, k=k)
    idx = np.asarray(idx).reshape(len(query), k)
    d = _dist(query[:, None, :], ref[idx])
    best = d.min(axis=1)
    # fall back to brute force wherever a near-tie could hide a closer point
    rad = best * (1 + 1e-9) + 1e-300
    cnt = np.array([len(r) for r in tree.query_ball_point(query, rad)])
    redo = cnt > k
    if redo.any():
        best[redo] = _nearest_brute(query[redo], ref)
    return best


def adds_score(pred: Pose, gt: Pose, model_points, method="brute"):
    """Mean over gt-posed points of the distance to the closest pred-posed point.

    ``method="kdtree"`` accelerates the search and returns the identical value.
    """
    pts = _model(model_points)
    q = gt.transform(pts)
    ref = pred.transform(pts)
    if method == "brute":
        d = _nearest_brute(q, ref)
    elif method == "kdtree":
        d = _nearest_kdtree(q, ref)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.mean(d))


def diameter(model_points, method="hull"):
    """Largest pairwise distance between model points.

    ``method="hull"`` restricts the search to convex-hull vertices (which
    always contain a farthest pair); ``"brute"`` checks every pair.
    """
    pts = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise TooFewPoints("diameter needs at least two points")
    if method == "hull" and len(pts) > 8:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat or degenerate clouds: use every point
    elif method not in ("hull", "brute"):
        raise ValueError(f"unknown method {method!r}")
    best = 0.0
    for s in range(0, len(pts), 512):
        best = max(best, float(_dist(pts[s:s + 512, None, :], pts[None, :, :]).max()))
    return best


def sample_surface(mesh, n, seed=0):
    """``n`` points drawn uniformly by area from the mesh surface."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    tri = mesh.vertices[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    face = rng.choice(len(tri), size=n, p=area / area.sum())
    u, v = rng.uniform(size=(2, n))
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    t = tri[face]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def add_recall(distances, diam, threshold_fraction=DEFAULT_RECALL_FRACTION):
    """Fraction of samples with distance strictly below ``threshold_fraction * diam``."""
    if not diam > 0:
        raise ValueError("diameter must be positive")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return 0.0
    return float(np.mean(d < threshold_fraction * diam))


def mask_iou(a, b, uncertain=2):
    """Intersection over union of two binary masks.

    Integer label maps may mark pixels with ``uncertain``; those pixels are
    excluded from both the intersection and the union.  Two empty masks
    give 1.0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    valid = np.ones(a.shape, dtype=bool)
    for m in (a, b):
        if np.issubdtype(m.dtype, np.integer):
            valid &= m != uncertain
    fa = (a != 0) & valid
    fb = (b != 0) & valid
    union = np.count_nonzero(fa | fb)
    if union == 0:
        return 1.0
    return np.count_nonzero(fa & fb) / union


@dataclass(frozen=True, eq=False)
class MetricReport:
    distances: np.ndarray
    recall: float
    diameter: float
    symmetric: bool
    threshold_fraction: float = DEFAULT_RECALL_FRACTION

    def to_csv(self):
        kind = "adds" if self.symmetric else "add"
        lines = [f"sample,{kind},correct"]
        thr = self.threshold_fraction * self.diameter
        for i, d in enumerate(self.distances):
            lines.append(f"{i},{d:.17g},{int(d < thr)}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"metric": "ADD-S" if self.symmetric else "ADD", "samples": int(len(self.distances)),
                "recall": self.recall, "diameter": self.diameter, "threshold_fraction": self.threshold_fraction,
                "mean_distance": float(np.mean(self.distances)) if len(self.distances) else None}


def evaluate_poses(preds, gts, model_points, symmetric=False, threshold_fraction=DEFAULT_RECALL_FRACTION):
    """ADD (or ADD-S for symmetric objects) for each pose pair plus recall."""
    if len(preds) != len(gts):
        raise DimensionMismatch("need one ground-truth pose per prediction")
    score = adds_score if symmetric else add_score
    dist = np.array([score(p, g, model_points) for p, g in zip(preds, gts)])
    diam = diameter(model_points)
    return MetricReport(dist, add_recall(dist, diam, threshold_fraction), diam, symmetric, threshold_fraction)
