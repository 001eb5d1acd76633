"""Keypoint selection, attention-weighted keypoint regression and synthetic losses."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyForeground, LengthMismatch, TooFewPoints
from .geometry import pixel_centers
from . import io as pio

DEFAULT_SIGMA_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class PredictionFields:
    """Per-pixel predictions for ``N`` keypoints on an ``(H, W)`` image.

    offsets:   (H, W, N, 2) pixel offsets from each pixel center to each keypoint
    attention: (H, W, N) attention logits
    fg_prob:   (H, W) foreground probability
    """

    offsets: np.ndarray
    attention: np.ndarray
    fg_prob: np.ndarray

    def __post_init__(self):
        h, w = self.fg_prob.shape
        n = self.offsets.shape[2]
        if self.offsets.shape != (h, w, n, 2) or self.attention.shape != (h, w, n):
            raise DimensionMismatch("prediction fields must share (height, width) and keypoint count")
        if np.any((self.fg_prob < 0) | (self.fg_prob > 1)):
            raise ValueError("fg_prob must lie in [0, 1]")
        if not np.all(np.isfinite(self.attention)):
            raise ValueError("attention logits must be finite")

    @property
    def height(self):
        return self.fg_prob.shape[0]

    @property
    def width(self):
        return self.fg_prob.shape[1]

    @property
    def num_keypoints(self):
        return self.offsets.shape[2]

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        pio.save_tensor(d / "offsets.npy", self.offsets)
        pio.save_tensor(d / "attention.npy", self.attention)
        pio.save_tensor(d / "fg_prob.npy", self.fg_prob)
        pio.write_json(d / "fields.json", {
            "type": "prediction_fields",
            "height": self.height, "width": self.width, "num_keypoints": self.num_keypoints,
            "arrays": {"offsets": "offsets.npy", "attention": "attention.npy", "fg_prob": "fg_prob.npy"},
        })

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = pio.read_json(d / "fields.json")
        arrays = {k: pio.load_tensor(d / v) for k, v in meta["arrays"].items()}
        return cls(**arrays)


def fps_sample(points, n, seed_index=None):
    """Farthest point sampling.

    Starts from ``seed_index`` (default: the point farthest from the
    centroid) and greedily adds the point maximizing the minimum distance to
    the selection; ties go to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if n < 1 or n > len(pts):
        raise TooFewPoints(f"cannot select {n} of {len(pts)} points")
    if seed_index is None:
        seed_index = int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    selected = [int(seed_index)]
    mind = np.linalg.norm(pts - pts[seed_index], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(mind))  # argmax returns the first maximum
        selected.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(selected, dtype=np.int64)


def _mask_pixels(fg_mask, shape):
    mask = np.asarray(fg_mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionMismatch(f"mask shape {mask.shape} != field shape {shape}")
    if not mask.any():
        raise EmptyForeground("foreground mask is empty")
    return mask


def per_pixel_predictions(fields: PredictionFields, fg_mask):
    """``(M, N, 2)`` array of ``p_m + offset_nm`` for the M masked pixels, row-major order."""
    mask = _mask_pixels(fg_mask, fields.fg_prob.shape)
    xs, ys = pixel_centers(mask.shape)
    p = np.stack([xs[mask], ys[mask]], axis=1)
    return p[:, None, :] + fields.offsets[mask]


def aggregate_keypoints(fields: PredictionFields, fg_mask):
    """Attention-weighted average of per-pixel keypoint votes over ``fg_mask``.

    For each keypoint n the weights are a softmax of the attention logits
    over the masked pixels only; logits elsewhere are ignored.
    """
    mask = _mask_pixels(fg_mask, fields.fg_prob.shape)
    votes = per_pixel_predictions(fields, mask)
    logits = fields.attention[mask]
    w = np.exp(logits - logits.max(axis=0))
    w /= w.sum(axis=0)
    return np.einsum("mn,mnc->nc", w, votes)


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def keypoint_loss_syn(pred, gt, scale, sigma_scale=DEFAULT_SIGMA_SCALE):
    """Smooth-L1 keypoint loss with residuals normalized by ``sigma_scale * scale``.

    ``scale`` is the object scale in pixels (longest bbox side).
    Returns ``(loss, dloss/dpred)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.shape} vs {gt.shape}")
    if not (sigma_scale > 0 and scale > 0):
        raise ValueError("sigma_scale and scale must be positive")
    norm = sigma_scale * scale
    x = (pred - gt) / norm
    return float(smooth_l1(x).sum()), smooth_l1_grad(x) / norm


def offset_loss_syn(fields: PredictionFields, gt, fg_mask, scale, sigma_scale=DEFAULT_SIGMA_SCALE):
    """Smooth-L1 loss on every masked pixel's own keypoint vote.

    Returns ``(loss, dloss/doffsets)`` with the gradient shaped like
    ``fields.offsets`` (zero outside the mask).
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != (fields.num_keypoints, 2):
        raise LengthMismatch(f"expected {fields.num_keypoints} keypoints, got {gt.shape}")
    mask = _mask_pixels(fg_mask, fields.fg_prob.shape)
    votes = per_pixel_predictions(fields, mask)
    norm = sigma_scale * scale
    x = (votes - gt[None]) / norm
    grad = np.zeros_like(fields.offsets)
    grad[mask] = smooth_l1_grad(x) / norm
    return float(smooth_l1(x).sum()), grad
