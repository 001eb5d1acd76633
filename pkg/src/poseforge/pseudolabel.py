"""Pseudo segmentation labels from probability maps and bounding boxes.

Label maps are ``uint8`` arrays holding :data:`BACKGROUND`,
:data:`FOREGROUND` or :data:`UNCERTAIN` per pixel.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidBBox, InvalidThreshold, LengthMismatch, NoCertainPixels, NonInvertibleTransform
from .geometry import BBox
from .metrics import mask_iou
from .selfsup import SimilarityTransform2D, hflip_transform, warp_field

BACKGROUND = 0
FOREGROUND = 1
UNCERTAIN = 2

# 8-bit PGM encoding of the three labels
PGM_VALUES = {BACKGROUND: 0, UNCERTAIN: 128, FOREGROUND: 255}

DEFAULT_SIGMA_CONF = 0.7
DEFAULT_ROUNDS = 5
DEFAULT_MAX_EXPAND = 0.15
DEFAULT_TTA_SCALES = (0.75, 1.0, 1.25)
PROB_CLAMP = 1e-7


def tta_transforms(shape, scales=DEFAULT_TTA_SCALES, flips=(False, True)):
    """``(transform, view_shape)`` pairs for multi-scale and left-right flip test-time views."""
    h, w = shape
    out = []
    for s in scales:
        vh, vw = max(1, int(round(s * h))), max(1, int(round(s * w)))
        base = SimilarityTransform2D(float(s))
        for flip in flips:
            T = base.then(hflip_transform(vw)) if flip else base
            out.append((T, (vh, vw)))
    return out


def merge_tta(prob_maps, transforms, shape=None):
    """Average test-time-augmented probability maps in the reference frame.

    ``prob_maps[i]`` was predicted on the image warped by ``transforms[i]``;
    each map is warped back by the inverse transform (bilinear) before the
    pixelwise mean.  ``shape`` defaults to the first map's shape.
    """
    if len(prob_maps) != len(transforms) or not prob_maps:
        raise LengthMismatch("need one transform per probability map")
    shape = tuple(shape) if shape is not None else np.shape(prob_maps[0])
    acc = np.zeros(shape)
    for p, T in zip(prob_maps, transforms):
        if not isinstance(T, SimilarityTransform2D) or not (np.isfinite(T.scale) and T.scale > 0):
            raise NonInvertibleTransform("TTA transforms must be invertible similarities")
        acc += warp_field(T.inverse(), p, shape)
    return acc / len(prob_maps)


def make_pseudo_labels(prob, bboxes, sigma_conf=DEFAULT_SIGMA_CONF):
    """Three-way labels from a foreground probability map.

    Outside every bbox a pixel is background whatever its probability.
    Inside, ``p >= sigma_conf`` is foreground, ``p <= 1 - sigma_conf``
    background, and anything strictly between is uncertain.
    """
    if not (0.5 < sigma_conf < 1.0):
        raise InvalidThreshold(f"sigma_conf must be in (0.5, 1), got {sigma_conf}")
    prob = np.asarray(prob, dtype=np.float64)
    inside = np.zeros(prob.shape, dtype=bool)
    for b in bboxes:
        if not isinstance(b, BBox):
            raise InvalidBBox("expected BBox instances")
        inside |= b.pixel_mask(prob.shape)
    labels = np.full(prob.shape, UNCERTAIN, dtype=np.uint8)
    labels[prob >= sigma_conf] = FOREGROUND
    labels[prob <= 1.0 - sigma_conf] = BACKGROUND
    labels[~inside] = BACKGROUND
    return labels


def labels_to_pgm(labels):
    lut = np.zeros(256, dtype=np.uint8)
    for k, v in PGM_VALUES.items():
        lut[k] = v
    return lut[labels]


def labels_from_pgm(img):
    out = np.full(img.shape, UNCERTAIN, dtype=np.uint8)
    out[img == 0] = BACKGROUND
    out[img == 255] = FOREGROUND
    return out


def seg_loss(pred_prob, labels):
    """Mean negative log-likelihood of the certain pseudo labels.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; uncertain pixels are
    left out of both the sum and the normalizing count.  Returns
    ``(loss, dloss/dpred_prob)``.
    """
    p = np.asarray(pred_prob, dtype=np.float64)
    labels = np.asarray(labels)
    if p.shape != labels.shape:
        raise DimensionMismatch(f"{p.shape} vs {labels.shape}")
    fg = labels == FOREGROUND
    bg = labels == BACKGROUND
    count = int(fg.sum() + bg.sum())
    if count == 0:
        raise NoCertainPixels("every pixel is uncertain")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = (-np.log(pc[fg]).sum() - np.log1p(-pc[bg]).sum()) / count
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = np.zeros_like(p)
    grad[fg] = -1.0 / (pc[fg] * count)
    grad[bg] = 1.0 / ((1.0 - pc[bg]) * count)
    grad[~inside] = 0.0
    return float(loss), grad


def perturb_bbox(tight: BBox, rng, max_expand=DEFAULT_MAX_EXPAND, image_size=None):
    """Loosen a tight box by random fractions of its width and height.

    Width and height grow independently by ``U[0, max_expand]`` of their
    size, each growth split at a uniform random point between the two sides.
    With ``image_size=(height, width)`` the result is clamped to the image.
    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    if not (0.0 <= max_expand <= 1.0):
        raise ValueError("max_expand must be in [0, 1]")
    if not isinstance(tight, BBox):
        raise InvalidBBox("expected a BBox")
    rng = np.random.default_rng(rng)
    fw, fh, sx, sy = rng.uniform(size=4)
    gw = fw * max_expand * tight.width
    gh = fh * max_expand * tight.height
    x0, x1 = tight.x_min - sx * gw, tight.x_max + (1.0 - sx) * gw
    y0, y1 = tight.y_min - sy * gh, tight.y_max + (1.0 - sy) * gh
    if image_size is not None:
        h, w = image_size
        x0, y0 = max(x0, min(0.0, tight.x_min)), max(y0, min(0.0, tight.y_min))
        x1, y1 = min(x1, max(float(w), tight.x_max)), min(y1, max(float(h), tight.y_max))
    return BBox(x0, y0, x1, y1)


@dataclass(frozen=True, eq=False)
class PseudoLabelRun:
    labels: list = field(default_factory=list)     # labels[round][image]
    iou: list = field(default_factory=list)        # iou[round][image]

    @property
    def mean_iou(self):
        return [float(np.mean(r)) for r in self.iou]

    def to_csv(self):
        lines = ["round,image,iou"]
        for r, row in enumerate(self.iou, start=1):
            for i, v in enumerate(row):
                lines.append(f"{r},{i},{v:.17g}")
        return "\n".join(lines) + "\n"


def _one_image(segmenter, rnd, gt_mask, bboxes, sigma_conf, views):
    maps = [segmenter(rnd, T, shape) for T, shape in views]
    merged = merge_tta(maps, [T for T, _ in views], gt_mask.shape)
    labels = make_pseudo_labels(merged, bboxes, sigma_conf)
    return labels, mask_iou(labels, gt_mask)


def iterate_pseudo_labels(segmenters, gt_masks, bboxes, rounds=DEFAULT_ROUNDS, sigma_conf=DEFAULT_SIGMA_CONF,
                          tta=None, threads=1):
    """Run ``rounds`` of pseudo-label generation over a set of images.

    ``segmenters[i](round, transform, view_shape)`` returns image ``i``'s
    foreground probability map seen through ``transform`` at round
    ``round`` (0-based); between rounds the caller's segmenter stands in for
    fine-tuning.  ``bboxes[i]`` is the list of boxes of image ``i``.  ``tta``
    is a list of ``(transform, view_shape)`` pairs per image shape, built by
    :func:`tta_transforms` when omitted.  Images within a round are processed
    on ``threads`` workers; results do not depend on the thread count.
    """
    if not (len(segmenters) == len(gt_masks) == len(bboxes)):
        raise LengthMismatch("need one segmenter, mask and bbox list per image")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    views = [tta if tta is not None else tta_transforms(np.shape(m)) for m in gt_masks]
    run = PseudoLabelRun()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for rnd in range(rounds):
            jobs = [pool.submit(_one_image, seg, rnd, np.asarray(m), bb, sigma_conf, v)
                    for seg, m, bb, v in zip(segmenters, gt_masks, bboxes, views)]
            results = [j.result() for j in jobs]
            run.labels.append([r[0] for r in results])
            run.iou.append([r[1] for r in results])
    return run
