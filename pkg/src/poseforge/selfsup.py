"""Scale normalization, augmentation transforms and self-supervised pose objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidBBox, MeshBehindCamera, LengthMismatch, NoOverlap, NonFiniteTerm
from .geometry import BBox, CameraIntrinsics, Pose, TriMesh, pixel_centers, project_jacobian, project_points
from .keypoints import DEFAULT_SIGMA_SCALE, smooth_l1, smooth_l1_grad
from .pnp import epnp_solve, pnp_jacobian
from .render import DICE_EPS, dice_loss, render_silhouette

DEFAULT_NORMALIZED_SIZE = 64


@dataclass(frozen=True)
class SimilarityTransform2D:
    """``x -> scale * Rot(angle) * Flip * x + offset`` on continuous pixel coordinates.

    ``Flip`` mirrors the x axis (``x -> -x``); a left-right image flip of
    width ``W`` is ``flip=True, offset=(W, 0)``.
    """

    scale: float = 1.0
    offset: tuple = (0.0, 0.0)
    flip: bool = False
    angle: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be positive and finite")
        object.__setattr__(self, "offset", (float(self.offset[0]), float(self.offset[1])))

    @property
    def linear(self):
        c, s = math.cos(self.angle), math.sin(self.angle)
        A = self.scale * np.array([[c, -s], [s, c]])
        if self.flip:
            A = A @ np.diag([-1.0, 1.0])
        return A

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + np.asarray(self.offset)

    def inverse(self) -> SimilarityTransform2D:
        # (s R(a))^-1 = R(-a) / s; with the flip, (s R(a) F)^-1 = F R(-a) / s = R(a) F / s
        angle = self.angle if self.flip else -self.angle
        inv = SimilarityTransform2D(1.0 / self.scale, (0.0, 0.0), self.flip, angle)
        off = -inv.apply(np.asarray(self.offset)[None])[0]
        return SimilarityTransform2D(inv.scale, tuple(off), self.flip, angle)

    def then(self, other: SimilarityTransform2D) -> SimilarityTransform2D:
        """Composite transform applying ``self`` first and ``other`` second."""
        A = other.linear @ self.linear
        flip = self.flip != other.flip
        scale = other.scale * self.scale
        R = A @ np.diag([-1.0, 1.0]) if flip else A
        angle = math.atan2(R[1, 0], R[0, 0])
        offset = other.apply(np.asarray(self.offset)[None])[0]
        return SimilarityTransform2D(scale, tuple(offset), flip, angle)


def hflip_transform(width):
    return SimilarityTransform2D(1.0, (float(width), 0.0), True)


def scale_transform(scale):
    return SimilarityTransform2D(float(scale))


def normalize_transform(bbox: BBox, target=DEFAULT_NORMALIZED_SIZE) -> SimilarityTransform2D:
    """Crop-and-resize mapping ``bbox`` into ``[0, target]^2``.

    The longest side is scaled to ``target``; the short side is centered.
    """
    if not isinstance(bbox, BBox):
        raise InvalidBBox("expected a BBox")
    if target < 8:
        raise ValueError("normalized size must be at least 8 pixels")
    s = target / bbox.longest_side
    cx = 0.5 * (bbox.x_min + bbox.x_max)
    cy = 0.5 * (bbox.y_min + bbox.y_max)
    return SimilarityTransform2D(s, (0.5 * target - s * cx, 0.5 * target - s * cy))


def warp_field(T: SimilarityTransform2D, field, out_shape):
    """Resample an image-like field into the frame produced by ``T``.

    Output pixel ``q`` takes the bilinear sample of ``field`` at ``T^-1(q)``;
    samples beyond the border are clamped to the edge.  Trailing axes
    beyond (H, W) are treated as channels.
    """
    src = np.asarray(field, dtype=np.float64)
    xs, ys = pixel_centers(out_shape)
    back = T.inverse().apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    coords = np.stack([back[:, 1] - 0.5, back[:, 0] - 0.5])
    flat = src.reshape(src.shape[:2] + (-1,))
    out = np.empty((coords.shape[1], flat.shape[2]))
    for c in range(flat.shape[2]):
        out[:, c] = ndimage.map_coordinates(flat[:, :, c], coords, order=1, mode="nearest")
    return out.reshape(tuple(out_shape) + src.shape[2:])


def apply_transform(T: SimilarityTransform2D, x, out_shape=None):
    """Map keypoints ``(N, 2)`` exactly, or resample a field when ``out_shape`` is given."""
    if out_shape is None:
        return T.apply(x)
    return warp_field(T, x, out_shape)


def ensemble_keypoints(k_orig, k_norm, N: SimilarityTransform2D):
    """Midpoint of the original-scale keypoints and the normalized ones mapped back."""
    k_orig = np.asarray(k_orig, dtype=np.float64)
    back = N.inverse().apply(k_norm)
    if k_orig.shape != back.shape:
        raise LengthMismatch(f"{k_orig.shape} vs {back.shape}")
    return 0.5 * (k_orig + back)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError("loss weights must be finite and non-negative")


@dataclass(frozen=True, eq=False)
class DualScaleResult:
    loss: float
    target: np.ndarray
    grads: dict
    mode: str


def dual_scale_loss(k_orig_aug, k_norm_aug, k_orig, k_norm, A: SimilarityTransform2D, N: SimilarityTransform2D,
                    k3d, cam: CameraIntrinsics, scale, sigma_scale=DEFAULT_SIGMA_SCALE, mode="detached"):
    """Dual-scale keypoint consistency loss.

    ``k_orig`` / ``k_norm`` are predictions on the original image and its
    normalized crop; ``k_orig_aug`` / ``k_norm_aug`` the same for the
    augmented image, where the normalized branch sees ``N(A(x))``
    (augment first, then normalize).  The target is the PnP reprojection of
    the two-scale ensemble; both augmented branches are pulled towards it.

    ``mode="detached"`` treats the target as a constant; ``mode="bpnp"``
    also back-propagates through the PnP solve into ``k_orig`` and
    ``k_norm``.
    """
    sets = [np.asarray(k, dtype=np.float64) for k in (k_orig_aug, k_norm_aug, k_orig, k_norm)]
    if len({k.shape for k in sets}) != 1 or sets[0].shape != (len(k3d), 2):
        raise LengthMismatch("all keypoint sets must be (N, 2) with N matching k3d")
    if mode not in ("detached", "bpnp"):
        raise ValueError(f"unknown gradient mode {mode!r}")
    k_orig_aug, k_norm_aug, k_orig, k_norm = sets
    Ainv = A.inverse()
    Ninv = N.inverse()
    avg = ensemble_keypoints(k_orig, k_norm, N)
    sol = epnp_solve(avg, k3d, cam)
    target = project_points(sol.pose, k3d, cam)
    norm = sigma_scale * scale
    branch_orig = Ainv.apply(k_orig_aug)
    branch_norm = Ainv.apply(Ninv.apply(k_norm_aug))
    x1 = (branch_orig - target) / norm
    x2 = (branch_norm - target) / norm
    loss = float(smooth_l1(x1).sum() + smooth_l1(x2).sum())
    g1 = smooth_l1_grad(x1) / norm
    g2 = smooth_l1_grad(x2) / norm
    # row-vector chain rule through linear maps: dL/dk = dL/dk' @ A_lin
    grads = {
        "k_orig_aug": g1 @ Ainv.linear,
        "k_norm_aug": g2 @ (Ainv.linear @ Ninv.linear),
        "k_orig": np.zeros_like(k_orig),
        "k_norm": np.zeros_like(k_norm),
    }
    if mode == "bpnp":
        dtarget = -(g1 + g2).reshape(-1)
        dpose = pnp_jacobian(sol, avg, k3d, cam)  # (6, 2N)
        Jp = project_jacobian(sol.pose, k3d, cam).reshape(-1, 6)
        davg = (dtarget @ Jp @ dpose).reshape(-1, 2)
        grads["k_orig"] = 0.5 * davg
        grads["k_norm"] = 0.5 * davg @ Ninv.linear
    return DualScaleResult(loss, target, grads, mode)


def _total(term, name):
    vals = np.atleast_1d(np.asarray(term, dtype=np.float64))
    if not np.all(np.isfinite(vals)):
        raise NonFiniteTerm(f"{name} is not finite")
    return float(vals.sum())


def total_self_loss(key_syn, off_syn, dual, align, weights: LossWeights = LossWeights()):
    """Weighted self-supervision objective.

    Each term may be a scalar or a sequence of per-scale values (the
    synthetic and alignment terms are typically given for both scales);
    sequences are summed.
    """
    return (_total(key_syn, "keypoint loss") + _total(off_syn, "offset loss")
            + weights.lambda1 * _total(dual, "dual-scale loss")
            + weights.lambda2 * _total(align, "alignment loss"))


@dataclass(frozen=True, eq=False)
class VSAResult:
    pose: Pose
    loss: float
    trace: list = field(default_factory=list)
    steps: int = 0


def silhouette_alignment(pose, pseudo, fg_prob, mesh, cam, tau, with_grad=True):
    """Dice loss of the visible rendered silhouette, its pose gradient and metric.

    The metric is ``G^T G / den`` for ``G`` the per-pixel derivative of the
    visible silhouette w.r.t. the pose params and ``den`` the Dice
    denominator; per-pixel Dice slopes are about ``+-1/den``, so the metric
    puts a unit step on the scale of a Gauss-Newton step on the pixel
    residual.
    """
    if with_grad:
        rendered, drender = render_silhouette(pose, mesh, cam, tau, with_grad=True)
    else:
        rendered = render_silhouette(pose, mesh, cam, tau)
    loss, grads = dice_loss(pseudo, rendered, fg_prob)
    if not with_grad:
        return loss
    fg = np.asarray(fg_prob, dtype=np.float64)
    G = (drender * fg[..., None]).reshape(-1, 6)
    den = np.sum(pseudo) + np.sum(rendered * fg) + DICE_EPS
    return loss, np.einsum("hw,hwk->k", grads["rendered"], drender), G.T @ G / den


def pixel_sensitivity(pose, mesh, cam):
    """RMS image motion (pixels) of the mesh vertices per unit of each pose param."""
    J = project_jacobian(pose, mesh.vertices, cam)
    return np.sqrt(np.mean(np.sum(J * J, axis=1), axis=0))


def refine_pose_vsa(init: Pose, pseudo, fg_prob, mesh: TriMesh, cam: CameraIntrinsics,
                    steps=200, step_size=1.0, tau=0.05, max_halvings=20, grad_tol=1e-12,
                    preconditioner="gram"):
    """Refine a pose by preconditioned gradient descent on the silhouette Dice loss.

    The descent direction is ``-P^-1 grad``.  With ``preconditioner="gram"``
    ``P`` is the Gram matrix of the visible-silhouette pose derivatives
    (lightly damped), which makes ``step_size=1`` a natural full step; with
    ``"diagonal"`` it is the squared vertex pixel motion per coordinate at
    ``init``.  A trial step is halved (up to ``max_halvings`` times) until
    the loss decreases; only accepted steps enter the trace, which is
    therefore non-increasing.  The trace holds ``(step, loss, params)``
    tuples, starting with step 0 at ``init``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if preconditioner not in ("gram", "diagonal"):
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    loss, grad, gram = silhouette_alignment(init, pseudo, fg_prob, mesh, cam, tau)
    if not loss < 1.0 - 1e-6:
        raise NoOverlap("initial silhouette does not overlap the pseudo label")
    diag = pixel_sensitivity(init, mesh, cam) ** 2
    pose = init
    trace = [(0, loss, init.params.copy())]
    alpha = step_size
    done = 0
    for it in range(1, steps + 1):
        if preconditioner == "gram":
            P = gram + 1e-6 * np.trace(gram) / 6.0 * np.eye(6) + 1e-12 * np.diag(diag)
        else:
            P = np.diag(diag)
        direction = -np.linalg.solve(P, grad)
        if -(grad @ direction) < grad_tol * max(loss, 1e-300):
            break
        accepted = False
        for _ in range(max_halvings + 1):
            trial = Pose.from_params(pose.params + alpha * direction)
            try:
                tloss, tgrad, tgram = silhouette_alignment(trial, pseudo, fg_prob, mesh, cam, tau)
            except MeshBehindCamera:
                tloss = np.inf
            if tloss < loss:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        pose, loss, grad, gram = trial, tloss, tgrad, tgram
        trace.append((it, loss, pose.params.copy()))
        done = it
        alpha = min(2.0 * alpha, step_size)
    return VSAResult(pose, loss, trace, done)
