"""Analytic gradients checked against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, project_jacobian, project_points, rotvec_derivatives, rotvec_to_matrix
from .keypoints import PredictionFields, keypoint_loss_syn, offset_loss_syn
from .pnp import epnp_solve, pnp_jacobian
from .render import dice_loss, render_silhouette
from .selfsup import SimilarityTransform2D, dual_scale_loss, normalize_transform
from .synth import gen_scene, stream

TOLERANCE_PROFILES = {
    "default": {"analytic": 1e-5, "soft_render": 5e-2, "pnp": 1e-3},
    "strict": {"analytic": 1e-7, "soft_render": 1e-2, "pnp": 1e-4},
}


@dataclass(frozen=True)
class GradCheck:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.rel_error < self.tolerance)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-300))


def central_difference(f, x, h):
    """Jacobian of ``f`` at ``x`` by central differences, shaped ``f(x).shape + x.shape``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        fp = np.asarray(f(x + e.reshape(x.shape)))
        fm = np.asarray(f(x - e.reshape(x.shape)))
        cols.append((fp - fm) / (2.0 * h))
    out = np.stack(cols, axis=-1)
    return out.reshape(out.shape[:-1] + x.shape)


def check_project_jacobian(fx, rng):
    pts = fx.mesh.vertices
    an = project_jacobian(fx.gt_pose, pts, fx.cam)
    fd = central_difference(lambda p: project_points(Pose.from_params(p), pts, fx.cam), fx.gt_pose.params, 1e-6)
    return relative_error(an, fd)


def check_rotvec_derivatives(fx, rng):
    r = rng.normal(size=3)
    fd = central_difference(rotvec_to_matrix, r, 1e-6)  # (3, 3, 3) indexed [row, col, k]
    return relative_error(rotvec_derivatives(r), np.moveaxis(fd, -1, 0))


def check_keypoint_loss(fx, rng):
    gt = fx.gt_keypoints2d
    scale = fx.object_scale
    pred = gt + rng.normal(scale=0.2 * scale, size=gt.shape)
    an = keypoint_loss_syn(pred, gt, scale)[1]
    # piecewise quadratic: central differences are exact away from the kinks, so a large step only cuts rounding
    fd = central_difference(lambda k: keypoint_loss_syn(k, gt, scale)[0], pred, 1e-4)
    return relative_error(an, fd)


def check_offset_loss(fx, rng):
    h, w, n = 10, 10, 4
    gt = rng.uniform(0, 10, size=(n, 2))
    mask = rng.uniform(size=(h, w)) < 0.6
    mask[5, 5] = True
    offsets = rng.normal(scale=3.0, size=(h, w, n, 2))
    att = rng.normal(size=(h, w, n))
    fg = mask.astype(float)

    def loss(o):
        return offset_loss_syn(PredictionFields(o, att, fg), gt, mask, 10.0)

    return relative_error(loss(offsets)[1], central_difference(lambda o: loss(o)[0], offsets, 1e-4))


def check_dice(fx, rng):
    shape = (12, 12)
    maps = {k: rng.uniform(size=shape) for k in ("pseudo", "rendered", "fg_prob")}
    _, grads = dice_loss(**maps)
    errs = []
    for k in maps:
        def f(x, k=k):
            return dice_loss(**{**maps, k: x})[0]
        errs.append(relative_error(grads[k], central_difference(f, maps[k], 1e-6)))
    return max(errs)


def check_soft_render(fx, rng, tau=1.0):
    cam = CameraIntrinsics(fx.cam.fx / 2, fx.cam.fy / 2, fx.cam.cx / 2, fx.cam.cy / 2,
                           fx.cam.width // 2, fx.cam.height // 2)
    _, an = render_silhouette(fx.gt_pose, fx.mesh, cam, tau, with_grad=True)
    fd = central_difference(lambda p: render_silhouette(Pose.from_params(p), fx.mesh, cam, tau),
                            fx.gt_pose.params, 1e-6)
    return relative_error(an, fd)


def unwrap_rotvec(r, ref):
    """The axis-angle vector equivalent to ``r`` that lies closest to ``ref``.

    Near a half turn the canonical vector jumps between ``r`` and a vector
    close to ``-r``; differences taken across that jump are meaningless.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta == 0.0:
        return r
    axis = r / theta
    cands = [r + 2.0 * np.pi * k * axis for k in (-1, 0, 1)]
    return min(cands, key=lambda c: np.linalg.norm(c - ref))


def check_pnp_jacobian(fx, rng, noise=1.0):
    k3d = fx.keypoints3d
    k2d = fx.gt_keypoints2d + rng.normal(scale=noise, size=fx.gt_keypoints2d.shape)
    sol = epnp_solve(k2d, k3d, fx.cam)
    an = pnp_jacobian(sol, k2d, k3d, fx.cam)
    r0 = sol.pose.params[:3]

    def solve(k):
        p = epnp_solve(k.reshape(-1, 2), k3d, fx.cam).pose.params
        return np.concatenate([unwrap_rotvec(p[:3], r0), p[3:]])

    return relative_error(an, central_difference(solve, k2d.ravel(), 1e-4))


def _dual_inputs(fx, rng):
    k = fx.gt_keypoints2d
    A = SimilarityTransform2D(1.1, (-3.0, 2.0), True, 0.2)
    N = normalize_transform(fx.tight_bbox)
    noisy = [k + rng.normal(scale=0.15 * fx.object_scale, size=k.shape) for _ in range(4)]
    k_orig_aug = A.apply(noisy[0])
    k_norm_aug = N.apply(A.apply(noisy[1]))
    k_orig = noisy[2]
    k_norm = N.apply(noisy[3])
    return [k_orig_aug, k_norm_aug, k_orig, k_norm], A, N


def _dual_check(fx, rng, mode, names, h):
    ks, A, N = _dual_inputs(fx, rng)
    idx = {"k_orig_aug": 0, "k_norm_aug": 1, "k_orig": 2, "k_norm": 3}

    def run(sets):
        return dual_scale_loss(*sets, A, N, fx.keypoints3d, fx.cam, fx.object_scale, mode=mode)

    res = run(ks)
    errs = []
    for name in names:
        i = idx[name]

        def f(x, i=i):
            sets = list(ks)
            sets[i] = x
            return run(sets).loss

        errs.append(relative_error(res.grads[name], central_difference(f, ks[i], h)))
    return max(errs)


def check_dual_detached(fx, rng):
    return _dual_check(fx, rng, "detached", ["k_orig_aug", "k_norm_aug"], 1e-6)


def check_dual_bpnp(fx, rng):
    # the solver stops at a relative precision that swamps smaller steps
    return _dual_check(fx, rng, "bpnp", ["k_orig", "k_norm"], 1e-3)


CHECKS = [
    ("project_jacobian", check_project_jacobian, "analytic"),
    ("rotvec_derivatives", check_rotvec_derivatives, "analytic"),
    ("keypoint_loss", check_keypoint_loss, "analytic"),
    ("offset_loss", check_offset_loss, "analytic"),
    ("dice", check_dice, "analytic"),
    ("dual_scale_detached", check_dual_detached, "analytic"),
    ("soft_render_tau1", check_soft_render, "soft_render"),
    ("pnp_jacobian", check_pnp_jacobian, "pnp"),
    ("dual_scale_bpnp", check_dual_bpnp, "pnp"),
]


def run_gradchecks(seeds=(0, 1, 2), profile="default", shape="cube"):
    """Worst relative error of every check over the fixtures built from ``seeds``."""
    tol = TOLERANCE_PROFILES[profile]
    worst = {name: 0.0 for name, _, _ in CHECKS}
    for seed in seeds:
        fx = gen_scene(shape, seed)
        for name, fn, _ in CHECKS:
            worst[name] = max(worst[name], fn(fx, stream(seed, f"gradcheck/{name}")))
    return [GradCheck(name, worst[name], tol[kind]) for name, _, kind in CHECKS]
