"""Solve PnP on a synthetic scene, then check how the pose moves with the keypoints.

Run: python3 demos/pnp_and_backprop.py
"""

import numpy as np

from poseforge import epnp_solve, gen_scene, pnp_jacobian
from poseforge.geometry import geodesic_angle
from poseforge.gradcheck import central_difference, relative_error, unwrap_rotvec

fx = gen_scene("random-convex", seed=3)
print(f"scene: {fx.shape}, {len(fx.keypoints3d)} keypoints, depth {fx.gt_pose.translation[2]:.3f}")

# Exact keypoints recover the pose to machine precision.
sol = epnp_solve(fx.gt_keypoints2d, fx.keypoints3d, fx.cam)
print(f"noise-free: rotation error {geodesic_angle(sol.pose.rotation, fx.gt_pose.rotation):.2e} rad, "
      f"translation error {np.linalg.norm(sol.pose.translation - fx.gt_pose.translation):.2e}")

# With a pixel of noise the solve is a least-squares fit with nonzero residual.
rng = np.random.default_rng(0)
noisy = fx.gt_keypoints2d + rng.normal(scale=1.0, size=fx.gt_keypoints2d.shape)
sol = epnp_solve(noisy, fx.keypoints3d, fx.cam)
print(f"1 px noise: rms {sol.reprojection_rms:.3f} px, rotation error "
      f"{np.rad2deg(geodesic_angle(sol.pose.rotation, fx.gt_pose.rotation)):.3f} deg, case {sol.case}")

# The implicit-function Jacobian d(pose)/d(keypoints) against re-solving.
J = pnp_jacobian(sol, noisy, fx.keypoints3d, fx.cam)
r0 = sol.pose.params[:3]


def resolve(k):
    p = epnp_solve(k.reshape(-1, 2), fx.keypoints3d, fx.cam).pose.params
    return np.concatenate([unwrap_rotvec(p[:3], r0), p[3:]])


fd = central_difference(resolve, noisy.ravel(), 1e-4)
print(f"Jacobian {J.shape}: relative error vs re-solve differences {relative_error(J, fd):.2e}")

# The most influential keypoint for depth.
k = int(np.argmax(np.abs(J[5]).reshape(-1, 2).sum(axis=1)))
print(f"keypoint {k} moves the depth most: dtz/du = {J[5, 2 * k]:+.4f}, dtz/dv = {J[5, 2 * k + 1]:+.4f}")
