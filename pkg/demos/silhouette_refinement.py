"""Recover a perturbed pose by aligning the soft silhouette with a mask.

Run: python3 demos/silhouette_refinement.py
"""

import numpy as np

from poseforge import gen_scene, refine_pose_vsa, render_silhouette
from poseforge.geometry import geodesic_angle
from poseforge.cli import perturb_pose
from poseforge.metrics import mask_iou

fx = gen_scene("cube", seed=11)
init = perturb_pose(fx.gt_pose, np.random.default_rng(1), rotation_deg=5.0, translation_frac=0.05)


def errors(pose):
    rot = np.rad2deg(geodesic_angle(pose.rotation, fx.gt_pose.rotation))
    return rot, 100 * np.linalg.norm(pose.translation - fx.gt_pose.translation) / fx.gt_pose.translation[2]


print("init:    %.2f deg, %.2f%% of depth" % errors(init))
before = render_silhouette(init, fx.mesh, fx.cam, 0.05)
print(f"         silhouette IoU {mask_iou(before > 0.5, fx.gt_mask):.3f}")

# Fully visible object: the foreground probability is one everywhere.
res = refine_pose_vsa(init, fx.gt_mask, np.ones(fx.cam.shape), fx.mesh, fx.cam, steps=200)
print("refined: %.2f deg, %.2f%% of depth" % errors(res.pose))
after = render_silhouette(res.pose, fx.mesh, fx.cam, 0.05)
print(f"         silhouette IoU {mask_iou(after > 0.5, fx.gt_mask):.3f} after {res.steps} steps")

for step, loss, _ in res.trace[:: max(1, len(res.trace) // 8)]:
    print(f"  step {step:3d}  Dice loss {loss:.5f}")

# Hide the left half of the mask from the loss: the visible half still pins the pose.
fg = np.ones(fx.cam.shape)
fg[:, : fx.cam.width // 2] = 0.0
occluded = refine_pose_vsa(init, fx.gt_mask, fg, fx.mesh, fx.cam, steps=200)
print("occluded: %.2f deg, %.2f%% of depth" % errors(occluded.pose))
