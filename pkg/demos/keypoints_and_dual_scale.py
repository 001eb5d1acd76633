"""Vote keypoints from noisy dense fields and score them with the dual-scale consistency loss.

Run: python3 demos/keypoints_and_dual_scale.py
"""

import numpy as np

from poseforge import aggregate_keypoints, dual_scale_loss, gen_scene
from poseforge.selfsup import SimilarityTransform2D, normalize_transform
from poseforge.synth import gen_prediction_fields

fx = gen_scene("cube", seed=5)
for sigma in (0.0, 1.0, 4.0):
    fields = gen_prediction_fields(fx, offset_sigma=sigma, attention_sigma=0.1 * sigma)
    k = aggregate_keypoints(fields, fx.gt_mask)
    err = np.linalg.norm(k - fx.gt_keypoints2d, axis=1)
    print(f"offset noise {sigma:.1f} px -> mean keypoint error {err.mean():.4f} px over {int(fx.gt_mask.sum())} votes")

# Two views of the same image: the original and its normalized crop, each also augmented by A.
N = normalize_transform(fx.tight_bbox)
A = SimilarityTransform2D(1.1, (-4.0, 2.0), True, 0.15)
kp = fx.gt_keypoints2d
args = (A, N, fx.keypoints3d, fx.cam, fx.object_scale)
print(f"consistent predictions: loss {dual_scale_loss(A.apply(kp), N.apply(A.apply(kp)), kp, N.apply(kp), *args).loss:.2e}")

rng = np.random.default_rng(0)
for px in (0.5, 2.0, 8.0):
    drift = kp + rng.normal(scale=px, size=kp.shape)
    res = dual_scale_loss(A.apply(drift), N.apply(A.apply(drift)), kp, N.apply(kp), *args)
    print(f"augmented branch drifts {px:.1f} px: loss {res.loss:.3f}, "
          f"gradient norm {np.linalg.norm(res.grads['k_orig_aug']):.3f}")
