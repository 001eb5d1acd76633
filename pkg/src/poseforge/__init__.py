"""Self-supervised 6DoF pose building blocks on numpy and scipy.

Geometry and projection, attention-weighted keypoint regression, EPnP with
implicit Jacobians, a soft silhouette rasterizer, dual-scale and silhouette
alignment objectives, pseudo segmentation labels, pose metrics and a
deterministic synthetic-scene generator.
"""

from .errors import PoseForgeError
from .geometry import BBox, CameraIntrinsics, Pose, TriMesh, project_jacobian, project_points
from .keypoints import PredictionFields, aggregate_keypoints, fps_sample, keypoint_loss_syn, offset_loss_syn
from .metrics import add_recall, add_score, adds_score, diameter, evaluate_poses, mask_iou
from .pnp import PnPSolution, epnp_solve, pnp_jacobian, refine_pose, reproject
from .pseudolabel import iterate_pseudo_labels, make_pseudo_labels, merge_tta, perturb_bbox, seg_loss
from .render import dice_loss, hard_silhouette, render_silhouette, visible_mask
from .selfsup import (LossWeights, SimilarityTransform2D, dual_scale_loss, ensemble_keypoints, normalize_transform,
                      refine_pose_vsa, total_self_loss)
from .synth import SceneFixture, gen_noisy_segmenter, gen_prediction_fields, gen_scene

__version__ = "0.1.0"
