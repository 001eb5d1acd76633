"""Iterate pseudo segmentation labels with a segmenter that improves each round.

Run: python3 demos/pseudo_label_rounds.py
"""

import numpy as np

from poseforge import gen_scene
from poseforge.pseudolabel import UNCERTAIN, iterate_pseudo_labels, perturb_bbox
from poseforge.synth import DEFAULT_SEGMENTER_SCHEDULE, gen_noisy_segmenter

scenes = [gen_scene("cube", s) for s in range(8)]
# loose boxes, as a human annotator might draw them
boxes = [[perturb_bbox(fx.tight_bbox, fx.seed, image_size=fx.cam.shape)] for fx in scenes]
segmenters = [gen_noisy_segmenter(fx, DEFAULT_SEGMENTER_SCHEDULE) for fx in scenes]

run = iterate_pseudo_labels(segmenters, [fx.gt_mask for fx in scenes], boxes, rounds=5, threads=4)
print("noise level per round:", DEFAULT_SEGMENTER_SCHEDULE)
for r, (iou, labels) in enumerate(zip(run.mean_iou, run.labels), start=1):
    unc = np.mean([np.mean(lab == UNCERTAIN) for lab in labels])
    print(f"round {r}: mean IoU {iou:.3f}, uncertain pixels {100 * unc:.1f}%")

worst = int(np.argmin(run.iou[-1]))
print(f"hardest image after the last round: #{worst} with IoU {run.iou[-1][worst]:.3f}")
