"""Deterministic synthetic scenes, prediction fields and noisy segmenters.

Every random quantity is drawn from its own named stream derived from the
fixture seed, so adding a new draw never shifts existing fixtures.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from . import io as pio
from .errors import GenerationFailure, ScheduleTooShort
from .geometry import BBox, CameraIntrinsics, Pose, TriMesh, pixel_centers, project_points
from .keypoints import PredictionFields, fps_sample
from .render import hard_silhouette
from .selfsup import SimilarityTransform2D, warp_field

DEFAULT_CAMERA = CameraIntrinsics(200.0, 200.0, 64.0, 64.0, 128, 128)
DEFAULT_DEPTH_RANGE = (3.0, 5.0)
DEFAULT_NUM_KEYPOINTS = 8
DEFAULT_SEGMENTER_SCHEDULE = (3.0, 2.4, 1.8, 1.3, 0.9)
DEFAULT_NOISE_CORRELATION = 4.0
SHAPES = ("cube", "icosphere", "random-convex")


def stream(seed, name):
    """Independent generator for the named operation of fixture ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def make_cube(size=1.0):
    h = 0.5 * size
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # vertex index = 4*ix + 2*iy + iz; faces wound counter-clockwise seen from outside
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return TriMesh(v, f)


def make_icosphere(radius=0.5, subdivisions=3):
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            k = (min(a, b), max(a, b))
            if k not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[k] = len(verts) - 1
            return cache[k]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriMesh(radius * np.array(verts), f)


def make_random_convex(rng, n_points=24, radius=0.5):
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = d * rng.uniform(0.7 * radius, radius, size=(n_points, 1))
    hull = ConvexHull(pts)
    used = np.unique(hull.simplices)
    remap = -np.ones(n_points, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    faces = remap[hull.simplices]
    center = verts.mean(axis=0)
    for i, (a, b, c) in enumerate(faces):
        nrm = np.cross(verts[b] - verts[a], verts[c] - verts[a])
        if nrm @ (verts[a] - center) < 0:
            faces[i] = [a, c, b]
    return TriMesh(verts, faces)


def make_mesh(shape, rng=None):
    if shape == "cube":
        return make_cube()
    if shape == "icosphere":
        return make_icosphere()
    if shape == "random-convex":
        return make_random_convex(rng)
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


@dataclass(frozen=True, eq=False)
class SceneFixture:
    shape: str
    seed: int
    mesh: TriMesh
    gt_pose: Pose
    cam: CameraIntrinsics
    keypoints3d: np.ndarray
    gt_keypoints2d: np.ndarray
    gt_mask: np.ndarray
    tight_bbox: BBox

    def __post_init__(self):
        proj = project_points(self.gt_pose, self.keypoints3d, self.cam)
        if not np.array_equal(proj, self.gt_keypoints2d):
            raise ValueError("fixture keypoints are not the projection of the 3D keypoints")
        if self.gt_mask.any() and BBox.from_mask(self.gt_mask) != self.tight_bbox:
            raise ValueError("fixture bbox is not the tight mask bbox")

    @property
    def object_scale(self):
        return self.tight_bbox.longest_side

    def scene_record(self):
        return {
            "type": "scene",
            "shape": self.shape,
            "seed": self.seed,
            "pose": pio.pose_to_dict(self.gt_pose),
            "camera": pio.camera_to_dict(self.cam),
            "keypoints3d": pio.keypoints_to_dict(self.keypoints3d),
            "keypoints2d": pio.keypoints_to_dict(self.gt_keypoints2d),
            "tight_bbox": pio.bbox_to_dict(self.tight_bbox),
        }

    def checksum(self):
        """SHA-256 over the scene record, mesh and mask bytes."""
        h = hashlib.sha256()
        h.update(pio.dumps(self.scene_record()).encode())
        h.update(np.ascontiguousarray(self.mesh.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.mesh.faces, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.gt_mask, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, directory):
        """Write ``mesh.obj``, ``scene.json``, ``mask.pgm``, ``mask.npy`` and ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        pio.save_mesh(self.mesh, d / "mesh.obj")
        pio.write_json(d / "scene.json", self.scene_record())
        pio.write_pgm(d / "mask.pgm", self.gt_mask)
        pio.save_tensor(d / "mask.npy", self.gt_mask)
        files = ["mesh.obj", "scene.json", "mask.pgm", "mask.npy"]
        pio.write_json(d / "manifest.json", {
            "type": "fixture_manifest",
            "checksum": self.checksum(),
            "files": {f: pio.sha256_file(d / f) for f in files},
        })
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        rec = pio.read_json(d / "scene.json")
        return cls(
            shape=rec["shape"], seed=int(rec["seed"]), mesh=pio.load_mesh(d / "mesh.obj"),
            gt_pose=pio.pose_from_dict(rec["pose"]), cam=pio.camera_from_dict(rec["camera"]),
            keypoints3d=pio.keypoints_from_dict(rec["keypoints3d"]),
            gt_keypoints2d=pio.keypoints_from_dict(rec["keypoints2d"]),
            gt_mask=pio.load_tensor(d / "mask.npy"), tight_bbox=pio.bbox_from_dict(rec["tight_bbox"]),
        )


def random_rotation(rng):
    q = rng.normal(size=4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def gen_scene(shape="cube", seed=42, cam=DEFAULT_CAMERA, depth_range=DEFAULT_DEPTH_RANGE,
              num_keypoints=DEFAULT_NUM_KEYPOINTS, margin=2.0, max_attempts=100) -> SceneFixture:
    """Seeded scene: mesh, pose with the whole object inside the frame, keypoints and mask.

    Keypoints are chosen by farthest point sampling over the mesh vertices.
    """
    lo, hi = depth_range
    if not (0 < lo <= hi):
        raise ValueError("depth range must be positive and ordered")
    mesh = make_mesh(shape, stream(seed, "mesh"))
    rng = stream(seed, "pose")
    for _ in range(max_attempts):
        R = random_rotation(rng)
        z = rng.uniform(lo, hi)
        u = rng.uniform(0.25 * cam.width, 0.75 * cam.width)
        v = rng.uniform(0.25 * cam.height, 0.75 * cam.height)
        t = np.array([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
        pose = Pose.from_params(Pose.from_matrix(R, t).params)
        P = pose.transform(mesh.vertices)
        if np.any(P[:, 2] <= 1e-3):
            continue
        uv = project_points(pose, mesh.vertices, cam)
        if (uv.min() >= margin and uv[:, 0].max() <= cam.width - margin
                and uv[:, 1].max() <= cam.height - margin):
            break
    else:
        raise GenerationFailure(f"object left the frame in {max_attempts} attempts")
    n = min(num_keypoints, len(mesh.vertices))
    kp3 = mesh.vertices[fps_sample(mesh.vertices, n)]
    mask = hard_silhouette(pose, mesh, cam)
    return SceneFixture(shape, int(seed), mesh, pose, cam, kp3, project_points(pose, kp3, cam),
                        mask, BBox.from_mask(mask))


def gen_prediction_fields(fixture: SceneFixture, offset_sigma=0.0, attention_sigma=0.0, fg_flip_rate=0.0,
                          attention_width=None, seed=None) -> PredictionFields:
    """Stand-in network output for ``fixture``.

    Offsets point from every pixel center to every keypoint plus Gaussian
    noise; attention logits are ``-|p - k|^2 / (2 w^2)`` plus noise, with
    ``w`` defaulting to the object scale; ``fg_prob`` is the ground-truth
    mask with labels flipped at ``fg_flip_rate`` and then blurred by a
    radius-1 Gaussian.
    """
    if min(offset_sigma, attention_sigma, fg_flip_rate) < 0:
        raise ValueError("noise parameters must be non-negative")
    seed = fixture.seed if seed is None else seed
    shape = fixture.cam.shape
    xs, ys = pixel_centers(shape)
    p = np.stack([xs, ys], axis=-1)[:, :, None, :]
    k = fixture.gt_keypoints2d[None, None]
    offsets = k - p
    if offset_sigma > 0:
        offsets = offsets + offset_sigma * stream(seed, "fields/offsets").normal(size=offsets.shape)
    w = attention_width or fixture.object_scale
    attention = -np.sum((p - k) ** 2, axis=-1) / (2.0 * w * w)
    if attention_sigma > 0:
        attention = attention + attention_sigma * stream(seed, "fields/attention").normal(size=attention.shape)
    mask = fixture.gt_mask.astype(np.float64)
    if fg_flip_rate > 0:
        flips = stream(seed, "fields/flips").uniform(size=shape) < fg_flip_rate
        mask = np.where(flips, 1.0 - mask, mask)
    fg = np.clip(ndimage.gaussian_filter(mask, sigma=1.0, radius=1, mode="nearest"), 0.0, 1.0)
    return PredictionFields(offsets, attention, fg)


class NoisySegmenter:
    """Probability-map provider whose corruption level follows a per-round schedule.

    Round ``r`` returns, in the requested view frame, the ground-truth mask
    plus ``schedule[r]`` times a fixed, spatially correlated unit-variance
    noise field, clipped to [0, 1].  The noise field is drawn once per view
    (common random numbers), so the only thing changing between rounds is
    the corruption level.
    """

    def __init__(self, gt_mask, schedule, seed, correlation=DEFAULT_NOISE_CORRELATION):
        self.gt_mask = np.asarray(gt_mask, dtype=np.float64)
        self.schedule = tuple(float(s) for s in schedule)
        self.seed = int(seed)
        self.correlation = correlation
        self._noise = {}

    def _view_noise(self, T: SimilarityTransform2D, shape):
        key = f"segmenter/{T.scale!r}/{T.offset!r}/{T.flip}/{T.angle!r}/{shape}"
        if key not in self._noise:
            z = stream(self.seed, key).normal(size=shape)
            if self.correlation > 0:
                z = ndimage.gaussian_filter(z, self.correlation, mode="wrap")
            self._noise[key] = z / z.std()
        return self._noise[key]

    def __call__(self, rnd, T=None, shape=None):
        if rnd >= len(self.schedule):
            raise ScheduleTooShort(f"no noise level for round {rnd}")
        T = T or SimilarityTransform2D()
        shape = tuple(shape) if shape is not None else self.gt_mask.shape
        view = warp_field(T, self.gt_mask, shape)
        level = self.schedule[rnd]
        if level == 0:
            return view
        return np.clip(view + level * self._view_noise(T, shape), 0.0, 1.0)


def gen_noisy_segmenter(fixture: SceneFixture, schedule=DEFAULT_SEGMENTER_SCHEDULE, rounds=None, seed=None):
    if rounds is not None and len(schedule) < rounds:
        raise ScheduleTooShort(f"schedule has {len(schedule)} levels for {rounds} rounds")
    return NoisySegmenter(fixture.gt_mask, schedule, fixture.seed if seed is None else seed)
