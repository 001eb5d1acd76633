"""File formats: OBJ meshes, JSON records, tensor containers and PGM masks.

JSON records
------------
Pose::

    {"type": "pose", "rotation": [9 reals, row-major], "rotvec": [3], "translation": [3]}

Camera::

    {"type": "camera", "fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..}

Keypoints::

    {"type": "keypoints2d" | "keypoints3d", "points": [[x, y(, z)], ...]}

Floats are written with 17 significant digits so that they round-trip
exactly.  Tensors are stored as ``.npy`` files (shape header followed by
row-major little-endian float64 data).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import BBox, CameraIntrinsics, Pose, TriMesh


def load_mesh(path) -> TriMesh:
    """Read the ``v`` / triangular ``f`` subset of Wavefront OBJ."""
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError(lineno, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in tok[1:4]])
                except ValueError:
                    raise ParseError(lineno, "bad vertex coordinate") from None
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ParseError(lineno, "only triangular faces are supported")
                try:
                    # "7", "7/1", "7//2", "7/1/2": vertex index comes first
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                except ValueError:
                    raise ParseError(lineno, "bad face index") from None
                faces.append([i - 1 if i > 0 else len(vertices) + i if i < 0 else -1 for i in idx])
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(mesh: TriMesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(_fmt(x) for x in v) + "\n")
        for f in mesh.faces:
            fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")


def _fmt(x):
    return format(float(x), ".17g")


def _round17(x):
    """Float rounded to 17 significant digits (exact for float64)."""
    return float(_fmt(x))


def pose_to_dict(pose: Pose):
    return {
        "type": "pose",
        "rotation": [_round17(x) for x in pose.rotation.reshape(-1)],
        "rotvec": [_round17(x) for x in pose.rotvec],
        "translation": [_round17(x) for x in pose.translation],
    }


def pose_from_dict(d) -> Pose:
    if "rotation" in d:
        R = np.array(d["rotation"], dtype=np.float64).reshape(3, 3)
        r = np.array(d["rotvec"], dtype=np.float64) if "rotvec" in d else None
        if r is not None:
            return Pose(R, r, np.array(d["translation"], dtype=np.float64))
        return Pose.from_matrix(R, d["translation"])
    return Pose.from_rotvec(d["rotvec"], d["translation"])


def camera_to_dict(cam: CameraIntrinsics):
    return {"type": "camera", "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height}


def camera_from_dict(d) -> CameraIntrinsics:
    return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                            int(d["width"]), int(d["height"]))


def keypoints_to_dict(points):
    pts = np.asarray(points, dtype=np.float64)
    kind = {2: "keypoints2d", 3: "keypoints3d"}[pts.shape[1]]
    return {"type": kind, "points": [[_round17(x) for x in p] for p in pts]}


def keypoints_from_dict(d):
    return np.array(d["points"], dtype=np.float64)


def bbox_to_dict(b: BBox):
    return {"type": "bbox", "x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}


def bbox_from_dict(d) -> BBox:
    return BBox(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(_canon(obj), indent=2, sort_keys=True) + "\n"


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _round17(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def save_tensor(path, array):
    np.save(path, np.ascontiguousarray(array, dtype="<f8"), allow_pickle=False)


def load_tensor(path):
    return np.load(path, allow_pickle=False)


def write_pgm(path, image):
    """Write an 8-bit binary PGM.  Float images in [0, 1] are quantized."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[pos:end])
        pos = end
    if parts[0] != b"P5" or int(parts[3]) > 255:
        raise ParseError(1, "only 8-bit binary PGM is supported")
    w, h = int(parts[1]), int(parts[2])
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
