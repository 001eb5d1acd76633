"""Soft silhouette rasterization, visibility gating and the Dice alignment loss.

Masks are plain ``(H, W)`` float64 arrays with values in [0, 1].
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, MeshBehindCamera, PointBehindCamera
from .geometry import CameraIntrinsics, Pose, TriMesh, project_jacobian, project_points

CUTOFF = 4.0
DICE_EPS = 1e-6


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _project_mesh(pose, mesh, cam, with_grad):
    try:
        uv = project_points(pose, mesh.vertices, cam)
        J = project_jacobian(pose, mesh.vertices, cam) if with_grad else None
    except PointBehindCamera as e:
        raise MeshBehindCamera(f"vertex {e.index} is behind the camera") from None
    return uv, J


def _window(tri, margin, shape):
    """Row/column slices of pixels whose centers lie in the dilated triangle bbox."""
    h, w = shape
    lo = tri.min(axis=0) - margin
    hi = tri.max(axis=0) + margin
    c0 = max(int(np.ceil(lo[0] - 0.5)), 0)
    c1 = min(int(np.floor(hi[0] - 0.5)) + 1, w)
    r0 = max(int(np.ceil(lo[1] - 0.5)), 0)
    r1 = min(int(np.floor(hi[1] - 0.5)) + 1, h)
    if c1 <= c0 or r1 <= r0:
        return None
    return slice(r0, r1), slice(c0, c1)


def _edge_functions(tri, px, py):
    """Edge function of each directed edge (v_k -> v_k+1) at the pixel centers."""
    out = []
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        out.append((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]))
    return out


def _inside(tri, px, py):
    e = _edge_functions(tri, px, py)
    pos = (e[0] >= 0) & (e[1] >= 0) & (e[2] >= 0)
    neg = (e[0] <= 0) & (e[1] <= 0) & (e[2] <= 0)
    return pos | neg


def _segment_distance(tri, px, py):
    """Distance to the triangle boundary plus the data needed for its gradient.

    Returns ``(d, edge, s, nx, ny)``: distance, index of the nearest edge,
    clamped segment parameter of the closest point and the unit direction
    from the closest point to the pixel.
    """
    best = None
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        ex, ey = b[0] - a[0], b[1] - a[1]
        s = np.clip(((px - a[0]) * ex + (py - a[1]) * ey) / (ex * ex + ey * ey), 0.0, 1.0)
        dx = px - (a[0] + s * ex)
        dy = py - (a[1] + s * ey)
        d = np.hypot(dx, dy)
        if best is None:
            best = [d, np.zeros(d.shape, dtype=np.int64), s, dx, dy]
        else:
            closer = d < best[0]
            best[0] = np.where(closer, d, best[0])
            best[1] = np.where(closer, k, best[1])
            best[2] = np.where(closer, s, best[2])
            best[3] = np.where(closer, dx, best[3])
            best[4] = np.where(closer, dy, best[4])
    d, edge, s, dx, dy = best
    with np.errstate(invalid="ignore", divide="ignore"):
        nx = np.where(d > 0, dx / d, 0.0)
        ny = np.where(d > 0, dy / d, 0.0)
    return d, edge, s, nx, ny


def render_silhouette(pose: Pose, mesh: TriMesh, cam: CameraIntrinsics, tau=1.0,
                      with_grad=False, cutoff=CUTOFF):
    """Soft silhouette of ``mesh`` under ``pose``.

    Each triangle contributes ``D = sigmoid(sd / tau)`` where ``sd`` is the
    signed distance from the pixel center to the projected triangle's boundary
    (positive inside), and pixels aggregate as ``1 - prod(1 - D)``.  Triangles
    only touch pixels inside their bbox dilated by ``cutoff * tau``; to keep
    the result continuous in the pose, ``D`` is shifted down by
    ``sigmoid(-cutoff)`` and rescaled, so it reaches exactly zero at distance
    ``cutoff * tau`` outside the triangle.

    With ``with_grad`` also returns the ``(H, W, 6)`` derivative w.r.t. the pose
    params ``[rx, ry, rz, tx, ty, tz]``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    uv, J = _project_mesh(pose, mesh, cam, with_grad)
    shape = cam.shape
    prod = np.ones(shape)
    floor = _sigmoid(-cutoff)
    scale = 1.0 / (1.0 - floor)
    contribs = []
    for f in mesh.faces:
        tri = uv[f]
        win = _window(tri, cutoff * tau, shape)
        if win is None:
            continue
        rs, cs = win
        py, px = np.meshgrid(np.arange(rs.start, rs.stop) + 0.5, np.arange(cs.start, cs.stop) + 0.5, indexing="ij")
        d, edge, s, nx, ny = _segment_distance(tri, px, py)
        sign = np.where(_inside(tri, px, py), 1.0, -1.0)
        raw = _sigmoid(sign * d / tau)
        D = np.maximum(raw - floor, 0.0) * scale
        prod[rs, cs] *= 1.0 - D
        if with_grad:
            dD_dsd = np.where(raw > floor, raw * (1.0 - raw) * scale / tau, 0.0)
            # envelope theorem: dd/da = -n (1 - s), dd/db = -n s for the nearest edge (a, b)
            Ja = J[f][edge]
            Jb = J[f][(edge + 1) % 3]
            n = np.stack([nx, ny], axis=-1)[..., None, :]
            dd = -(1.0 - s)[..., None] * (n @ Ja)[..., 0, :] - s[..., None] * (n @ Jb)[..., 0, :]
            contribs.append((rs, cs, D, (sign * dD_dsd)[..., None] * dd))
    mask = 1.0 - prod
    if not with_grad:
        return mask
    grad = np.zeros(shape + (6,))
    for rs, cs, D, dD in contribs:
        keep = 1.0 - D
        with np.errstate(invalid="ignore", divide="ignore"):
            others = np.where(keep > 0, prod[rs, cs] / keep, 0.0)
        grad[rs, cs] += others[..., None] * dD
    return mask, grad


def hard_silhouette(pose: Pose, mesh: TriMesh, cam: CameraIntrinsics):
    """Binary silhouette: 1 where a pixel center lies in (or on) any projected triangle."""
    uv, _ = _project_mesh(pose, mesh, cam, False)
    out = np.zeros(cam.shape)
    for f in mesh.faces:
        tri = uv[f]
        win = _window(tri, 0.0, cam.shape)
        if win is None:
            continue
        rs, cs = win
        py, px = np.meshgrid(np.arange(rs.start, rs.stop) + 0.5, np.arange(cs.start, cs.stop) + 0.5, indexing="ij")
        out[rs, cs] = np.maximum(out[rs, cs], _inside(tri, px, py))
    return out


def _same_shape(*maps):
    shapes = {np.shape(m) for m in maps}
    if len(shapes) != 1:
        raise DimensionMismatch(f"mask shapes differ: {sorted(shapes)}")


def visible_mask(rendered, fg_prob):
    """Rendered silhouette gated by the foreground probability (elementwise product)."""
    _same_shape(rendered, fg_prob)
    return np.asarray(rendered, dtype=np.float64) * np.asarray(fg_prob, dtype=np.float64)


def dice_loss(pseudo, rendered, fg_prob, eps=DICE_EPS):
    """Dice loss between the pseudo mask and ``visible_mask(rendered, fg_prob)``.

    Returns ``(loss, grads)`` where ``grads`` maps ``"pseudo"``,
    ``"rendered"`` and ``"fg_prob"`` to per-pixel derivatives.
    """
    _same_shape(pseudo, rendered, fg_prob)
    if not eps > 0:
        raise ValueError("eps must be positive")
    y = np.asarray(pseudo, dtype=np.float64)
    r = np.asarray(rendered, dtype=np.float64)
    f = np.asarray(fg_prob, dtype=np.float64)
    v = r * f
    num = 2.0 * np.sum(y * v) + eps
    den = np.sum(y) + np.sum(v) + eps
    loss = 1.0 - num / den
    d2 = den * den
    grads = {
        "pseudo": -(2.0 * v * den - num) / d2,
        "rendered": -(2.0 * y * f * den - num * f) / d2,
        "fg_prob": -(2.0 * y * r * den - num * r) / d2,
    }
    return float(loss), grads
