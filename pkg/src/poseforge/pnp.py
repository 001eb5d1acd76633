"""EPnP pose solving, Gauss-Newton refinement and implicit PnP Jacobians.

The closed-form stage follows Lepetit et al.'s EPnP: points are expressed
as barycentric combinations of four control points (three for planar
scenes), the control points' camera coordinates are sought in the null
space of the 2N x 12 projection system, and the null-space weights
(betas) are recovered from the preserved inter-control-point distances for
1, 2 and 3 null-space vectors.  Every closed-form candidate is then polished
by Gauss-Newton on the reprojection error and the best one is returned.

Derivatives of the solved pose w.r.t. the input 2D keypoints come from the
implicit function theorem applied to the stationarity condition of the
refined objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (DegenerateConfiguration, LengthMismatch, NoPositiveDepthSolution, NotConverged,
                     PointBehindCamera, SingularHessian, TooFewPoints)
from .geometry import (Z_NEAR, CameraIntrinsics, Pose, left_jacobian_inverse, project_jacobian,
                       project_points, projection_derivative, skew)

GRAD_TOL = 1e-10
MAX_ITERS = 100
# cost changes below this relative size are rounding noise, not increases
COST_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class PnPSolution:
    pose: Pose
    reprojection_rms: float
    iterations: int
    converged: bool
    gradient_norm: float = 0.0
    case: int = 0
    raw_rms: float = float("nan")


def _check_inputs(k2d, k3d):
    k2d = np.asarray(k2d, dtype=np.float64)
    k3d = np.asarray(k3d, dtype=np.float64)
    if k2d.ndim != 2 or k2d.shape[1] != 2 or k3d.ndim != 2 or k3d.shape[1] != 3:
        raise LengthMismatch("expected (N, 2) and (N, 3) keypoint arrays")
    if len(k2d) != len(k3d):
        raise LengthMismatch(f"{len(k2d)} 2D points vs {len(k3d)} 3D points")
    if len(k2d) < 4:
        raise TooFewPoints(f"PnP needs at least 4 correspondences, got {len(k2d)}")
    if not (np.all(np.isfinite(k2d)) and np.all(np.isfinite(k3d))):
        raise ValueError("non-finite keypoint coordinates")
    return k2d, k3d


def _control_points(X):
    c0 = X.mean(axis=0)
    A = X - c0
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0 or s[1] / s[0] < 1e-10:
        raise DegenerateConfiguration("3D points are coincident or collinear")
    planar = s[2] / s[0] < 1e-10
    ncp = 3 if planar else 4
    n = len(X)
    ctrl = [c0] + [c0 + s[k] / np.sqrt(n) * Vt[k] for k in range(ncp - 1)]
    return np.array(ctrl), planar


def _barycentric(X, ctrl):
    B = (ctrl[1:] - ctrl[0]).T  # 3 x (ncp - 1)
    a, *_ = np.linalg.lstsq(B, (X - ctrl[0]).T, rcond=None)
    return np.column_stack([1.0 - a.sum(axis=0), a.T])


def _system_matrix(alphas, xn):
    n, ncp = alphas.shape
    M = np.zeros((2 * n, 3 * ncp))
    for j in range(ncp):
        M[0::2, 3 * j] = alphas[:, j]
        M[0::2, 3 * j + 2] = -alphas[:, j] * xn[:, 0]
        M[1::2, 3 * j + 1] = alphas[:, j]
        M[1::2, 3 * j + 2] = -alphas[:, j] * xn[:, 1]
    return M


def _beta_products(nvec):
    """Index pairs (i, j), i <= j, in the order b11, b12, b22, b13, b23, b33."""
    return [(i, j) for j in range(nvec) for i in range(j + 1)]


def _distance_system(V, ctrl, nvec):
    """Linear system ``L @ b = rho`` relating beta products to control-point distances."""
    ncp = len(ctrl)
    pairs = list(combinations(range(ncp), 2))
    vs = [V[:, k].reshape(ncp, 3) for k in range(nvec)]
    prods = _beta_products(nvec)
    L = np.empty((len(pairs), len(prods)))
    rho = np.empty(len(pairs))
    for r, (a, b) in enumerate(pairs):
        dv = [v[a] - v[b] for v in vs]
        for c, (i, j) in enumerate(prods):
            L[r, c] = dv[i] @ dv[j] * (1.0 if i == j else 2.0)
        rho[r] = np.sum((ctrl[a] - ctrl[b]) ** 2)
    return L, rho


def _betas_from_products(b, nvec):
    prods = _beta_products(nvec)
    idx = {p: k for k, p in enumerate(prods)}
    b11 = b[idx[(0, 0)]]
    sgn = 1.0 if b11 >= 0 else -1.0
    betas = np.zeros(nvec)
    betas[0] = np.sqrt(abs(b11))
    for j in range(1, nvec):
        betas[j] = np.sqrt(abs(b[idx[(j, j)]])) * np.sign(b[idx[(0, j)]] * sgn)
    return betas


def _refine_betas(betas, L, rho, iters=10):
    prods = _beta_products(len(betas))
    for _ in range(iters):
        bp = np.array([betas[i] * betas[j] for i, j in prods])
        r = L @ bp - rho
        J = np.zeros((len(prods), len(betas)))
        for c, (i, j) in enumerate(prods):
            J[c, i] += betas[j]
            J[c, j] += betas[i]
        step, *_ = np.linalg.lstsq(L @ J, -r, rcond=None)
        betas = betas + step
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(betas)):
            break
    return betas


def _absolute_orientation(X, P):
    """Rigid (R, t) minimizing ||R X + t - P|| (Kabsch)."""
    xm, pm = X.mean(axis=0), P.mean(axis=0)
    H = (X - xm).T @ (P - pm)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, pm - R @ xm


def _rms(pose, k2d, k3d, cam):
    try:
        r = project_points(pose, k3d, cam) - k2d
    except PointBehindCamera:
        return np.inf
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def epnp_candidates(k2d, k3d, cam: CameraIntrinsics):
    """Closed-form EPnP candidates as a list of ``(case, pose, rms)``.

    Candidates whose rigid fit puts a point at or behind the near plane are
    dropped.
    """
    k2d, k3d = _check_inputs(k2d, k3d)
    ctrl, planar = _control_points(k3d)
    alphas = _barycentric(k3d, ctrl)
    xn = np.column_stack([(k2d[:, 0] - cam.cx) / cam.fx, (k2d[:, 1] - cam.cy) / cam.fy])
    M = _system_matrix(alphas, xn)
    w, V = np.linalg.eigh(M.T @ M)  # ascending eigenvalues
    cases = (1, 2) if planar else (1, 2, 3)
    out = []
    for nvec in cases:
        L, rho = _distance_system(V, ctrl, nvec)
        if nvec == 1:
            b11 = (L[:, 0] @ rho) / (L[:, 0] @ L[:, 0])
            betas = np.array([np.sqrt(abs(b11))])
        else:
            b, *_ = np.linalg.lstsq(L, rho, rcond=None)
            betas = _betas_from_products(b, nvec)
        betas = _refine_betas(betas, L, rho)
        cc = (V[:, :nvec] @ betas).reshape(len(ctrl), 3)
        Pc = alphas @ cc
        if np.mean(Pc[:, 2]) < 0:
            Pc = -Pc
        R, t = _absolute_orientation(k3d, Pc)
        # canonical form: matrix rebuilt from the rotvec, as the refiner does
        pose = Pose.from_params(Pose.from_matrix(R, t).params)
        # the rigid fit can be usable even when the raw control-point depths are not
        rms = _rms(pose, k2d, k3d, cam)
        if np.isfinite(rms):
            out.append((nvec, pose, rms))
    return out


def _residuals(params, k2d, k3d, cam):
    pose = Pose.from_params(params)
    r = (project_points(pose, k3d, cam) - k2d).reshape(-1)
    return pose, r


def scaled_gradient_norm(J, r):
    """Infinity norm of ``J^T r`` scaled by ``||J||_F * max(1, ||r||)``."""
    g = J.T @ r
    return float(np.abs(g).max() / (np.linalg.norm(J) * max(1.0, np.linalg.norm(r))))


def refine_pose(init: Pose, k2d, k3d, cam, grad_tol=GRAD_TOL, max_iters=MAX_ITERS):
    """Gauss-Newton on ``0.5 * ||project(pose) - k2d||^2`` over axis-angle + translation.

    Switches to Levenberg-Marquardt (restarting from the best iterate) after
    two consecutive increases of the residual.  Returns
    ``(pose, iterations, converged, scaled_grad)`` for the best iterate.
    """
    def evaluate(params):
        try:
            pose, r = _residuals(params, k2d, k3d, cam)
        except PointBehindCamera:
            return None
        J = project_jacobian(pose, k3d, cam).reshape(-1, 6)
        return params, pose, r, float(r @ r), J

    cur = evaluate(init.params.copy())
    if cur is None:
        raise PointBehindCamera(-1)
    best = cur
    lam = None
    increases = 0
    it = 0
    while it < max_iters and scaled_gradient_norm(cur[4], cur[2]) >= grad_tol:
        it += 1
        params, _, r, cost, J = cur
        if lam is None:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        else:
            A = J.T @ J
            step = np.linalg.solve(A + lam * np.diag(np.diag(A)), -J.T @ r)
        trial = evaluate(params + step)
        if lam is None:
            if trial is None or trial[3] > cost * (1 + COST_RTOL):
                increases += 1
                if increases >= 2 or trial is None:
                    lam, cur = 1e-3, best
                    continue
            else:
                increases = 0
            cur = trial
        elif trial is not None and trial[3] <= cost * (1 + COST_RTOL):
            cur = trial
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e16:
                break
            continue
        if cur[3] <= best[3] * (1 + COST_RTOL):
            best = cur
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(params)):
            break
    gnorm = scaled_gradient_norm(best[4], best[2])
    return best[1], it, gnorm < grad_tol, gnorm


def epnp_solve(k2d, k3d, cam: CameraIntrinsics, grad_tol=GRAD_TOL, max_iters=MAX_ITERS) -> PnPSolution:
    """Solve PnP: EPnP closed form followed by Gauss-Newton refinement.

    All closed-form candidates are refined; the one with the lowest final
    reprojection RMS wins, ties going to the lowest case index.
    """
    k2d, k3d = _check_inputs(k2d, k3d)
    cands = epnp_candidates(k2d, k3d, cam)
    if not cands:
        raise NoPositiveDepthSolution("no EPnP candidate has all points in front of the camera")
    best = None
    for case, pose0, rms0 in cands:
        pose, it, conv, gnorm = refine_pose(pose0, k2d, k3d, cam, grad_tol, max_iters)
        rms = _rms(pose, k2d, k3d, cam)
        if rms > rms0:  # never worse than the closed form
            pose, it, conv, rms = pose0, it, False, rms0
        sol = PnPSolution(pose, rms, it, bool(conv), gnorm, case, rms0)
        if best is None or sol.reprojection_rms < best.reprojection_rms:
            best = sol
    if not np.all(best.pose.transform(k3d)[:, 2] > Z_NEAR):
        raise NoPositiveDepthSolution("refined pose puts points behind the camera")
    return best


def reproject(k2d, k3d, cam: CameraIntrinsics):
    """Solve PnP from ``k2d`` and project ``k3d`` with the solved pose."""
    sol = epnp_solve(k2d, k3d, cam)
    return project_points(sol.pose, k3d, cam)


def _local_derivatives(pose: Pose, k3d, cam):
    """Camera points, and d(u,v)/d(delta, tau) for a left rotation increment ``delta``."""
    Y = np.asarray(k3d, dtype=np.float64) @ pose.rotation.T
    P = Y + pose.translation
    dproj = projection_derivative(P, cam)  # (N, 2, 3)
    dP = np.zeros((len(P), 3, 6))
    for n in range(len(P)):
        dP[n, :, :3] = -skew(Y[n])
        dP[n, :, 3:] = np.eye(3)
    return Y, P, dproj, dP, dproj @ dP


def _exact_hessian(pose, k2d, k3d, cam):
    """Hessian of ``0.5 * ||r||^2`` in left-increment coordinates, including second-order terms."""
    Y, P, dproj, dP, Jl = _local_derivatives(pose, k3d, cam)
    r = (project_points(pose, k3d, cam) - k2d)
    J = Jl.reshape(-1, 6)
    H = J.T @ J
    E = [skew(e) for e in np.eye(3)]
    for n in range(len(P)):
        X, Yc, Z = P[n]
        # d2 P / d delta_i d delta_j = 0.5 (E_i E_j + E_j E_i) Y
        d2P = np.zeros((6, 6, 3))
        for i in range(3):
            for j in range(3):
                d2P[i, j] = 0.5 * (E[i] @ E[j] + E[j] @ E[i]) @ Y[n]
        hu = np.zeros((3, 3))
        hu[0, 2] = hu[2, 0] = -cam.fx / Z**2
        hu[2, 2] = 2.0 * cam.fx * X / Z**3
        hv = np.zeros((3, 3))
        hv[1, 2] = hv[2, 1] = -cam.fy / Z**2
        hv[2, 2] = 2.0 * cam.fy * Yc / Z**3
        for c, hc in enumerate((hu, hv)):
            second = dP[n].T @ hc @ dP[n] + np.einsum("a,ija->ij", dproj[n, c], d2P)
            H += r[n, c] * second
    return H, J


def pnp_jacobian(solution: PnPSolution, k2d, k3d, cam: CameraIntrinsics, hessian="exact"):
    """Jacobian (6, 2N) of the solved pose params w.r.t. the flattened 2D keypoints.

    Rows are ``[rx, ry, rz, tx, ty, tz]``; column ``2n + c`` is coordinate
    ``c`` of keypoint ``n``.  ``hessian`` selects the full Hessian
    (``"exact"``, default) or the Gauss-Newton approximation
    (``"gauss_newton"``), which is exact only for zero-residual solutions.
    """
    if not solution.converged:
        raise NotConverged("implicit differentiation needs a stationary solution")
    k2d, k3d = _check_inputs(k2d, k3d)
    if hessian == "exact":
        H, J = _exact_hessian(solution.pose, k2d, k3d, cam)
    elif hessian == "gauss_newton":
        J = _local_derivatives(solution.pose, k3d, cam)[-1].reshape(-1, 6)
        H = J.T @ J
    else:
        raise ValueError(f"unknown hessian mode {hessian!r}")
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e14:
        raise SingularHessian("reprojection Hessian is not invertible")
    # g = J^T r with dr/dk = -I, so d(theta)/dk = H^-1 J^T
    dlocal = np.linalg.solve(H, J.T)
    out = dlocal.copy()
    out[:3] = left_jacobian_inverse(solution.pose.rotvec) @ dlocal[:3]
    return out
