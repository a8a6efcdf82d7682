"""Numba-compiled numeric core.

Everything here is a plain function over packed float64 arrays so it can be
JIT-compiled; the public modules (geometry, robot, collision, simulate) wrap
these kernels with typed, validated APIs.  Conventions used throughout:

* twists and wrenches are 6-vectors ordered (linear; angular)
* rotations are 3x3 matrices, configurations are radians
* the robot is a serial chain; link i is the body moved by joint i
"""

from __future__ import annotations

import numpy as np
from numba import njit

_EPS_ANGLE = 1e-6


# ---------------------------------------------------------------------------
# SO(3) / SE(3)
# ---------------------------------------------------------------------------

@njit(cache=True)
def skew(v):
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def so3_exp(w):
    """Rodrigues formula with a second-order Taylor fallback for small angles."""
    th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    th = np.sqrt(th2)
    W = skew(w)
    if th < _EPS_ANGLE:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * W + b * (W @ W)


@njit(cache=True)
def rot_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z), Shepperd's method."""
    q = np.empty(4)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (R[2, 1] - R[1, 2]) / s
        q[2] = (R[0, 2] - R[2, 0]) / s
        q[3] = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q[0] = (R[2, 1] - R[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (R[0, 1] + R[1, 0]) / s
        q[3] = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q[0] = (R[0, 2] - R[2, 0]) / s
        q[1] = (R[0, 1] + R[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q[0] = (R[1, 0] - R[0, 1]) / s
        q[1] = (R[0, 2] + R[2, 0]) / s
        q[2] = (R[1, 2] + R[2, 1]) / s
        q[3] = 0.25 * s
    if q[0] < 0.0:
        q = -q
    return q / np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)


@njit(cache=True)
def quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(cache=True)
def so3_log(R):
    """Axis-angle log via the quaternion, stable away from the pi branch cut."""
    q = rot_to_quat(R)
    vn = np.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    th = 2.0 * np.arctan2(vn, q[0])
    if vn < 1e-12:
        scale = 2.0  # th ~ 0: log ~ 2 * vec(q)
    else:
        scale = th / vn
    out = np.empty(3)
    out[0] = scale * q[1]
    out[1] = scale * q[2]
    out[2] = scale * q[3]
    return out


@njit(cache=True)
def so3_left_jacobian(w):
    """V(w): exp translation coupling, V(w) rho = translation of exp((rho; w))."""
    th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    th = np.sqrt(th2)
    W = skew(w)
    if th < _EPS_ANGLE:
        a = 0.5 - th2 / 24.0
        b = 1.0 / 6.0 - th2 / 120.0
    else:
        a = (1.0 - np.cos(th)) / th2
        b = (th - np.sin(th)) / (th2 * th)
    return np.eye(3) + a * W + b * (W @ W)


@njit(cache=True)
def so3_left_jacobian_inv(w):
    th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    th = np.sqrt(th2)
    W = skew(w)
    if th < _EPS_ANGLE:
        c = 1.0 / 12.0 + th2 / 720.0
    else:
        c = (1.0 / th2) - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
    return np.eye(3) - 0.5 * W + c * (W @ W)


@njit(cache=True)
def se3_exp(xi):
    """xi = (linear; angular) -> (R, t)."""
    w = xi[3:6].copy()
    R = so3_exp(w)
    t = so3_left_jacobian(w) @ xi[0:3].copy()
    return R, t


@njit(cache=True)
def se3_log(R, t):
    """(R, t) -> xi = (linear; angular)."""
    w = so3_log(R)
    rho = so3_left_jacobian_inv(w) @ t
    out = np.empty(6)
    out[0:3] = rho
    out[3:6] = w
    return out


@njit(cache=True)
def se3_q_matrix(rho, phi):
    """Translation-rotation coupling block of the SE(3) left Jacobian."""
    Rx = skew(rho)
    Px = skew(phi)
    th2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    th = np.sqrt(th2)
    if th < 1e-4:
        c1 = 1.0 / 6.0 - th2 / 120.0
        c2 = -(-1.0 / 24.0 + th2 / 720.0)
        c3 = -0.5 * (-1.0 / 24.0 - 3.0 * (-1.0 / 120.0))
    else:
        c1 = (th - np.sin(th)) / (th2 * th)
        m = 1.0 - th2 / 2.0 - np.cos(th)
        c2 = -m / (th2 * th2)
        c3 = -0.5 * (m / (th2 * th2)
                     - 3.0 * (th - np.sin(th) - th2 * th / 6.0)
                     / (th2 * th2 * th))
    PR = Px @ Rx
    RP = Rx @ Px
    PRP = PR @ Px
    return (0.5 * Rx + c1 * (PR + RP + Px @ RP)
            + c2 * (Px @ PR + RP @ Px - 3.0 * PRP)
            + c3 * (PRP @ Px + Px @ PRP))


@njit(cache=True)
def se3_jr_inv(xi):
    """Inverse right Jacobian of SE(3) at tangent xi = (linear; angular)."""
    rho = -xi[0:3].copy()
    phi = -xi[3:6].copy()
    Jinv = so3_left_jacobian_inv(phi)
    Q = se3_q_matrix(rho, phi)
    out = np.zeros((6, 6))
    out[0:3, 0:3] = Jinv
    out[3:6, 3:6] = Jinv
    out[0:3, 3:6] = -Jinv @ Q @ Jinv
    return out


# ---------------------------------------------------------------------------
# Serial-chain kinematics
# ---------------------------------------------------------------------------
#
# Packed model arrays (n = number of joints):
#   jrot   (n,3,3) fixed rotation, parent link frame -> joint frame
#   jtrans (n,3)   fixed translation, parent link frame -> joint frame
#   jaxis  (n,3)   unit joint axis in the joint frame
#   eerot  (3,3), eetrans (3,)  fixed end-effector offset from the last link
# Link frame i coincides with joint frame i after the joint rotation.

@njit(cache=True)
def fk_all(q, jrot, jtrans, jaxis, eerot, eetrans):
    """World pose of every link frame plus the end-effector frame.

    Returns (R_all, p_all) with shape (n+1,3,3) and (n+1,3); index n is the
    end-effector frame.
    """
    n = q.shape[0]
    R_all = np.empty((n + 1, 3, 3))
    p_all = np.empty((n + 1, 3))
    R = np.eye(3)
    p = np.zeros(3)
    tmp = np.empty((3, 3))
    rot = np.empty((3, 3))
    for i in range(n):
        for r in range(3):
            p[r] += R[r, 0] * jtrans[i, 0] + R[r, 1] * jtrans[i, 1] \
                + R[r, 2] * jtrans[i, 2]
        for r in range(3):
            for c in range(3):
                tmp[r, c] = R[r, 0] * jrot[i, 0, c] + R[r, 1] * jrot[i, 1, c] \
                    + R[r, 2] * jrot[i, 2, c]
        # Rodrigues about the (unit) joint axis; exact trig, no small-angle
        # branch needed because the angle enters directly.
        ax = jaxis[i, 0]
        ay = jaxis[i, 1]
        az = jaxis[i, 2]
        cq = np.cos(q[i])
        sq = np.sin(q[i])
        v = 1.0 - cq
        rot[0, 0] = ax * ax * v + cq
        rot[0, 1] = ax * ay * v - az * sq
        rot[0, 2] = ax * az * v + ay * sq
        rot[1, 0] = ay * ax * v + az * sq
        rot[1, 1] = ay * ay * v + cq
        rot[1, 2] = ay * az * v - ax * sq
        rot[2, 0] = az * ax * v - ay * sq
        rot[2, 1] = az * ay * v + ax * sq
        rot[2, 2] = az * az * v + cq
        for r in range(3):
            for c in range(3):
                R[r, c] = tmp[r, 0] * rot[0, c] + tmp[r, 1] * rot[1, c] \
                    + tmp[r, 2] * rot[2, c]
        R_all[i] = R
        p_all[i] = p
    for r in range(3):
        p_all[n, r] = p[r] + R[r, 0] * eetrans[0] + R[r, 1] * eetrans[1] \
            + R[r, 2] * eetrans[2]
        for c in range(3):
            R_all[n, r, c] = R[r, 0] * eerot[0, c] + R[r, 1] * eerot[1, c] \
                + R[r, 2] * eerot[2, c]
    return R_all, p_all


@njit(cache=True)
def point_jacobian_world(q, R_all, p_all, jaxis, link, point):
    """World-frame geometric Jacobian (linear; angular) of a point attached
    to `link` (frame index into R_all), taken at world position `point`."""
    n = q.shape[0]
    J = np.zeros((6, n))
    kmax = link if link < n else n - 1
    for j in range(kmax + 1):
        a = R_all[j] @ jaxis[j]
        r = point - p_all[j]
        J[0, j] = a[1] * r[2] - a[2] * r[1]
        J[1, j] = a[2] * r[0] - a[0] * r[2]
        J[2, j] = a[0] * r[1] - a[1] * r[0]
        J[3, j] = a[0]
        J[4, j] = a[1]
        J[5, j] = a[2]
    return J


@njit(cache=True)
def frame_jacobian_local(q, R_all, p_all, jaxis, link, fr_rot, fr_trans):
    """Body-frame Jacobian of the frame at fixed offset (fr_rot, fr_trans)
    from `link`: J maps qd to the twist in the frame's own coordinates."""
    Rf = R_all[link] @ fr_rot
    pf = p_all[link] + R_all[link] @ fr_trans
    J = point_jacobian_world(q, R_all, p_all, jaxis, link, pf)
    out = np.empty_like(J)
    out[0:3] = Rf.T @ J[0:3]
    out[3:6] = Rf.T @ J[3:6]
    return out


# ---------------------------------------------------------------------------
# Dynamics: CRBA / RNEA in world-frame spatial algebra, (linear; angular)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _crm(v, m):
    """Spatial cross product for motion vectors: crm(v) m."""
    out = np.empty(6)
    out[0] = v[4] * m[2] - v[5] * m[1] + v[1] * m[5] - v[2] * m[4]
    out[1] = v[5] * m[0] - v[3] * m[2] + v[2] * m[3] - v[0] * m[5]
    out[2] = v[3] * m[1] - v[4] * m[0] + v[0] * m[4] - v[1] * m[3]
    out[3] = v[4] * m[5] - v[5] * m[4]
    out[4] = v[5] * m[3] - v[3] * m[5]
    out[5] = v[3] * m[4] - v[4] * m[3]
    return out


@njit(cache=True)
def _crf(v, f):
    """Spatial cross product for force vectors: crf(v) f = -crm(v)^T f."""
    out = np.empty(6)
    out[0] = v[4] * f[2] - v[5] * f[1]
    out[1] = v[5] * f[0] - v[3] * f[2]
    out[2] = v[3] * f[1] - v[4] * f[0]
    out[3] = v[4] * f[5] - v[5] * f[4] + v[1] * f[2] - v[2] * f[1]
    out[4] = v[5] * f[3] - v[3] * f[5] + v[2] * f[0] - v[0] * f[2]
    out[5] = v[3] * f[4] - v[4] * f[3] + v[0] * f[1] - v[1] * f[0]
    return out


@njit(cache=True)
def _spatial_inertia_origin(mass, com_w, Irot_w):
    """6x6 spatial inertia of one body referenced to the world origin.

    com_w is the world COM position, Irot_w the rotational inertia about the
    COM in world axes.  Maps motion (v; w) to force (f; n).
    """
    C = skew(com_w)
    I6 = np.zeros((6, 6))
    I6[0:3, 0:3] = mass * np.eye(3)
    I6[0:3, 3:6] = mass * C.T
    I6[3:6, 0:3] = mass * C
    I6[3:6, 3:6] = Irot_w + mass * (C @ C.T)
    return I6


@njit(cache=True)
def _joint_screws(R_all, p_all, jaxis):
    n = jaxis.shape[0]
    S = np.empty((n, 6))
    for i in range(n):
        a = R_all[i] @ jaxis[i]
        p = p_all[i]
        S[i, 0] = p[1] * a[2] - p[2] * a[1]
        S[i, 1] = p[2] * a[0] - p[0] * a[2]
        S[i, 2] = p[0] * a[1] - p[1] * a[0]
        S[i, 3] = a[0]
        S[i, 4] = a[1]
        S[i, 5] = a[2]
    return S


@njit(cache=True)
def _body_inertias_origin(R_all, p_all, mass, com, inertia):
    n = mass.shape[0]
    out = np.empty((n, 6, 6))
    for i in range(n):
        com_w = p_all[i] + R_all[i] @ com[i]
        Irot_w = R_all[i] @ inertia[i] @ R_all[i].T
        out[i] = _spatial_inertia_origin(mass[i], com_w, Irot_w)
    return out


@njit(cache=True)
def crba(q, jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia):
    """Joint-space mass matrix via composite rigid bodies."""
    n = q.shape[0]
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    S = _joint_screws(R_all, p_all, jaxis)
    Ib = _body_inertias_origin(R_all, p_all, mass, com, inertia)
    M = np.zeros((n, n))
    Ic = np.zeros((6, 6))
    for j in range(n - 1, -1, -1):
        Ic = Ic + Ib[j]
        ICSj = Ic @ S[j]
        for i in range(j + 1):
            M[i, j] = S[i] @ ICSj
            M[j, i] = M[i, j]
    return M


@njit(cache=True)
def _inertia_apply(mass, c, R, Icom, x):
    """Product of one body's origin-referenced spatial inertia with a motion
    vector, without forming the 6x6: with h = m (x_lin + x_ang x c),
    I x = (h; c x h + R Icom R^T x_ang)."""
    out = np.empty(6)
    hx = mass * (x[0] + x[4] * c[2] - x[5] * c[1])
    hy = mass * (x[1] + x[5] * c[0] - x[3] * c[2])
    hz = mass * (x[2] + x[3] * c[1] - x[4] * c[0])
    out[0] = hx
    out[1] = hy
    out[2] = hz
    w0 = R[0, 0] * x[3] + R[1, 0] * x[4] + R[2, 0] * x[5]
    w1 = R[0, 1] * x[3] + R[1, 1] * x[4] + R[2, 1] * x[5]
    w2 = R[0, 2] * x[3] + R[1, 2] * x[4] + R[2, 2] * x[5]
    m0 = Icom[0, 0] * w0 + Icom[0, 1] * w1 + Icom[0, 2] * w2
    m1 = Icom[1, 0] * w0 + Icom[1, 1] * w1 + Icom[1, 2] * w2
    m2 = Icom[2, 0] * w0 + Icom[2, 1] * w1 + Icom[2, 2] * w2
    out[3] = c[1] * hz - c[2] * hy + R[0, 0] * m0 + R[0, 1] * m1 + R[0, 2] * m2
    out[4] = c[2] * hx - c[0] * hz + R[1, 0] * m0 + R[1, 1] * m1 + R[1, 2] * m2
    out[5] = c[0] * hy - c[1] * hx + R[2, 0] * m0 + R[2, 1] * m1 + R[2, 2] * m2
    return out


@njit(cache=True)
def _rnea_with_kin(R_all, p_all, S, qd, qdd, mass, com, inertia, gravity):
    """RNEA inner sweeps over precomputed kinematics (see rnea)."""
    n = qd.shape[0]
    v = np.zeros(6)
    a = np.zeros(6)
    a[0:3] = -gravity  # accelerate the base frame upward instead of applying g
    fnet = np.empty((n, 6))
    for i in range(n):
        v = v + S[i] * qd[i]
        a = a + S[i] * qdd[i] + _crm(v, S[i]) * qd[i]
        c = p_all[i] + R_all[i] @ com[i]
        fnet[i] = _inertia_apply(mass[i], c, R_all[i], inertia[i], a) \
            + _crf(v, _inertia_apply(mass[i], c, R_all[i], inertia[i], v))
    tau = np.empty(n)
    fc = np.zeros(6)
    for i in range(n - 1, -1, -1):
        fc = fc + fnet[i]
        tau[i] = S[i] @ fc
    return tau


@njit(cache=True)
def rnea(q, qd, qdd, jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
         gravity):
    """Inverse dynamics tau(q, qd, qdd) including gravity, no externals."""
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    S = _joint_screws(R_all, p_all, jaxis)
    return _rnea_with_kin(R_all, p_all, S, qd, qdd, mass, com, inertia,
                          gravity)


@njit(cache=True)
def forward_dynamics(q, qd, tau, tau_ext,
                     jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
                     gravity):
    """qdd = M(q)^-1 (tau + tau_ext - bias(q, qd))."""
    M = crba(q, jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia)
    bias = rnea(q, qd, np.zeros_like(q), jrot, jtrans, jaxis, eerot, eetrans,
                mass, com, inertia, gravity)
    return np.linalg.solve(M, tau + tau_ext - bias)


# ---------------------------------------------------------------------------
# Contact-frame spring-damper wrench
# ---------------------------------------------------------------------------

@njit(cache=True)
def contact_wrench(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                   clink, crot, ctrans, kdiag, ddiag, arot, atrans, sign):
    """Wrench exerted on the robot at the contact frame, in frame coordinates.

    F = sign * (K * log(anchor^-1 X) + D * V_body); with sign = -1 this is a
    restoring spring plus dissipative damper about the anchor pose.
    Returns (F, Jloc) so callers can reuse the body Jacobian.
    """
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    Rc = R_all[clink] @ crot
    pc = p_all[clink] + R_all[clink] @ ctrans
    Jloc = frame_jacobian_local(q, R_all, p_all, jaxis, clink, crot, ctrans)
    Rrel = arot.T @ Rc
    trel = arot.T @ (pc - atrans)
    err = se3_log(Rrel, trel)
    vb = Jloc @ qd
    F = np.empty(6)
    for i in range(6):
        F[i] = sign * (kdiag[i] * err[i] + ddiag[i] * vb[i])
    return F, Jloc


@njit(cache=True)
def contact_wrench_fd(q, qd, h, jrot, jtrans, jaxis, eerot, eetrans,
                      clink, crot, ctrans, kdiag, ddiag, arot, atrans, sign):
    """Wrench plus its configuration sensitivity by central differences.

    Returns (F, Jloc, dFdq); the velocity sensitivity sign * D * Jloc is
    analytic and left to the caller.
    """
    n = q.shape[0]
    F, Jloc = contact_wrench(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                             clink, crot, ctrans, kdiag, ddiag, arot, atrans,
                             sign)
    dFdq = np.empty((6, n))
    for j in range(n):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        Fp, _ = contact_wrench(qp, qd, jrot, jtrans, jaxis, eerot, eetrans,
                               clink, crot, ctrans, kdiag, ddiag, arot,
                               atrans, sign)
        Fm, _ = contact_wrench(qm, qd, jrot, jtrans, jaxis, eerot, eetrans,
                               clink, crot, ctrans, kdiag, ddiag, arot,
                               atrans, sign)
        for i in range(6):
            dFdq[i, j] = (Fp[i] - Fm[i]) / (2.0 * h)
    return F, Jloc, dFdq


@njit(cache=True)
def pose_task_terms(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                    clink, crot, ctrans, Rref, pref, want_grad):
    """Pose error, body velocity, and their q-Jacobians for one task frame.

    err = log(ref^-1 X) as (linear; angular), vb = Jloc qd, and with
    want_grad the exact error Jacobian Je = Jr_inv(err) Jloc.  Raises near
    the pi rotation branch cut, where the log is not differentiable.
    """
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    Rc = R_all[clink] @ crot
    pc = p_all[clink] + R_all[clink] @ ctrans
    Rrel = Rref.T @ Rc
    trel = Rref.T @ (pc - pref)
    tr = Rrel[0, 0] + Rrel[1, 1] + Rrel[2, 2]
    if tr < -1.0 + 4e-12:  # cos(angle) <= -1 + 2e-12: at the branch cut
        raise ValueError("rotation angle at the pi branch cut; log undefined")
    err = se3_log(Rrel, trel)
    Jloc = frame_jacobian_local(q, R_all, p_all, jaxis, clink, crot, ctrans)
    vb = Jloc @ qd
    if want_grad:
        Je = se3_jr_inv(err) @ Jloc
    else:
        Je = np.zeros((6, q.shape[0]))
    return err, vb, Jloc, Je


@njit(cache=True)
def _acc_with_frozen_wrench(q, qd, tau, F, has_contact,
                            jrot, jtrans, jaxis, eerot, eetrans, mass, com,
                            inertia, gravity, clink, crot, ctrans):
    tau_ext = np.zeros_like(q)
    if has_contact:
        R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
        Jloc = frame_jacobian_local(q, R_all, p_all, jaxis, clink, crot, ctrans)
        tau_ext = Jloc.T @ F
    return forward_dynamics(q, qd, tau, tau_ext, jrot, jtrans, jaxis, eerot,
                            eetrans, mass, com, inertia, gravity)


@njit(cache=True)
def acceleration(q, qd, tau, has_contact,
                 jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
                 gravity, clink, crot, ctrans, kdiag, ddiag, arot, atrans,
                 sign):
    """Continuous forward dynamics including the interaction wrench."""
    tau_ext = np.zeros_like(q)
    if has_contact:
        F, Jloc = contact_wrench(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                                 clink, crot, ctrans, kdiag, ddiag, arot,
                                 atrans, sign)
        tau_ext = Jloc.T @ F
    return forward_dynamics(q, qd, tau, tau_ext, jrot, jtrans, jaxis, eerot,
                            eetrans, mass, com, inertia, gravity)


@njit(cache=True)
def step_euler(q, qd, tau, dt, has_contact,
               jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
               gravity, clink, crot, ctrans, kdiag, ddiag, arot, atrans,
               sign):
    qdd = acceleration(q, qd, tau, has_contact, jrot, jtrans, jaxis, eerot,
                       eetrans, mass, com, inertia, gravity, clink, crot,
                       ctrans, kdiag, ddiag, arot, atrans, sign)
    return q + dt * qd, qd + dt * qdd


@njit(cache=True)
def _id_residual(q, qd, qdd, F, has_contact,
                 jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
                 gravity, clink, crot, ctrans):
    """M(q) qdd + b(q, qd) - Jloc(q)^T F; zero along the dynamics."""
    r = rnea(q, qd, qdd, jrot, jtrans, jaxis, eerot, eetrans, mass, com,
             inertia, gravity)
    if has_contact:
        R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
        Jloc = frame_jacobian_local(q, R_all, p_all, jaxis, clink, crot,
                                    ctrans)
        r -= Jloc.T @ F
    return r


@njit(cache=True)
def step_derivatives_fd(q, qd, tau, dt, h, has_contact,
                        jrot, jtrans, jaxis, eerot, eetrans, mass, com,
                        inertia, gravity, clink, crot, ctrans, kdiag, ddiag,
                        arot, atrans, sign):
    """Discrete A = d x'/dx, B = d x'/du for the Euler step.

    The rigid-body part of d qdd/d(q, qd) comes from central differences of
    the inverse-dynamics residual M qdd + b - Jloc^T F (wrench frozen),
    mapped through -M^-1; this matches differentiating the forward dynamics
    but needs only two RNEA sweeps per column.  The wrench state dependence
    is added analytically through the spring-damper partials (K Jloc,
    D Jloc).  d qdd/d tau = M^-1 exactly.
    """
    n = q.shape[0]
    F = np.zeros(6)
    Jloc = np.zeros((6, n))
    if has_contact:
        F, Jloc = contact_wrench(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                                 clink, crot, ctrans, kdiag, ddiag, arot,
                                 atrans, sign)
    qdd0 = _acc_with_frozen_wrench(q, qd, tau, F, has_contact, jrot, jtrans,
                                   jaxis, eerot, eetrans, mass, com, inertia,
                                   gravity, clink, crot, ctrans)
    drdq = np.empty((n, n))
    drdqd = np.empty((n, n))
    for j in range(n):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        rp = _id_residual(qp, qd, qdd0, F, has_contact, jrot, jtrans, jaxis,
                          eerot, eetrans, mass, com, inertia, gravity, clink,
                          crot, ctrans)
        rm = _id_residual(qm, qd, qdd0, F, has_contact, jrot, jtrans, jaxis,
                          eerot, eetrans, mass, com, inertia, gravity, clink,
                          crot, ctrans)
        drdq[:, j] = (rp - rm) / (2.0 * h)
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    S0 = _joint_screws(R_all, p_all, jaxis)
    for j in range(n):
        vp = qd.copy()
        vm = qd.copy()
        vp[j] += h
        vm[j] -= h
        # q is fixed along these columns, so the kinematics are shared
        rp = _rnea_with_kin(R_all, p_all, S0, vp, qdd0, mass, com, inertia,
                            gravity)
        rm = _rnea_with_kin(R_all, p_all, S0, vm, qdd0, mass, com, inertia,
                            gravity)
        drdqd[:, j] = (rp - rm) / (2.0 * h)
    M = crba(q, jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia)
    Minv = np.linalg.inv(M)
    dq = -Minv @ drdq
    dqd = -Minv @ drdqd
    if has_contact:
        # analytic wrench partials dF/dq = sign K Jloc, dF/dqd = sign D Jloc
        KJ = np.empty((6, n))
        DJ = np.empty((6, n))
        for i in range(6):
            KJ[i] = sign * kdiag[i] * Jloc[i]
            DJ[i] = sign * ddiag[i] * Jloc[i]
        MJt = Minv @ Jloc.T
        dq = dq + MJt @ KJ
        dqd = dqd + MJt @ DJ
    A = np.zeros((2 * n, 2 * n))
    B = np.zeros((2 * n, n))
    for i in range(n):
        A[i, i] = 1.0
        A[i, n + i] = dt
        A[n + i, n + i] = 1.0
    A[n:, 0:n] += dt * dq
    A[n:, n:] += dt * dqd
    B[n:, :] = dt * Minv
    return A, B


@njit(cache=True)
def gravity_with_gradient(q, jrot, jtrans, jaxis, eerot, eetrans, mass,
                          com, inertia, gravity):
    """Gravity torque g(q) and its exact joint-space gradient.

    Potential-energy form: with v_l the mass-weighted offset of the subtree
    at joint l from the joint origin and u_l = a_l x v_l,
    g_l = -grav . u_l and dg[k, l] = -grav . (a_k x u_l) for k <= l
    (dg is the Hessian of the potential, hence symmetric).
    """
    n = q.shape[0]
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    axes = np.empty((n, 3))
    u = np.empty((n, 3))
    g = np.empty(n)
    msum = 0.0
    wx = 0.0
    wy = 0.0
    wz = 0.0
    for l in range(n - 1, -1, -1):
        axes[l] = R_all[l] @ jaxis[l]
        cw = p_all[l] + R_all[l] @ com[l]
        msum += mass[l]
        wx += mass[l] * cw[0]
        wy += mass[l] * cw[1]
        wz += mass[l] * cw[2]
        vx = wx - msum * p_all[l, 0]
        vy = wy - msum * p_all[l, 1]
        vz = wz - msum * p_all[l, 2]
        u[l, 0] = axes[l, 1] * vz - axes[l, 2] * vy
        u[l, 1] = axes[l, 2] * vx - axes[l, 0] * vz
        u[l, 2] = axes[l, 0] * vy - axes[l, 1] * vx
        g[l] = -(gravity[0] * u[l, 0] + gravity[1] * u[l, 1]
                 + gravity[2] * u[l, 2])
    dg = np.empty((n, n))
    for k in range(n):
        for l in range(k, n):
            cx = axes[k, 1] * u[l, 2] - axes[k, 2] * u[l, 1]
            cy = axes[k, 2] * u[l, 0] - axes[k, 0] * u[l, 2]
            cz = axes[k, 0] * u[l, 1] - axes[k, 1] * u[l, 0]
            dg[k, l] = -(gravity[0] * cx + gravity[1] * cy + gravity[2] * cz)
            dg[l, k] = dg[k, l]
    return g, dg


# ---------------------------------------------------------------------------
# Plant integration (RK4 substeps, unilateral contact gate)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _plant_acc(q, qd, tau, env_on, gate,
               jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
               gravity, clink, crot, ctrans, kdiag, ddiag, arot, atrans,
               sign):
    """Plant-side dynamics; with gate=1 the contact force is unilateral and
    acts only once the contact frame has crossed the anchor plane along the
    anchor +z axis (the pressing direction); gate=0 keeps the spring
    bilateral."""
    tau_ext = np.zeros_like(q)
    if env_on:
        R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
        pc = p_all[clink] + R_all[clink] @ ctrans
        rel = arot.T @ (pc - atrans)
        if gate == 0 or rel[2] >= 0.0:
            F, Jloc = contact_wrench(q, qd, jrot, jtrans, jaxis, eerot,
                                     eetrans, clink, crot, ctrans, kdiag,
                                     ddiag, arot, atrans, sign)
            tau_ext = Jloc.T @ F
    return forward_dynamics(q, qd, tau, tau_ext, jrot, jtrans, jaxis, eerot,
                            eetrans, mass, com, inertia, gravity)


@njit(cache=True)
def plant_tick(q, qd, tau, dt, nsub, env_on, gate,
               jrot, jtrans, jaxis, eerot, eetrans, mass, com, inertia,
               gravity, clink, crot, ctrans, kdiag, ddiag, arot, atrans,
               sign):
    """Integrate one control tick with RK4 at dt/nsub substeps, torque held."""
    hsub = dt / nsub
    for _ in range(nsub):
        k1q = qd
        k1v = _plant_acc(q, qd, tau, env_on, gate, jrot, jtrans, jaxis, eerot,
                         eetrans, mass, com, inertia, gravity, clink, crot,
                         ctrans, kdiag, ddiag, arot, atrans, sign)
        q2 = q + 0.5 * hsub * k1q
        v2 = qd + 0.5 * hsub * k1v
        k2q = v2
        k2v = _plant_acc(q2, v2, tau, env_on, gate, jrot, jtrans, jaxis, eerot,
                         eetrans, mass, com, inertia, gravity, clink, crot,
                         ctrans, kdiag, ddiag, arot, atrans, sign)
        q3 = q + 0.5 * hsub * k2q
        v3 = qd + 0.5 * hsub * k2v
        k3q = v3
        k3v = _plant_acc(q3, v3, tau, env_on, gate, jrot, jtrans, jaxis, eerot,
                         eetrans, mass, com, inertia, gravity, clink, crot,
                         ctrans, kdiag, ddiag, arot, atrans, sign)
        q4 = q + hsub * k3q
        v4 = qd + hsub * k3v
        k4q = v4
        k4v = _plant_acc(q4, v4, tau, env_on, gate, jrot, jtrans, jaxis, eerot,
                         eetrans, mass, com, inertia, gravity, clink, crot,
                         ctrans, kdiag, ddiag, arot, atrans, sign)
        q = q + (hsub / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        qd = qd + (hsub / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return q, qd


@njit(cache=True)
def plant_measured_wrench(q, qd, env_on, gate,
                          jrot, jtrans, jaxis, eerot, eetrans,
                          clink, crot, ctrans, kdiag, ddiag, arot, atrans,
                          sign):
    """Contact wrench the plant currently exerts (for logging/metrics)."""
    F = np.zeros(6)
    if env_on:
        R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
        pc = p_all[clink] + R_all[clink] @ ctrans
        rel = arot.T @ (pc - atrans)
        if gate == 0 or rel[2] >= 0.0:
            F, _ = contact_wrench(q, qd, jrot, jtrans, jaxis, eerot, eetrans,
                                  clink, crot, ctrans, kdiag, ddiag, arot,
                                  atrans, sign)
    return F


# ---------------------------------------------------------------------------
# Distance primitives
# ---------------------------------------------------------------------------

@njit(cache=True)
def _closest_point_segment(p, a, b):
    ab = b - a
    denom = ab[0] ** 2 + ab[1] ** 2 + ab[2] ** 2
    if denom < 1e-16:
        return a.copy()
    t = ((p - a) @ ab) / denom
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return a + t * ab


@njit(cache=True)
def _closest_segment_segment(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-14
    if a <= eps and e <= eps:
        return p1.copy(), p2.copy()
    if a <= eps:
        t = f / e
        t = min(max(t, 0.0), 1.0)
        return p1.copy(), p2 + t * d2
    c = d1 @ r
    if e <= eps:
        s = min(max(-c / a, 0.0), 1.0)
        return p1 + s * d1, p2.copy()
    b = d1 @ d2
    denom = a * e - b * b
    if denom > eps:
        s = min(max((b * f - c * e) / denom, 0.0), 1.0)
    else:
        s = 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    return p1 + s * d1, p2 + t * d2


@njit(cache=True)
def _point_box_local(u, half):
    """Signed distance of a point to a box surface, in the box frame.

    Returns (d, witness, normal); d < 0 inside, normal points toward the
    point when outside and along the nearest face normal when inside.
    """
    k = np.empty(3)
    outside = False
    for i in range(3):
        k[i] = min(max(u[i], -half[i]), half[i])
        if u[i] < -half[i] or u[i] > half[i]:
            outside = True
    if outside:
        diff = u - k
        d = np.sqrt(diff @ diff)
        nrm = diff / d
        return d, k, nrm
    best = 0
    margin = half[0] - abs(u[0])
    for i in range(1, 3):
        m = half[i] - abs(u[i])
        if m < margin:
            margin = m
            best = i
    w = u.copy()
    nrm = np.zeros(3)
    sgn = 1.0 if u[best] >= 0.0 else -1.0
    w[best] = sgn * half[best]
    nrm[best] = sgn
    return -margin, w, nrm


@njit(cache=True)
def _segment_box_param(a, b, brot, bc, half):
    """Ternary search for the segment parameter closest to the box.

    The point-box distance is convex along the segment while outside, which
    is the regime the planner operates in; under penetration the minimizer
    is still a usable witness.
    """
    lo = 0.0
    hi = 1.0
    for _ in range(64):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        u1 = brot.T @ (a + m1 * (b - a) - bc)
        u2 = brot.T @ (a + m2 * (b - a) - bc)
        d1, _, _ = _point_box_local(u1, half)
        d2, _, _ = _point_box_local(u2, half)
        if d1 < d2:
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


@njit(cache=True)
def pair_distance(a1, a2, ra, okind, oe1, oe2, orot, oc, osize):
    """Distance between a robot capsule (a1, a2, ra) and one obstacle.

    okind: 0 sphere (center oc, radius osize[0]); 1 capsule (oe1, oe2,
    radius osize[0]); 2 box (orot, oc, half extents osize).
    Returns (d, pA, pB, n) with n the unit vector from the obstacle witness
    toward the robot witness; d is the surface separation (negative when
    penetrating).
    """
    if okind == 0:
        ca = _closest_point_segment(oc, a1, a2)
        diff = ca - oc
        dist = np.sqrt(diff @ diff)
        if dist < 1e-12:
            n = np.zeros(3)
            n[2] = 1.0
        else:
            n = diff / dist
        d = dist - ra - osize[0]
        pA = ca - ra * n
        pB = oc + osize[0] * n
        return d, pA, pB, n
    if okind == 1:
        ca, cb = _closest_segment_segment(a1, a2, oe1, oe2)
        diff = ca - cb
        dist = np.sqrt(diff @ diff)
        if dist < 1e-12:
            n = np.zeros(3)
            n[2] = 1.0
        else:
            n = diff / dist
        d = dist - ra - osize[0]
        pA = ca - ra * n
        pB = cb + osize[0] * n
        return d, pA, pB, n
    # box
    t = _segment_box_param(a1, a2, orot, oc, osize)
    ca = a1 + t * (a2 - a1)
    u = orot.T @ (ca - oc)
    dloc, wloc, nloc = _point_box_local(u, osize)
    n = orot @ nloc
    pB = orot @ wloc + oc
    d = dloc - ra
    pA = ca - ra * n
    return d, pA, pB, n


@njit(cache=True)
def all_pair_distances(q, jrot, jtrans, jaxis, eerot, eetrans,
                       plink, pe1, pe2, prad, pokind, poe1, poe2, porot, poc,
                       posize):
    """Distances for every packed collision pair at configuration q."""
    m = plink.shape[0]
    R_all, p_all = fk_all(q, jrot, jtrans, jaxis, eerot, eetrans)
    out = np.empty(m)
    for i in range(m):
        li = plink[i]
        a1 = p_all[li] + R_all[li] @ pe1[i]
        a2 = p_all[li] + R_all[li] @ pe2[i]
        d, _, _, _ = pair_distance(a1, a2, prad[i], pokind[i], poe1[i],
                                   poe2[i], porot[i], poc[i], posize[i])
        out[i] = d
    return out


# ---------------------------------------------------------------------------
# Riccati sweep over stacked stage expansions
# ---------------------------------------------------------------------------

@njit(cache=True)
def _chol_flag(A, L):
    """Lower Cholesky factor of A into L; False if A is not positive
    definite."""
    n = A.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _chol_solve(L, B):
    """Solve L L^T X = B column by column (L lower triangular)."""
    n, m = B.shape
    X = B.copy()
    for c in range(m):
        for i in range(n):
            s = X[i, c]
            for k in range(i):
                s -= L[i, k] * X[k, c]
            X[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = X[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def lqr_backward_sweep(As, Bs, lxs, lus, lxxs, luus, luxs, VxT, VxxT, fs,
                       reg):
    """Defect-aware Riccati recursion over stacked stage data.

    Returns (ks, Ks, exp1, exp2, ok); ok is False when some regularized Quu
    loses positive definiteness, in which case the caller should raise reg.
    """
    T, nx, nu = As.shape[0], As.shape[1], Bs.shape[2]
    ks = np.zeros((T, nu))
    Ks = np.zeros((T, nu, nx))
    Vx = VxT.copy()
    Vxx = VxxT.copy()
    exp1 = 0.0
    exp2 = 0.0
    L = np.empty((nu, nu))
    for t in range(T - 1, -1, -1):
        A = As[t]
        B = Bs[t]
        # value gradient seen through the defect at the tail of this stage
        Vxg = Vx + Vxx @ fs[t]
        VA = Vxx @ A
        VB = Vxx @ B
        Qx = lxs[t] + A.T @ Vxg
        Qu = lus[t] + B.T @ Vxg
        Qxx = lxxs[t] + A.T @ VA
        Quu = luus[t] + B.T @ VB
        for i in range(nu):
            Quu[i, i] += reg
        Qux = luxs[t] + B.T @ VA
        L[:] = 0.0
        if not _chol_flag(Quu, L):
            return ks, Ks, 0.0, 0.0, False
        rhs = np.empty((nu, 1 + nx))
        rhs[:, 0] = Qu
        rhs[:, 1:] = Qux
        sol = _chol_solve(L, rhs)
        k = -sol[:, 0]
        K = -sol[:, 1:]
        ks[t] = k
        Ks[t] = K
        exp1 += k @ Qu
        exp2 += k @ (Quu @ k)
        Vx = Qx + K.T @ (Quu @ k) + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ (Quu @ K) + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return ks, Ks, exp1, exp2, True
