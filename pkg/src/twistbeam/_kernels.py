"""Numba kernels for serial-chain dynamics.

Conventions: joint ``i`` connects body ``i - 1`` (or the world for i = 0) to
body ``i``. The joint frame sits at ``p0[i]`` with orientation ``R0[i]`` in the
parent body frame; body ``i`` is the joint frame after the joint motion.
Revolute joints rotate by ``rest[i] + q[i]`` about ``axis[i]``; prismatic joints
translate by ``q[i]``. Everything is SI and world-frame unless noted.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

REVOLUTE = 0
PRISMATIC = 1

SEMI_IMPLICIT_EULER = 0
RK4 = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_SINGULAR = 2


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _rot(axis, angle, out):
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out[0, 0] = c + x * x * C
    out[0, 1] = x * y * C - z * s
    out[0, 2] = x * z * C + y * s
    out[1, 0] = y * x * C + z * s
    out[1, 1] = c + y * y * C
    out[1, 2] = y * z * C - x * s
    out[2, 0] = z * x * C - y * s
    out[2, 1] = z * y * C + x * s
    out[2, 2] = c + z * z * C


@njit(cache=True)
def forward_kinematics(jtype, R0, p0, axis, rest, q, qd, R, x, z, w, v):
    """Body orientations, origins, joint axes, angular and origin velocities."""
    n = q.shape[0]
    Rj = np.empty((3, 3))
    Rr = np.empty((3, 3))
    tmp = np.empty(3)
    for i in range(n):
        # joint frame orientation
        if i == 0:
            for a in range(3):
                for c in range(3):
                    Rj[a, c] = R0[i, a, c]
                x[i, a] = p0[i, a]
                w[i, a] = 0.0
                v[i, a] = 0.0
        else:
            for a in range(3):
                for c in range(3):
                    s = 0.0
                    for d in range(3):
                        s += R[i - 1, a, d] * R0[i, d, c]
                    Rj[a, c] = s
                s = 0.0
                for d in range(3):
                    s += R[i - 1, a, d] * p0[i, d]
                x[i, a] = x[i - 1, a] + s
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += Rj[a, d] * axis[i, d]
            z[i, a] = s
        if jtype[i] == REVOLUTE:
            _rot(axis[i], rest[i] + q[i], Rr)
            for a in range(3):
                for c in range(3):
                    s = 0.0
                    for d in range(3):
                        s += Rj[a, d] * Rr[d, c]
                    R[i, a, c] = s
        else:
            for a in range(3):
                for c in range(3):
                    R[i, a, c] = Rj[a, c]
                x[i, a] += z[i, a] * q[i]
        if i > 0:
            for a in range(3):
                tmp[a] = x[i, a] - x[i - 1, a]
            _cross(w[i - 1], tmp, v[i])
            for a in range(3):
                v[i, a] += v[i - 1, a]
                w[i, a] = w[i - 1, a]
        if jtype[i] == REVOLUTE:
            for a in range(3):
                w[i, a] += z[i, a] * qd[i]
        else:
            for a in range(3):
                v[i, a] += z[i, a] * qd[i]


@njit(cache=True)
def rnea(jtype, mass, com, Ic, R, x, z, w, qd, qdd, gravity, fext, next_, tau):
    """Inverse dynamics given kinematics from :func:`forward_kinematics`.

    ``fext``/``next_`` hold external forces and moments (about the body
    origin) acting on each body. Gravity enters as a base acceleration.
    Returns through ``tau`` the generalized forces M qdd + C + g - J^T f_ext
    (armature excluded).
    """
    n = qd.shape[0]
    al = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    fc = np.zeros((n, 3))
    nc = np.zeros((n, 3))
    rc = np.empty(3)
    r = np.empty(3)
    t1 = np.empty(3)
    t2 = np.empty(3)
    ac = np.empty(3)
    Iw = np.empty((3, 3))
    Iwv = np.empty(3)
    for i in range(n):
        if i == 0:
            for a in range(3):
                acc[i, a] = -gravity[a]
                al[i, a] = 0.0
            wp = np.zeros(3)
        else:
            for a in range(3):
                r[a] = x[i, a] - x[i - 1, a]
            _cross(al[i - 1], r, t1)
            _cross(w[i - 1], r, t2)
            wp = w[i - 1]
            _cross(wp, t2, ac)
            for a in range(3):
                acc[i, a] = acc[i - 1, a] + t1[a] + ac[a]
                al[i, a] = al[i - 1, a]
        if jtype[i] == REVOLUTE:
            _cross(wp, z[i], t1)
            for a in range(3):
                al[i, a] += z[i, a] * qdd[i] + t1[a] * qd[i]
        else:
            _cross(wp, z[i], t1)
            for a in range(3):
                acc[i, a] += z[i, a] * qdd[i] + 2.0 * t1[a] * qd[i]
        # centre of mass acceleration
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += R[i, a, d] * com[i, d]
            rc[a] = s
        _cross(w[i], rc, t1)
        _cross(w[i], t1, t2)
        _cross(al[i], rc, t1)
        for a in range(3):
            ac[a] = acc[i, a] + t1[a] + t2[a]
        # world inertia about the COM
        for a in range(3):
            for c in range(3):
                s = 0.0
                for d in range(3):
                    for e in range(3):
                        s += R[i, a, d] * Ic[i, d, e] * R[i, c, e]
                Iw[a, c] = s
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += Iw[a, d] * w[i, d]
            Iwv[a] = s
        _cross(w[i], Iwv, t1)
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += Iw[a, d] * al[i, d]
            f = mass[i] * ac[a]
            fc[i, a] = f
            nc[i, a] = s + t1[a]
        for a in range(3):
            t2[a] = fc[i, a]
        _cross(rc, t2, t1)
        for a in range(3):
            nc[i, a] += t1[a]
            fc[i, a] -= fext[i, a]
            nc[i, a] -= next_[i, a]
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            for a in range(3):
                r[a] = x[i + 1, a] - x[i, a]
            _cross(r, fc[i + 1], t1)
            for a in range(3):
                fc[i, a] += fc[i + 1, a]
                nc[i, a] += nc[i + 1, a] + t1[a]
        s = 0.0
        if jtype[i] == REVOLUTE:
            for a in range(3):
                s += z[i, a] * nc[i, a]
        else:
            for a in range(3):
                s += z[i, a] * fc[i, a]
        tau[i] = s


@njit(cache=True)
def mass_matrix(jtype, mass, com, Ic, arm, R, x, z, M):
    """Joint-space inertia matrix from body Jacobians, armature on the diagonal."""
    n = jtype.shape[0]
    Jv = np.zeros((n, 3))
    Jw = np.zeros((n, 3))
    c = np.empty(3)
    r = np.empty(3)
    t = np.empty(3)
    Iw = np.empty((3, 3))
    IJ = np.empty((n, 3))
    for i in range(n):
        for j in range(n):
            M[i, j] = 0.0
        M[i, i] = arm[i]
    for b in range(n):
        if mass[b] == 0.0:
            continue
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += R[b, a, d] * com[b, d]
            c[a] = x[b, a] + s
        for a in range(3):
            for e in range(3):
                s = 0.0
                for d in range(3):
                    for f in range(3):
                        s += R[b, a, d] * Ic[b, d, f] * R[b, e, f]
                Iw[a, e] = s
        for j in range(b + 1):
            if jtype[j] == REVOLUTE:
                for a in range(3):
                    r[a] = c[a] - x[j, a]
                _cross(z[j], r, t)
                for a in range(3):
                    Jv[j, a] = t[a]
                    Jw[j, a] = z[j, a]
            else:
                for a in range(3):
                    Jv[j, a] = z[j, a]
                    Jw[j, a] = 0.0
            for a in range(3):
                s = 0.0
                for d in range(3):
                    s += Iw[a, d] * Jw[j, d]
                IJ[j, a] = s
        for j in range(b + 1):
            for l in range(b + 1):
                s = 0.0
                for a in range(3):
                    s += mass[b] * Jv[j, a] * Jv[l, a] + Jw[j, a] * IJ[l, a]
                M[j, l] += s


@njit(cache=True)
def _cholesky_solve(A, rhs, out):
    """Solve A out = rhs in place for SPD ``A`` (destroyed). False if not SPD."""
    n = rhs.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if not (s > 0.0):
            return False
        d = math.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            A[i, j] = s / d
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= A[i, k] * out[k]
        out[i] = s / A[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= A[k, i] * out[k]
        out[i] = s / A[i, i]
    return True


@njit(cache=True)
def contact_point_force(gap, gap_rate, vt, kn, cn, mu, vreg, ft):
    """Normal force magnitude and tangential force vector (written to ``ft``)."""
    fn = 0.0
    if gap <= 0.0:
        fn = -kn * gap - cn * gap_rate
        if fn < 0.0:
            fn = 0.0
    speed = math.sqrt(vt[0] * vt[0] + vt[1] * vt[1] + vt[2] * vt[2])
    scale = speed if speed > vreg else vreg
    for a in range(3):
        ft[a] = -mu * fn * vt[a] / scale
    return fn


@njit(cache=True)
def point_state(R, x, w, v, body, off, p, pv):
    tmp = np.empty(3)
    for a in range(3):
        s = 0.0
        for d in range(3):
            s += R[body, a, d] * off[d]
        tmp[a] = s
        p[a] = x[body, a] + s
    _cross(w[body], tmp, pv)
    for a in range(3):
        pv[a] += v[body, a]


@njit(cache=True)
def apply_loads(
    t, R, x, w, v,
    cbody, coff, cground, cnormal, ctangent, cparams,
    fbody, foff, fvec, rparams, wext,
    fext, next_, crec,
):
    """Accumulate contact, constant and rotating point forces on bodies.

    cparams[k] = (kn, cn, mu, vreg, multiplicity) per point; rparams = (body, magnitude,
    omega, e1x, e1y, e1z, e2x, e2y, e2z, ox, oy, oz). ``crec[k]`` receives
    (gap, fn, ft along the tangent, in-contact) for contact point ``k``.
    """
    n = fext.shape[0]
    for i in range(n):
        for a in range(3):
            fext[i, a] = wext[i, a]
            next_[i, a] = wext[i, 3 + a]
    p = np.empty(3)
    pv = np.empty(3)
    vt = np.empty(3)
    ft = np.empty(3)
    F = np.empty(3)
    r = np.empty(3)
    m = np.empty(3)
    for k in range(cbody.shape[0]):
        kn, cn, mu, vreg, mult = cparams[k, 0], cparams[k, 1], cparams[k, 2], cparams[k, 3], cparams[k, 4]
        b = cbody[k]
        point_state(R, x, w, v, b, coff[k], p, pv)
        gap = -cground[k]
        vn = 0.0
        for a in range(3):
            gap += cnormal[a] * p[a]
            vn += cnormal[a] * pv[a]
        for a in range(3):
            vt[a] = pv[a] - vn * cnormal[a]
        fn = contact_point_force(gap, vn, vt, kn, cn, mu, vreg, ft)
        ftan = 0.0
        for a in range(3):
            F[a] = mult * (fn * cnormal[a] + ft[a])
            ftan += ctangent[a] * ft[a]
            r[a] = p[a] - x[b, a]
        _cross(r, F, m)
        for a in range(3):
            fext[b, a] += F[a]
            next_[b, a] += m[a]
        crec[k, 0] = gap
        crec[k, 1] = fn
        crec[k, 2] = ftan
        crec[k, 3] = 1.0 if fn > 0.0 else 0.0
    for k in range(fbody.shape[0]):
        b = fbody[k]
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += R[b, a, d] * foff[k, d]
            r[a] = s
        _cross(r, fvec[k], m)
        for a in range(3):
            fext[b, a] += fvec[k, a]
            next_[b, a] += m[a]
    if rparams[1] != 0.0:
        b = int(rparams[0])
        ph = rparams[2] * t
        cph = math.cos(ph)
        sph = math.sin(ph)
        for a in range(3):
            F[a] = rparams[1] * (cph * rparams[3 + a] + sph * rparams[6 + a])
            s = 0.0
            for d in range(3):
                s += R[b, a, d] * rparams[9 + d]
            r[a] = s
        _cross(r, F, m)
        for a in range(3):
            fext[b, a] += F[a]
            next_[b, a] += m[a]


@njit(cache=True)
def drive_state(dparams, t):
    """Prescribed joint position, velocity, acceleration: A sin(2 pi f t + phase)."""
    A, f, phase = dparams[1], dparams[2], dparams[3]
    om = 2.0 * math.pi * f
    arg = om * t + phase
    s = math.sin(arg)
    return A * s, A * om * math.cos(arg), -A * om * om * s


@njit(cache=True)
def accelerations(
    t, q, qd, jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm, gravity, dparams,
    cbody, coff, cground, cnormal, ctangent, cparams, fbody, foff, fvec, rparams, wext,
    dt_implicit, R, x, z, w, v, fext, next_, crec, Mw, tau, qdd, out,
):
    """Free-joint accelerations. With ``dt_implicit > 0`` joint damping is
    taken implicitly over one step of that size (returns the velocity
    increment divided by dt). Returns False if the system matrix is singular.
    """
    n = q.shape[0]
    dj = int(dparams[0])
    forward_kinematics(jtype, R0, p0, axis, rest, q, qd, R, x, z, w, v)
    apply_loads(t, R, x, w, v, cbody, coff, cground, cnormal, ctangent, cparams,
                fbody, foff, fvec, rparams, wext, fext, next_, crec)
    for i in range(n):
        qdd[i] = 0.0
    if dj >= 0:
        qdd[dj] = drive_state(dparams, t)[2]
    rnea(jtype, mass, com, Ic, R, x, z, w, qd, qdd, gravity, fext, next_, tau)
    mass_matrix(jtype, mass, com, Ic, arm, R, x, z, Mw)
    nf = n - 1 if dj >= 0 else n
    A = np.empty((nf, nf))
    rhs = np.empty(nf)
    sol = np.empty(nf)
    ii = 0
    for i in range(n):
        if i == dj:
            continue
        jj = 0
        for j in range(n):
            if j == dj:
                continue
            A[ii, jj] = Mw[i, j]
            jj += 1
        A[ii, ii] += dt_implicit * bb[i]
        rhs[ii] = -kk[i] * q[i] - bb[i] * qd[i] - tau[i]
        ii += 1
    if not _cholesky_solve(A, rhs, sol):
        return False
    ii = 0
    for i in range(n):
        if i == dj:
            out[i] = qdd[i]
            continue
        out[i] = sol[ii]
        ii += 1
    return True


@njit(cache=True)
def simulate(
    q0, qd0, t0, dt, nsteps, stride, integrator,
    jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm, gravity, dparams,
    cbody, coff, cground, cnormal, ctangent, cparams, fbody, foff, fvec, rparams, wext,
    tbody, toff,
):
    """Fixed-step integration with records every ``stride`` steps.

    Returns (status, fail_step, fail_joint, times, qs, qds, points, contacts, q, qd).
    """
    n = q0.shape[0]
    nrec = nsteps // stride + 1
    times = np.empty(nrec)
    qs = np.empty((nrec, n))
    qds = np.empty((nrec, n))
    pts = np.empty((nrec, tbody.shape[0], 3))
    crecs = np.empty((nrec, cbody.shape[0], 4))
    R = np.empty((n, 3, 3))
    x = np.empty((n, 3))
    z = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    fext = np.empty((n, 3))
    next_ = np.empty((n, 3))
    crec = np.zeros((cbody.shape[0], 4))
    Mw = np.empty((n, n))
    tau = np.empty(n)
    qddw = np.empty(n)
    a1 = np.empty(n)
    a2 = np.empty(n)
    a3 = np.empty(n)
    a4 = np.empty(n)
    qt = np.empty(n)
    v2 = np.empty(n)
    v3 = np.empty(n)
    v4 = np.empty(n)
    p = np.empty(3)
    pv = np.empty(3)
    q = q0.copy()
    qd = qd0.copy()
    dj = int(dparams[0])
    if dj >= 0:
        q[dj], qd[dj], _ = drive_state(dparams, t0)
    status = STATUS_OK
    fail_step = -1
    fail_joint = -1
    irec = 0
    dt_imp = dt if integrator == SEMI_IMPLICIT_EULER else 0.0
    for step in range(nsteps + 1):
        t = t0 + step * dt
        record = step % stride == 0
        if step == nsteps and not record:
            break
        if step < nsteps or record:
            ok = accelerations(
                t, q, qd, jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm, gravity, dparams,
                cbody, coff, cground, cnormal, ctangent, cparams, fbody, foff, fvec, rparams, wext,
                dt_imp,
                R, x, z, w, v, fext, next_, crec, Mw, tau, qddw, a1,
            )
            if not ok:
                status = STATUS_SINGULAR
                fail_step = step
                break
        if record:
            times[irec] = t
            for i in range(n):
                qs[irec, i] = q[i]
                qds[irec, i] = qd[i]
            for k in range(tbody.shape[0]):
                point_state(R, x, w, v, tbody[k], toff[k], p, pv)
                for a in range(3):
                    pts[irec, k, a] = p[a]
            for k in range(cbody.shape[0]):
                for a in range(4):
                    crecs[irec, k, a] = crec[k, a]
            irec += 1
        if step == nsteps:
            break
        if integrator == SEMI_IMPLICIT_EULER:
            for i in range(n):
                if i == dj:
                    continue
                qd[i] += dt * a1[i]
                q[i] += dt * qd[i]
        else:
            for i in range(n):
                qt[i] = q[i] + 0.5 * dt * qd[i]
                v2[i] = qd[i] + 0.5 * dt * a1[i]
            if dj >= 0:
                qt[dj], v2[dj], _ = drive_state(dparams, t + 0.5 * dt)
            accelerations(t + 0.5 * dt, qt, v2, jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm,
                          gravity, dparams, cbody, coff, cground, cnormal, ctangent, cparams,
                          fbody, foff, fvec, rparams, wext, 0.0, R, x, z, w, v, fext, next_, crec, Mw,
                          tau, qddw, a2)
            for i in range(n):
                qt[i] = q[i] + 0.5 * dt * v2[i]
                v3[i] = qd[i] + 0.5 * dt * a2[i]
            if dj >= 0:
                qt[dj], v3[dj], _ = drive_state(dparams, t + 0.5 * dt)
            accelerations(t + 0.5 * dt, qt, v3, jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm,
                          gravity, dparams, cbody, coff, cground, cnormal, ctangent, cparams,
                          fbody, foff, fvec, rparams, wext, 0.0, R, x, z, w, v, fext, next_, crec, Mw,
                          tau, qddw, a3)
            for i in range(n):
                qt[i] = q[i] + dt * v3[i]
                v4[i] = qd[i] + dt * a3[i]
            if dj >= 0:
                qt[dj], v4[dj], _ = drive_state(dparams, t + dt)
            accelerations(t + dt, qt, v4, jtype, R0, p0, axis, rest, mass, com, Ic, kk, bb, arm,
                          gravity, dparams, cbody, coff, cground, cnormal, ctangent, cparams,
                          fbody, foff, fvec, rparams, wext, 0.0, R, x, z, w, v, fext, next_, crec, Mw,
                          tau, qddw, a4)
            for i in range(n):
                if i == dj:
                    continue
                q[i] += dt / 6.0 * (qd[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])
                qd[i] += dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
        if dj >= 0:
            q[dj], qd[dj], _ = drive_state(dparams, t0 + (step + 1) * dt)
        for i in range(n):
            if not (math.isfinite(q[i]) and math.isfinite(qd[i])):
                status = STATUS_NONFINITE
                fail_step = step + 1
                fail_joint = i
                break
        if status != STATUS_OK:
            break
    return status, fail_step, fail_joint, times[:irec], qs[:irec], qds[:irec], pts[:irec], crecs[:irec], q, qd


@njit(cache=True)
def energy(q, qd, jtype, R0, p0, axis, rest, mass, com, Ic, kk, arm, gravity):
    """Kinetic, gravitational and joint-spring energy."""
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    x = np.empty((n, 3))
    z = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    forward_kinematics(jtype, R0, p0, axis, rest, q, qd, R, x, z, w, v)
    rc = np.empty(3)
    t = np.empty(3)
    ke = 0.0
    pe = 0.0
    for i in range(n):
        ke += 0.5 * arm[i] * qd[i] * qd[i]
        pe += 0.5 * kk[i] * q[i] * q[i]
        if mass[i] == 0.0:
            continue
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += R[i, a, d] * com[i, d]
            rc[a] = s
        _cross(w[i], rc, t)
        vc2 = 0.0
        for a in range(3):
            vc = v[i, a] + t[a]
            vc2 += vc * vc
            pe -= mass[i] * gravity[a] * (x[i, a] + rc[a])
        # rotational part with the body-frame inertia
        wb = np.empty(3)
        for a in range(3):
            s = 0.0
            for d in range(3):
                s += R[i, d, a] * w[i, d]
            wb[a] = s
        rot = 0.0
        for a in range(3):
            for d in range(3):
                rot += wb[a] * Ic[i, a, d] * wb[d]
        ke += 0.5 * mass[i] * vc2 + 0.5 * rot
    return ke, pe
