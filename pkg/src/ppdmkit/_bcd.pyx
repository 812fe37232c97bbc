# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled block-coordinate descent kernel (same contract as ``_bcd_py``)."""
import numpy as np
from libc.math cimport sqrt, fabs

cdef enum:
    MAXD = 3
cdef double RIDGE = 1e-12


cdef void sym_eig(double[MAXD][MAXD] a_in, int d, double* w, double[MAXD][MAXD] v) noexcept nogil:
    # cyclic Jacobi; eigenvalues ascending, eigenvectors in columns of v
    cdef double a[MAXD][MAXD]
    cdef int p, q, k, sweep
    cdef double off, theta, t, c, s, akp, akq, tmp, norm2
    norm2 = 0.0
    for p in range(d):
        for q in range(d):
            a[p][q] = a_in[p][q]
            v[p][q] = 1.0 if p == q else 0.0
            norm2 += a[p][q] * a[p][q]
    for sweep in range(60):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                off += a[p][q] * a[p][q]
        if off == 0.0 or off <= 1e-36 * norm2:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if a[p][q] == 0.0:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q])
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(d):
                    akp = a[k][p]
                    akq = a[k][q]
                    a[k][p] = c * akp - s * akq
                    a[k][q] = s * akp + c * akq
                for k in range(d):
                    akp = a[p][k]
                    akq = a[q][k]
                    a[p][k] = c * akp - s * akq
                    a[q][k] = s * akp + c * akq
                for k in range(d):
                    akp = v[k][p]
                    akq = v[k][q]
                    v[k][p] = c * akp - s * akq
                    v[k][q] = s * akp + c * akq
    for p in range(d):
        w[p] = a[p][p]
    # insertion sort ascending
    for p in range(1, d):
        q = p
        while q > 0 and w[q - 1] > w[q]:
            tmp = w[q]; w[q] = w[q - 1]; w[q - 1] = tmp
            for k in range(d):
                tmp = v[k][q]; v[k][q] = v[k][q - 1]; v[k][q - 1] = tmp
            q -= 1


cdef void sphere_qmin(double[MAXD][MAXD] a, double* b, int d, double* out) noexcept nogil:
    cdef double w[MAXD]
    cdef double v[MAXD][MAXD]
    cdef double beta[MAXD]
    cdef double gaps[MAXD]
    cdef double y[MAXD]
    cdef int bottom[MAXD]
    cdef int k, l, it, first_bottom
    cdef double bnorm, scale, bmin2, frest, lo, hi, t, f, phi, fp, dphi, nxt, term, den, nrm
    sym_eig(a, d, w, v)
    bnorm = 0.0
    scale = 1.0
    for k in range(d):
        beta[k] = 0.0
        for l in range(d):
            beta[k] += v[l][k] * b[l]
        bnorm += beta[k] * beta[k]
        if fabs(w[k]) > scale:
            scale = fabs(w[k])
    bnorm = sqrt(bnorm)
    if bnorm > scale:
        scale = bnorm
    bmin2 = 0.0
    frest = 0.0
    first_bottom = -1
    for k in range(d):
        gaps[k] = w[k] - w[0]
        bottom[k] = gaps[k] <= 1e-12 * scale
        if bottom[k]:
            bmin2 += beta[k] * beta[k]
            if first_bottom < 0:
                first_bottom = k
        else:
            frest += beta[k] * beta[k] / (gaps[k] * gaps[k])
    if bmin2 == 0.0 and frest <= 1.0:
        for k in range(d):
            y[k] = 0.0 if bottom[k] else beta[k] / gaps[k]
        y[first_bottom] = sqrt(1.0 - frest) if frest < 1.0 else 0.0
    else:
        lo = sqrt(bmin2)
        hi = bnorm
        t = hi
        for it in range(100):
            f = 0.0
            fp = 0.0
            for k in range(d):
                den = gaps[k] + t
                term = beta[k] / den
                f += term * term
                fp += term * term / den
            fp *= -2.0
            phi = 1.0 / sqrt(f) - 1.0
            if fabs(phi) < 1e-15:
                break
            if phi < 0.0:
                lo = t
            else:
                hi = t
            dphi = -0.5 * fp / (f * sqrt(f))
            if dphi > 0.0:
                nxt = t - phi / dphi
            else:
                nxt = 0.5 * (lo + hi)
            if not (lo < nxt and nxt < hi):
                nxt = 0.5 * (lo + hi)
            if hi - lo <= 1e-16 * hi:
                t = nxt
                break
            t = nxt
        for k in range(d):
            y[k] = beta[k] / (gaps[k] + t)
    nrm = 0.0
    for l in range(d):
        out[l] = 0.0
        for k in range(d):
            out[l] += v[l][k] * y[k]
        nrm += out[l] * out[l]
    nrm = sqrt(nrm)
    for l in range(d):
        out[l] /= nrm


cdef int chol_solve(double[MAXD][MAXD] a_in, double* b, int d, double* x) noexcept nogil:
    # returns 0 if a_in is not numerically positive definite
    cdef double l[MAXD][MAXD]
    cdef double y[MAXD]
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = a_in[i][j]
            for k in range(j):
                s -= l[i][k] * l[j][k]
            if i == j:
                if s <= 0.0:
                    return 0
                l[i][i] = sqrt(s)
            else:
                l[i][j] = s / l[j][j]
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= l[i][k] * y[k]
        y[i] = s / l[i][i]
    for i in range(d - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, d):
            s -= l[k][i] * x[k]
        x[i] = s / l[i][i]
    return 1


cdef double cost_of(const double[:, ::1] D, const double[:, ::1] W, double[:, ::1] R,
                    double[:, ::1] N, double[::1] q, int n, int k, int d) noexcept nogil:
    cdef double total = 0.0, e
    cdef int i, j, a
    for i in range(n):
        for j in range(k):
            if W[i, j] == 0.0:
                continue
            e = D[i, j] - q[j]
            for a in range(d):
                e += N[j, a] * R[i, a]
            total += W[i, j] * e * e
    return total


def run(D, W, R, N, q, fix_n, fix_q, int max_iters, double cost_tol, double step_tol):
    cdef const double[:, ::1] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    Ra = np.array(R, dtype=np.float64, order="C")
    Na = np.array(N, dtype=np.float64, order="C")
    qa = np.array(q, dtype=np.float64)
    cdef double[:, ::1] Rv = Ra
    cdef double[:, ::1] Nv = Na
    cdef double[::1] qv = qa
    cdef const unsigned char[::1] fn = np.ascontiguousarray(fix_n, dtype=np.uint8)
    cdef const unsigned char[::1] fq = np.ascontiguousarray(fix_q, dtype=np.uint8)
    costs_a = np.empty(max_iters + 1, dtype=np.float64)
    cdef double[::1] costs = costs_a
    cdef int n = Dv.shape[0], k = Dv.shape[1], d = Rv.shape[1]
    cdef int i, j, a, b2, it = 0
    cdef int converged = 0, ridge_used = 0
    cdef double A[MAXD][MAXD]
    cdef double rhs[MAXD]
    cdef double x[MAXD]
    cdef double rbar[MAXD]
    cdef double w, wsum, dbar, e, cost, prev, step, diff, val
    if d > MAXD:
        raise ValueError("kernel supports dimension <= 3")
    with nogil:
        costs[0] = cost_of(Dv, Wv, Rv, Nv, qv, n, k, d)
        for it in range(1, max_iters + 1):
            step = 0.0
            # waypoint step
            for i in range(n):
                for a in range(d):
                    rhs[a] = 0.0
                    for b2 in range(d):
                        A[a][b2] = 0.0
                for j in range(k):
                    w = Wv[i, j]
                    if w == 0.0:
                        continue
                    e = qv[j] - Dv[i, j]
                    for a in range(d):
                        rhs[a] += w * Nv[j, a] * e
                        for b2 in range(d):
                            A[a][b2] += w * Nv[j, a] * Nv[j, b2]
                if not chol_solve(A, rhs, d, x):
                    ridge_used = 1
                    for a in range(d):
                        A[a][a] += RIDGE
                    chol_solve(A, rhs, d, x)
                for a in range(d):
                    diff = fabs(x[a] - Rv[i, a])
                    if diff > step:
                        step = diff
                    Rv[i, a] = x[a]
            # plane step
            for j in range(k):
                wsum = 0.0
                for i in range(n):
                    wsum += Wv[i, j]
                if not fn[j]:
                    for a in range(d):
                        rhs[a] = 0.0
                        rbar[a] = 0.0
                        for b2 in range(d):
                            A[a][b2] = 0.0
                    if fq[j]:
                        for i in range(n):
                            w = Wv[i, j]
                            if w == 0.0:
                                continue
                            e = Dv[i, j] - qv[j]
                            for a in range(d):
                                rhs[a] -= w * e * Rv[i, a]
                                for b2 in range(d):
                                    A[a][b2] += w * Rv[i, a] * Rv[i, b2]
                    else:
                        dbar = 0.0
                        for i in range(n):
                            w = Wv[i, j]
                            dbar += w * Dv[i, j]
                            for a in range(d):
                                rbar[a] += w * Rv[i, a]
                        dbar /= wsum
                        for a in range(d):
                            rbar[a] /= wsum
                        for i in range(n):
                            w = Wv[i, j]
                            if w == 0.0:
                                continue
                            e = Dv[i, j] - dbar
                            for a in range(d):
                                rhs[a] -= w * e * (Rv[i, a] - rbar[a])
                                for b2 in range(d):
                                    A[a][b2] += w * (Rv[i, a] - rbar[a]) * (Rv[i, b2] - rbar[b2])
                    sphere_qmin(A, rhs, d, x)
                    for a in range(d):
                        diff = fabs(x[a] - Nv[j, a])
                        if diff > step:
                            step = diff
                        Nv[j, a] = x[a]
                if not fq[j]:
                    val = 0.0
                    for i in range(n):
                        w = Wv[i, j]
                        if w == 0.0:
                            continue
                        e = Dv[i, j]
                        for a in range(d):
                            e += Rv[i, a] * Nv[j, a]
                        val += w * e
                    val /= wsum
                    diff = fabs(val - qv[j])
                    if diff > step:
                        step = diff
                    qv[j] = val
            cost = cost_of(Dv, Wv, Rv, Nv, qv, n, k, d)
            prev = costs[it - 1]
            costs[it] = cost
            if cost == 0.0 or prev - cost <= cost_tol * prev or step < step_tol:
                converged = 1
                break
    return Ra, Na, qa, costs_a[:it + 1].copy(), it, bool(converged), bool(ridge_used)
