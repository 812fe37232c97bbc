"""Pure numpy block-coordinate descent for the masked PPDM least-squares cost.

Reference implementation of the compiled kernel in ``_bcd.pyx``; both expose
``run(D, W, R, N, q, fix_n, fix_q, max_iters, cost_tol, step_tol)`` and must
follow the same update order.
"""
import numpy as np

RIDGE = 1e-12


def sphere_quadratic_min(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Global minimiser of ``n^T A n - 2 b^T n`` over unit vectors ``n``.

    ``A`` must be symmetric positive semidefinite. Solves ``(A + mu I) n = b``
    with ``mu >= -lambda_min(A)`` by a safeguarded Newton iteration on the
    secular equation, and handles the hard case where ``b`` has no component
    along the bottom eigenvector.
    """
    w, v = np.linalg.eigh(a)
    beta = v.T @ b
    bnorm = float(np.sqrt(beta @ beta))
    scale = max(float(np.max(np.abs(w))), bnorm, 1.0)
    gaps = w - w[0]
    bottom = gaps <= 1e-12 * scale
    bmin2 = float(np.sum(beta[bottom] ** 2))
    top = ~bottom
    frest = float(np.sum(beta[top] ** 2 / gaps[top] ** 2)) if top.any() else 0.0
    if bmin2 == 0.0 and frest <= 1.0:
        y = np.zeros_like(beta)
        y[top] = beta[top] / gaps[top]
        y[np.argmax(bottom)] = np.sqrt(max(0.0, 1.0 - frest))
    else:
        lo, hi = np.sqrt(bmin2), bnorm
        t = hi
        for _ in range(100):
            den = gaps + t
            terms = beta / den
            f = float(terms @ terms)
            phi = 1.0 / np.sqrt(f) - 1.0
            if abs(phi) < 1e-15:
                break
            if phi < 0.0:
                lo = t
            else:
                hi = t
            fp = -2.0 * float(np.sum(terms * terms / den))
            dphi = -0.5 * fp / (f * np.sqrt(f))
            nxt = t - phi / dphi if dphi > 0 else 0.5 * (lo + hi)
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
            if hi - lo <= 1e-16 * hi:
                t = nxt
                break
            t = nxt
        y = beta / (gaps + t)
    n = v @ y
    return n / np.linalg.norm(n)


def _cost(D, W, R, N, q):
    e = D - q[None, :] + R @ N.T
    return float(np.sum(W * e * e))


def run(D, W, R, N, q, fix_n, fix_q, max_iters, cost_tol, step_tol):
    R = np.array(R, dtype=float)
    N = np.array(N, dtype=float)
    q = np.array(q, dtype=float)
    n_pts, k = D.shape
    d = R.shape[1]
    eye = np.eye(d)
    costs = [_cost(D, W, R, N, q)]
    ridge_used = False
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r_old, n_old, q_old = R.copy(), N.copy(), q.copy()
        # waypoint step: per-waypoint normal equations
        gram = np.einsum("ij,ja,jb->iab", W, N, N)
        rhs = np.einsum("ij,ja->ia", W * (q[None, :] - D), N)
        for i in range(n_pts):
            try:
                c = np.linalg.cholesky(gram[i])
                R[i] = np.linalg.solve(c.T, np.linalg.solve(c, rhs[i]))
            except np.linalg.LinAlgError:
                ridge_used = True
                R[i] = np.linalg.solve(gram[i] + RIDGE * eye, rhs[i])
        # plane step: normal (offset profiled out unless fixed), then offset
        for j in range(k):
            w = W[:, j]
            wsum = w.sum()
            dj = D[:, j]
            if not fix_n[j]:
                if fix_q[j]:
                    a = (R * w[:, None]).T @ R
                    b = -((dj - q[j]) * w) @ R
                else:
                    rbar = (w @ R) / wsum
                    dbar = (w @ dj) / wsum
                    rc = R - rbar
                    a = (rc * w[:, None]).T @ rc
                    b = -((dj - dbar) * w) @ rc
                N[j] = sphere_quadratic_min(a, b)
            if not fix_q[j]:
                q[j] = (w @ (dj + R @ N[j])) / wsum
        cost = _cost(D, W, R, N, q)
        prev = costs[-1]
        costs.append(cost)
        step = max(np.max(np.abs(R - r_old)), np.max(np.abs(N - n_old)), np.max(np.abs(q - q_old)))
        if cost == 0.0 or prev - cost <= cost_tol * prev or step < step_tol:
            converged = True
            break
    return R, N, q, np.array(costs), it, converged, ridge_used
