"""Batched Levenberg-Marquardt for small dense least-squares problems.

Each batch item is an independent fit with its own damping; items that stop
improving or reach the step tolerance are frozen while the rest continue.
"""

from __future__ import annotations

import numpy as np


def levenberg_marquardt(model, params, data, weights=None, max_iter=20, tol=1e-10,
                        lam0=1e-3, lam_up=10.0, lam_down=10.0):
    """Minimize ``sum w (model(p) - data)^2`` per batch item.

    ``model(p, idx)`` must return ``(values, jacobian)`` with shapes ``(K, M)``
    and ``(K, M, P)`` for parameters ``p`` of shape ``(K, P)`` belonging to
    batch items ``idx``.

    Returns ``(params, converged, iterations)``.
    """
    p = np.array(params, dtype=np.float64, copy=True)
    data = np.asarray(data, dtype=np.float64)
    w = np.ones_like(data) if weights is None else np.asarray(weights, dtype=np.float64)
    batch, n_par = p.shape
    lam = np.full(batch, lam0)
    active = np.ones(batch, dtype=bool)
    converged = np.zeros(batch, dtype=bool)
    iterations = np.zeros(batch, dtype=np.int64)

    values, jac = model(p, np.arange(batch))
    resid = data - values
    cost = np.sum(w * resid ** 2, axis=-1)
    eye = np.eye(n_par)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        jw = jac[idx] * w[idx, :, None]
        jtj = np.einsum("bmi,bmj->bij", jw, jac[idx])
        jtr = np.einsum("bmi,bm->bi", jw, resid[idx])
        diag = np.einsum("bii->bi", jtj)
        a = jtj + lam[idx, None, None] * (diag[:, :, None] * eye + 1e-12 * eye)
        try:
            step = np.linalg.solve(a, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(m, r, rcond=None)[0] for m, r in zip(a, jtr)])
        trial = p[idx] + step
        t_values, t_jac = model(trial, idx)
        t_resid = data[idx] - t_values
        t_cost = np.sum(w[idx] * t_resid ** 2, axis=-1)
        iterations[idx] += 1
        better = np.isfinite(t_cost) & (t_cost <= cost[idx])
        good = idx[better]
        p[good] = trial[better]
        values[good], jac[good], resid[good] = t_values[better], t_jac[better], t_resid[better]
        cost[good] = t_cost[better]
        lam[good] /= lam_down
        lam[idx[~better]] *= lam_up
        small = np.max(np.abs(step), axis=-1) <= tol * (1.0 + np.max(np.abs(p[idx]), axis=-1))
        # a rejected step under heavy damping means no further descent is possible
        stalled = ~better & (lam[idx] > 1e10)
        done = idx[(small & better) | stalled]
        converged[done] = True
        active[done] = False
    return p, converged, iterations
