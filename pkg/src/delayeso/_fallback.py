"""Pure-Python twin of the compiled integrator in ``_kernel.pyx``.

Same arguments, same stepping order, same divergence rule. Used when the
extension is not built or when ``DELAYESO_PURE_PYTHON=1``.
"""

import numpy as np


def _sgn(s, bl):
    if bl > 0.0:
        return np.clip(s / bl, -1.0, 1.0)
    return np.sign(s)


def _hist(Z, dZ, a, stage, dt):
    # trajectory at t_a + stage*dt/2; history before 0 is Z[0]
    if stage == 0:
        return Z[max(a, 0)]
    if stage == 2:
        return Z[max(a + 1, 0)]
    if a < 0:
        return Z[0]
    return 0.5 * (Z[a] + Z[a + 1]) + 0.125 * dt * (dZ[a] - dZ[a + 1])


def integrate(M0, M1, M2, m1, m2, F, Gn, Cs, Y, rho, boundary_layer, smo, z0, dt, rk4, blowup):
    """Return ``(Z, diverged_at)``; ``diverged_at`` is -1 for a clean run."""
    M0 = np.asarray(M0, dtype=float)
    M1 = np.asarray(M1, dtype=float)
    M2 = np.asarray(M2, dtype=float)
    F = np.asarray(F, dtype=float)
    K = F.shape[0]
    n = M0.shape[0]
    Z = np.full((K + 1, n), np.nan)
    dZ = np.zeros((K + 1, n))
    Z[0] = z0

    def delayed(k, stage):
        out = np.zeros(n)
        if m1 > 0:
            out = out + M1 @ _hist(Z, dZ, k - m1, stage, dt)
        if m2 > 0:
            out = out + M2 @ _hist(Z, dZ, k - m2, stage, dt)
        return out

    def rhs(z, dl, k, stage):
        out = M0 @ z + dl + F[k, stage]
        if smo:
            out = out + Gn @ (rho * _sgn(Y[k, stage] - Cs @ z, boundary_layer))
        return out

    for k in range(K):
        z = Z[k]
        k1 = rhs(z, delayed(k, 0), k, 0)
        dZ[k] = k1
        if rk4:
            mid = delayed(k, 1)
            k2 = rhs(z + 0.5 * dt * k1, mid, k, 1)
            k3 = rhs(z + 0.5 * dt * k2, mid, k, 1)
            k4 = rhs(z + dt * k3, delayed(k, 2), k, 2)
            Z[k + 1] = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            Z[k + 1] = z + dt * k1
        nrm = float(np.sqrt(Z[k + 1] @ Z[k + 1]))
        if not np.isfinite(nrm) or nrm > blowup:
            return Z, k + 1
    return Z, -1
