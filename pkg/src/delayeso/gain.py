"""Observer gain design and the Lyapunov-Razumikhin analysis quantities.

Conventions: the observer correction is ``L (Cbar xhat - y)`` so the error
matrix is ``Acl = Abar + L Cbar``. The Lyapunov function ``V = e' P e`` needs
``Acl' P + P Acl = -Q``.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .model import ExtendedSystem, build_extended, pbh_observability


class DesignError(ValueError):
    """Gain design or analysis precondition violated."""


@dataclass(frozen=True)
class GainDesign:
    L: np.ndarray
    requested: np.ndarray
    achieved_eigenvalues: np.ndarray

    @property
    def eigen_error(self):
        """max |achieved - requested| / (1 + |requested|) after matching."""
        return pole_match_error(self.achieved_eigenvalues, self.requested)

    def backward_error(self, A, C):
        """Largest ``sigma_min(A + L C - lambda I) / ||A + L C||`` over the requested poles.

        Each requested pole is an exact eigenvalue of a matrix within this
        relative distance of the closed loop. Unlike :attr:`eigen_error` it
        does not grow with the eigenvector conditioning of the closed loop.
        """
        Acl = np.asarray(A, dtype=float) + self.L @ np.asarray(C, dtype=float)
        I = np.eye(Acl.shape[0])
        scale = max(np.linalg.norm(Acl, 2), np.finfo(float).tiny)
        return max(np.linalg.svd(Acl - lam * I, compute_uv=False)[-1] for lam in self.requested) / scale


def pole_match_error(achieved, requested):
    """Worst relative mismatch between two pole sets, matched greedily by distance."""
    left = list(np.asarray(achieved, dtype=complex))
    worst = 0.0
    for r in sorted(np.asarray(requested, dtype=complex), key=lambda z: (z.real, z.imag)):
        j = int(np.argmin([abs(a - r) for a in left]))
        worst = max(worst, abs(left.pop(j) - r) / (1.0 + abs(r)))
    return worst


def _check_conjugate_closed(poles, tol=1e-9):
    poles = np.asarray(poles, dtype=complex)
    for z in poles:
        if abs(z.imag) > tol and np.min(np.abs(poles - np.conj(z))) > tol * (1 + abs(z)):
            raise DesignError(f"pole set is not closed under conjugation (missing conj of {z})")


def place_poles(ext, desired, tol=1e-9):
    """Gain ``L`` with ``eig(Abar + L Cbar) = desired``.

    Uses state-feedback placement on the dual pair ``(Abar', Cbar')``. Raises
    :class:`DesignError` for unobservable pairs, sets that are not closed
    under conjugation, or multiplicities the placement cannot realise.
    """
    if isinstance(ext, ExtendedSystem):
        A, C = ext.Abar, ext.Cbar
    else:
        A, C = (np.asarray(M, dtype=float) for M in ext)
    desired = np.asarray(desired, dtype=complex)
    N = A.shape[0]
    if desired.shape != (N,):
        raise DesignError(f"need {N} poles, got {desired.size}")
    _check_conjugate_closed(desired)
    rep = pbh_observability(A, C)
    if not rep.observable:
        raise DesignError(f"pair is not observable: {rep}")
    poles = desired.real if np.all(np.abs(desired.imag) <= tol) else desired
    try:
        res = scipy.signal.place_poles(A.T, C.T, poles, method="YT", maxiter=200)
    except ValueError as exc:
        raise DesignError(str(exc)) from exc
    L = -res.gain_matrix.T
    achieved = np.linalg.eigvals(A + L @ C)
    return GainDesign(L=L, requested=desired, achieved_eigenvalues=achieved)


def solve_lyapunov(Acl, Q=None):
    """SPD ``P`` solving ``Acl' P + P Acl = -Q`` (``Q`` defaults to identity).

    Raises :class:`DesignError` if ``Acl`` is not Hurwitz or ``Q`` is not SPD.
    """
    Acl = np.asarray(Acl, dtype=float)
    N = Acl.shape[0]
    Q = np.eye(N) if Q is None else np.asarray(Q, dtype=float)
    if np.max(np.linalg.eigvals(Acl).real) >= 0.0:
        raise DesignError("Acl is not Hurwitz; no SPD Lyapunov solution")
    if not np.allclose(Q, Q.T) or np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) <= 0.0:
        raise DesignError("Q must be symmetric positive definite")
    P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -Q)
    return 0.5 * (P + P.T)


def lyapunov_residual(Acl, P, Q):
    return float(np.linalg.norm(Acl.T @ P + P @ Acl + Q, 2))


@dataclass(frozen=True)
class RazumikhinAnalysis:
    """Constants of the delay-observer stability argument.

    ``c3 = lambda_min(Q)``, ``c4 = 2 ||P D2||``,
    ``c5 = sqrt(kappa lambda_max(P) / lambda_min(P))`` and the smallest
    delay with a guaranteed decrease, ``h_star = c4 (1 + c5) / c3``. These
    are sufficient, conservative values.
    """

    P: np.ndarray
    Q: np.ndarray
    kappa: float
    c3: float
    c4: float
    c5: float
    h_star: float

    @property
    def lam_min(self):
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def lam_max(self):
        return float(np.linalg.eigvalsh(self.P)[-1])

    def c6(self, h):
        """Decrease rate ``c3 - c4/h - c4 c5/h``; positive iff ``h > h_star``."""
        if h <= 0:
            raise DesignError(f"delay must be positive, got {h}")
        return self.c3 - self.c4 / h - self.c4 * self.c5 / h


def razumikhin_constants(P, Q, D2, kappa=2.0):
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if not kappa > 1.0:
        raise DesignError(f"kappa must exceed 1, got {kappa}")
    lp = np.linalg.eigvalsh(0.5 * (P + P.T))
    lq = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if lp[0] <= 0 or lq[0] <= 0:
        raise DesignError("P and Q must be positive definite")
    c3 = float(lq[0])
    c4 = 2.0 * float(np.linalg.norm(P @ np.asarray(D2, dtype=float), 2))
    c5 = math.sqrt(kappa * lp[-1] / lp[0])
    h_star = c4 * (1.0 + c5) / c3
    return RazumikhinAnalysis(P=P, Q=Q, kappa=float(kappa), c3=c3, c4=c4, c5=c5, h_star=h_star)


def analyze(ext, L, Q=None, kappa=2.0):
    """Lyapunov solution and Razumikhin constants for gain ``L`` on ``ext``."""
    Acl = ext.Abar + np.asarray(L, dtype=float) @ ext.Cbar
    P = solve_lyapunov(Acl, Q)
    Q = np.eye(ext.N) if Q is None else np.asarray(Q, dtype=float)
    return razumikhin_constants(P, Q, ext.D2, kappa)


@dataclass(frozen=True)
class TheoreticalBounds:
    """Asymptotic error radii (conservative estimates, not tight values).

    ``radius_standard = gamma_standard * d1`` for the plain ESO and
    ``radius_delay = gamma_delay * d2 * h`` for the delay ESO; the
    backward-difference remainder is at most ``d2 * h / 2``.
    """

    d1: float
    d2: float
    h: float
    gamma_standard: float
    gamma_delay: float
    radius_standard: float
    radius_delay: float
    remainder_bound: float
    guaranteed: bool
    gamma_offset: float = 0.0
    radius_offset: float = 0.0


def error_radius(analysis, d1, d2, h, h_ref=None, d0=0.0):
    """Fill :class:`TheoreticalBounds` for disturbance bounds ``d1, d2`` and delay ``h``.

    The gain factors are ``lambda_max(P) / (lambda_min(P) c)`` with
    ``c = c3`` for the plain ESO and ``c = c6(h_ref)`` for the delay ESO.
    ``h_ref`` fixes the design point of the delay factor so the radius is
    linear in ``h``; it defaults to ``2 h_star`` (``c3`` when ``h_star = 0``).
    ``guaranteed`` tells whether ``h`` itself exceeds ``h_star``.

    ``d0`` is ``||d(0)||`` for the integral-output observer, whose ball has the
    extra term ``gamma_offset * d0 * h`` (same gain factor as the delay term).
    """
    if not h > 0:
        raise DesignError(f"delay must be positive, got {h}")
    if d1 < 0 or d2 < 0:
        raise DesignError("derivative bounds must be nonnegative")
    cond = analysis.lam_max / analysis.lam_min
    g1 = cond / analysis.c3
    if h_ref is None:
        c = analysis.c3 if analysis.h_star == 0.0 else analysis.c6(2.0 * analysis.h_star)
    else:
        c = analysis.c6(h_ref)
        if c <= 0:
            raise DesignError(f"h_ref={h_ref} does not exceed h_star={analysis.h_star}")
    g2 = cond / c
    if d0 < 0:
        raise DesignError("d0 must be nonnegative")
    return TheoreticalBounds(
        d1=float(d1),
        d2=float(d2),
        h=float(h),
        gamma_standard=g1,
        gamma_delay=g2,
        radius_standard=g1 * d1,
        radius_delay=g2 * d2 * h,
        remainder_bound=0.5 * d2 * h,
        guaranteed=h > analysis.h_star,
        gamma_offset=g2,
        radius_offset=g2 * float(d0) * h,
    )


def place_poles_decoupled(plant, pairs):
    """Channel-wise placement for square plants with invertible ``C`` and ``D``.

    Each disturbance channel ``i`` gets its own error pair ``pairs[i] = (a, b)``:
    the gain makes ``C (A + L1 C) C^-1`` diagonal, so the error splits into
    ``q`` independent second-order loops ``s^2 - (a + b) s + a b``. Returns a
    :class:`GainDesign`.
    """
    A, C, D = plant.A, plant.C, plant.D
    n = A.shape[0]
    if not (C.shape == (n, n) and D.shape == (n, n)):
        raise DesignError("decoupled placement needs square C and D (p = q = n)")
    if min(np.linalg.svd(C, compute_uv=False)[-1], np.linalg.svd(D, compute_uv=False)[-1]) < 1e-12:
        raise DesignError("decoupled placement needs invertible C and D")
    pairs = [tuple(complex(z) for z in pr) for pr in pairs]
    if len(pairs) != n or any(len(pr) != 2 for pr in pairs):
        raise DesignError(f"need {n} pole pairs")
    alpha, beta = [], []
    for a, b in pairs:
        if abs(a.imag + b.imag) > 1e-12 or abs((a * b).imag) > 1e-9 * (1 + abs(a * b)):
            raise DesignError(f"pair {(a, b)} is not real or conjugate")
        alpha.append(-(a + b).real)
        beta.append((a * b).real)
    Ci = np.linalg.inv(C)
    # C A C^-1 + C L1 = -diag(alpha) in output coordinates
    L1 = -(A + Ci @ np.diag(alpha) @ C) @ Ci
    L2 = -np.linalg.inv(D) @ Ci @ np.diag(beta) @ C @ Ci
    L = np.vstack([L1, L2])
    ext = build_extended(plant, 1)
    achieved = np.linalg.eigvals(ext.Abar + L @ ext.Cbar)
    requested = np.array([z for pr in pairs for z in pr])
    return GainDesign(L=L, requested=requested, achieved_eigenvalues=achieved)


def _companion_roots(M0, M1, M2, m1, m2, dt):
    # forward-Euler companion of the delay system; its eigenvalues z map to s = log(z)/dt
    N = M0.shape[0]
    S = max(m1, m2)
    T = np.zeros((N * (S + 1), N * (S + 1)))
    T[:N, :N] = np.eye(N) + dt * M0
    if m1:
        T[:N, N * m1:N * m1 + N] += dt * M1
    if m2:
        T[:N, N * m2:N * m2 + N] += dt * M2
    for i in range(S):
        T[N * (i + 1):N * (i + 2), N * i:N * i + N] = np.eye(N)
    z = np.linalg.eigvals(T)
    z = z[np.abs(z) > 1e-300]
    return np.log(z.astype(complex)) / dt


def delay_spectral_abscissa(M0, M1, h, M2=None, samples=40, refine=6):
    """Rightmost characteristic root of ``z' = M0 z + M1 z(t-h) + M2 z(t-2h)``.

    Roots of ``det(sI - M0 - M1 e^{-sh} - M2 e^{-2sh}) = 0`` are seeded from an
    Euler discretisation with ``samples`` steps per delay and polished by
    Newton steps on ``log det``. Returns the largest real part; negative
    means exponentially stable.
    """
    M0 = np.asarray(M0, dtype=float)
    M1 = np.asarray(M1, dtype=float)
    M2 = np.zeros_like(M0) if M2 is None else np.asarray(M2, dtype=float)
    if not h > 0:
        raise DesignError(f"delay must be positive, got {h}")
    dt = h / samples
    m2 = 2 * samples if np.any(M2) else 0
    seeds = _companion_roots(M0, M1, M2, samples, m2, dt)
    seeds = seeds[np.argsort(-seeds.real)][: 2 * M0.shape[0]]
    N = M0.shape[0]
    best = -np.inf
    for s in seeds:
        for _ in range(refine):
            e1, e2 = np.exp(-s * h), np.exp(-2 * s * h)
            Delta = s * np.eye(N) - M0 - M1 * e1 - M2 * e2
            dDelta = np.eye(N) + h * M1 * e1 + 2 * h * M2 * e2
            try:
                step = 1.0 / np.trace(np.linalg.solve(Delta, dDelta))
            except np.linalg.LinAlgError:
                break
            if not np.isfinite(step):
                break
            s = s - step
            if abs(step) < 1e-12 * (1 + abs(s)):
                break
        best = max(best, float(s.real))
    return best


def delay_eso_abscissa(ext, L, h):
    """Spectral abscissa of the delay ESO error ``e' = Acl e + (1/h) D2 (e - e(t-h))``."""
    Acl = ext.Abar + np.asarray(L, dtype=float) @ ext.Cbar
    return delay_spectral_abscissa(Acl + ext.D2 / h, -ext.D2 / h, h)


def rank_pairings(plant, poles, h):
    """All ways of splitting ``poles`` into per-channel pairs, best first.

    Each candidate is scored by the delay ESO spectral abscissa at delay
    ``h``; ties go to the assignment whose first channel has the more
    negative abscissa on its own. Returns ``[(pairs, abscissa), ...]``.
    """
    poles = [complex(z) for z in poles]
    n = plant.n
    if len(poles) != 2 * n:
        raise DesignError(f"need {2 * n} poles for {n} channels")
    ext = build_extended(plant, 1)
    seen, out = set(), []
    for perm in itertools.permutations(range(2 * n)):
        pairs = tuple(tuple(sorted((poles[perm[2 * i]], poles[perm[2 * i + 1]]), key=lambda z: (z.real, z.imag)))
                      for i in range(n))
        key = tuple((round(a.real, 12), round(a.imag, 12), round(b.real, 12), round(b.imag, 12)) for a, b in pairs)
        if key in seen:
            continue
        seen.add(key)
        try:
            design = place_poles_decoupled(plant, pairs)
        except DesignError:
            continue
        out.append((pairs, delay_eso_abscissa(ext, design.L, h), _channel_score(pairs[0], h)))
    out.sort(key=lambda r: (round(r[1], 9), r[2]))
    return [(pairs, a) for pairs, a, _ in out]


def _channel_score(pair, h):
    # abscissa of a single decoupled channel e'' + alpha e' + beta e with the delay term
    a, b = pair
    M0 = np.array([[(a + b).real, 1.0], [-(a * b).real, 1.0 / h]])
    M1 = np.array([[0.0, 0.0], [0.0, -1.0 / h]])
    return delay_spectral_abscissa(M0, M1, h)
