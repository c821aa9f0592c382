"""Disturbed LTI plants, their extensions, and observability of the extension.

A plant is ``x' = A x + B u + D d``, ``y = C x``. Extending it with the
disturbance (and optionally ``r - 1`` of its derivatives) gives the system an
extended state observer is designed on.
"""

from dataclasses import dataclass, field

import numpy as np


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    return M


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class LtiPlant:
    """Matrices of ``x' = A x + B u + D d``, ``y = C x``.

    ``B`` may have zero columns (no input) and ``D`` zero columns (no
    disturbance). Arrays are copied and made read-only.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
        D = np.asarray(self.D, dtype=float)
        D = D.reshape(n, -1) if D.size else np.zeros((n, 0))
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        if D.shape[1] > 0 and not np.any(D):
            raise ValueError("D is all zeros; use a plant with q = 0 instead")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, _frozen(M))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.D.shape[1]


@dataclass(frozen=True)
class ExtendedSystem:
    """Plant stacked with its disturbance: state ``[x; d; d'; ...; d^(r-1)]``.

    ``D2`` is the 0/1 diagonal selector of the ``d`` block, used by the
    backward-difference term of the delay observers.
    """

    Abar: np.ndarray
    Bbar: np.ndarray
    Cbar: np.ndarray
    D2: np.ndarray
    order: int
    n: int
    q: int

    def __post_init__(self):
        for name in ("Abar", "Bbar", "Cbar", "D2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def N(self):
        return self.Abar.shape[0]

    @property
    def p(self):
        return self.Cbar.shape[0]

    @property
    def disturbance_slice(self):
        return slice(self.n, self.n + self.q)


def build_extended(plant, order=1):
    """Extend ``plant`` with an ``order``-stage disturbance integrator chain.

    For ``order == 1`` this is ``Abar = [[A, D], [0, 0]]``, ``Bbar = [B; 0]``,
    ``Cbar = [C, 0]``. For higher orders each derivative block integrates the
    next one and the top derivative has zero dynamics.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"order must be a positive integer, got {order}")
    order = int(order)
    n, m, p, q = plant.n, plant.m, plant.p, plant.q
    N = n + order * q
    Abar = np.zeros((N, N))
    Abar[:n, :n] = plant.A
    Abar[:n, n:n + q] = plant.D
    for j in range(order - 1):
        r0 = n + j * q
        Abar[r0:r0 + q, r0 + q:r0 + 2 * q] = np.eye(q)
    Bbar = np.zeros((N, m))
    Bbar[:n] = plant.B
    Cbar = np.zeros((p, N))
    Cbar[:, :n] = plant.C
    D2 = np.zeros((N, N))
    D2[n:n + q, n:n + q] = np.eye(q)
    return ExtendedSystem(Abar=Abar, Bbar=Bbar, Cbar=Cbar, D2=D2, order=order, n=n, q=q)


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    deficient_eigenvalue: complex | None = None
    min_rank: int = 0
    eigenvalues: tuple = field(default=(), repr=False)

    def __str__(self):
        if self.observable:
            return "observable"
        return f"unobservable (rank {self.min_rank} at lambda = {self.deficient_eigenvalue:.6g})"


def numerical_rank(M, tol=1e-9):
    """Rank with singular values below ``tol * sigma_max`` treated as zero."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def pbh_observability(A, C=None, tol=1e-9):
    """PBH test: ``rank [A - lambda I; C] == N`` at every eigenvalue of ``A``.

    Accepts either an :class:`ExtendedSystem` or a matrix pair ``(A, C)``.
    The first rank-deficient eigenvalue is reported as witness.
    """
    if isinstance(A, ExtendedSystem):
        A, C = A.Abar, A.Cbar
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N = A.shape[0]
    eigs = np.linalg.eigvals(A)
    I = np.eye(N)
    worst = N
    for lam in eigs:
        r = numerical_rank(np.vstack([A - lam * I, C.astype(complex)]), tol)
        if r < N:
            return ObservabilityReport(False, complex(lam), r, tuple(eigs))
        worst = min(worst, r)
    return ObservabilityReport(True, None, worst, tuple(eigs))


@dataclass(frozen=True)
class DcDriveParams:
    """One parameter set of the DC drive (SI units; inductance in henry)."""

    R: float
    L: float
    Kv: float
    Ktau: float
    J: float
    f: float

    def __post_init__(self):
        for k, v in vars(self).items():
            if k == "f":
                if not v >= 0.0:
                    raise ValueError(f"f must be nonnegative, got {v}")
            elif not v > 0.0:
                raise ValueError(f"{k} must be strictly positive, got {v}")


# armature inductance entered in henry (table value is in mH)
REAL_DC_DRIVE = DcDriveParams(R=0.55, L=6e-3, Kv=0.52, Ktau=0.52, J=0.1, f=0.008)
NOMINAL_DC_DRIVE = DcDriveParams(R=0.6, L=6.2e-3, Kv=0.6, Ktau=0.5, J=0.08, f=0.007)


@dataclass(frozen=True)
class UncertainParams:
    """Real and nominal DC-drive parameters.

    The real set drives the simulated plant; the nominal set is all the
    observer knows.
    """

    real: DcDriveParams = REAL_DC_DRIVE
    nominal: DcDriveParams = NOMINAL_DC_DRIVE

    def lumped_disturbance(self, x, u, tau):
        """``[phi1, phi2]`` seen by an observer built on the nominal model.

        ``x = [i, omega]`` (last axis), ``u`` the voltage and ``tau`` the load
        torque; friction and torque enter through ``d = -f/J omega - tau/J``.
        """
        r, o = self.real, self.nominal
        i, w = x[..., 0], x[..., 1]
        phi1 = (o.R / o.L - r.R / r.L) * i + (o.Kv / o.L - r.Kv / r.L) * w + (1 / r.L - 1 / o.L) * u
        d = -r.f / r.J * w - tau / r.J
        phi2 = d + (r.Ktau / r.J - o.Ktau / o.J) * i
        return np.stack([phi1, phi2], axis=-1)


def dc_drive_plant(params, which="real", lumped=True):
    """DC drive ``x = [i, omega]`` as an :class:`LtiPlant`.

    ``A = [[-R/L, -Kv/L], [Ktau/J, 0]]``, ``B = [1/L, 0]^T``, ``C = I``. With
    ``lumped`` the disturbance map is ``I2`` (parameter mismatch and load
    torque lumped into both channels); otherwise it is ``[0, 1]^T`` and only
    the speed equation is disturbed. ``which`` selects the real or nominal set.
    """
    if isinstance(params, UncertainParams):
        if which not in ("real", "nominal"):
            raise ValueError(f"which must be 'real' or 'nominal', got {which!r}")
        params = getattr(params, which)
    P = params
    A = np.array([[-P.R / P.L, -P.Kv / P.L], [P.Ktau / P.J, 0.0]])
    B = np.array([[1.0 / P.L], [0.0]])
    D = np.eye(2) if lumped else np.array([[0.0], [1.0]])
    return LtiPlant(A=A, B=B, C=np.eye(2), D=D)


def dc_drive_truth(params):
    """Physical DC drive with friction kept in ``A`` and load torque as input.

    Returns ``(A, B, Dw)`` of ``x' = A x + B u + Dw tau`` with
    ``A = [[-R/L, -Kv/L], [Ktau/J, -f/J]]`` and ``Dw = [0, -1/J]^T``.
    """
    P = params
    A = np.array([[-P.R / P.L, -P.Kv / P.L], [P.Ktau / P.J, -P.f / P.J]])
    B = np.array([[1.0 / P.L], [0.0]])
    Dw = np.array([[0.0], [-1.0 / P.J]])
    return A, B, Dw
