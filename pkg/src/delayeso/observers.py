"""Extended state observers: standard, artificial-delay, sliding-mode and
integral-output variants.

Every observer here is linear in its own state apart from the sliding-mode
correction, so each one compiles to the generic delayed form integrated by
:mod:`delayeso.kernels`::

    xhat' = M0 xhat + M1 xhat(t-h) + M2 xhat(t-2h) + Bbar u - Lin Y  [+ Gn rho sgn(y - Cbar xhat)]
"""

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import ExtendedSystem, LtiPlant, build_extended

STANDARD_ESO = "StandardEso"
DELAY_ESO = "DelayEso"
SMO = "Smo"
DELAY_SMO = "DelaySmo"
INTEGRAL_OUTPUT_DELAY_ESO = "IntegralOutputDelayEso"

KINDS = (STANDARD_ESO, DELAY_ESO, SMO, DELAY_SMO, INTEGRAL_OUTPUT_DELAY_ESO)
DELAY_KINDS = (DELAY_ESO, DELAY_SMO, INTEGRAL_OUTPUT_DELAY_ESO)
SLIDING_KINDS = (SMO, DELAY_SMO)


class ObserverError(ValueError):
    """Invalid observer specification or state."""


@dataclass(frozen=True)
class SmoParams:
    Gn: np.ndarray
    rho: float
    boundary_layer: float = 0.0

    def __post_init__(self):
        Gn = np.atleast_2d(np.array(self.Gn, dtype=float))
        Gn.setflags(write=False)
        object.__setattr__(self, "Gn", Gn)
        if not self.rho > 0:
            raise ObserverError(f"rho must be positive, got {self.rho}")
        if self.boundary_layer < 0:
            raise ObserverError(f"boundary_layer must be nonnegative, got {self.boundary_layer}")


def stacked_smo_gain(L_state, q):
    """``Gn = [L; -I_q]`` from a state-block gain ``L_state`` (n x p)."""
    L_state = np.atleast_2d(np.asarray(L_state, dtype=float))
    return np.vstack([L_state, -np.eye(q, L_state.shape[1])])


@dataclass(frozen=True)
class ObserverSpec:
    """What to run: kind, gain, delay, sliding-mode parameters.

    ``L`` is the Luenberger gain (``N x p``; ``N x 2p`` for the integral-output
    kind) and may be omitted for the sliding-mode kinds. ``order`` > 1 is only
    meaningful for the standard ESO.
    """

    kind: str
    L: np.ndarray | None = None
    h: float | None = None
    smo: SmoParams | None = None
    order: int = 1
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ObserverError(f"unknown observer kind {self.kind!r}; expected one of {KINDS}")
        if (self.h is not None) != (self.kind in DELAY_KINDS):
            raise ObserverError(f"{self.kind}: delay h must be given iff the kind uses a delay")
        if self.h is not None and not self.h > 0:
            raise ObserverError(f"delay h must be positive, got {self.h}")
        if (self.smo is not None) != (self.kind in SLIDING_KINDS):
            raise ObserverError(f"{self.kind}: smo parameters must be given iff the kind is sliding-mode")
        if self.L is None and self.kind not in SLIDING_KINDS:
            raise ObserverError(f"{self.kind} needs a gain L")
        if self.order != 1 and self.kind != STANDARD_ESO:
            raise ObserverError("augmentation order > 1 is only supported for StandardEso")
        if self.L is not None:
            L = np.atleast_2d(np.array(self.L, dtype=float))
            L.setflags(write=False)
            object.__setattr__(self, "L", L)
        if any(c in self.name for c in ',"\n\r'):
            raise ObserverError(f"observer name {self.name!r} may not contain commas, quotes or newlines")
        if not self.name:
            label = self.kind if self.h is None else f"{self.kind}_h{self.h:g}"
            object.__setattr__(self, "name", label)

    @property
    def uses_delay(self):
        return self.kind in DELAY_KINDS

    @property
    def max_delay(self):
        if self.h is None:
            return 0.0
        return 2 * self.h if self.kind == INTEGRAL_OUTPUT_DELAY_ESO else self.h


def delay_steps(h, dt, rtol=1e-9):
    """Integer ``m`` with ``h == m * dt``; raises if ``h`` is off the grid."""
    m = round(h / dt)
    if m < 1 or abs(m * dt - h) > rtol * max(h, dt):
        raise ObserverError(f"delay h={h} is not a positive integer multiple of dt={dt}")
    return int(m)


class HistoryBuffer:
    """Ring of past grid samples; ``delayed(m)`` is the sample ``m`` steps back.

    Before ``m`` samples exist the oldest stored sample (the initial one) is
    returned, which is the warm-up rule of the delay observers.
    """

    def __init__(self, capacity, initial):
        if capacity < 1:
            raise ObserverError("buffer capacity must be at least 1")
        self.capacity = int(capacity)
        self._ring = deque(maxlen=self.capacity + 1)
        self._ring.append(np.array(initial, dtype=float))

    def push(self, sample):
        self._ring.append(np.array(sample, dtype=float))

    def delayed(self, m):
        if m > self.capacity:
            raise ObserverError(f"lookup {m} steps back exceeds buffer capacity {self.capacity}")
        idx = len(self._ring) - 1 - m
        return self._ring[max(idx, 0)]

    @property
    def latest(self):
        return self._ring[-1]

    def __len__(self):
        return len(self._ring)


def _as_vec(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


def _u_term(ext, u):
    if ext.Bbar.shape[1] == 0:
        return np.zeros(ext.N)
    return ext.Bbar @ _as_vec(u)


def eso_derivative(spec, Xhat, y, u, ext):
    """``Abar xhat + Bbar u + L (Cbar xhat - y)``."""
    Xhat = _as_vec(Xhat)
    if Xhat.shape != (ext.N,):
        raise ObserverError(f"estimate has length {Xhat.size}, expected {ext.N}")
    return ext.Abar @ Xhat + _u_term(ext, u) + spec.L @ (ext.Cbar @ Xhat - _as_vec(y))


def _delayed(buffer, spec, dt):
    if isinstance(buffer, HistoryBuffer):
        if dt is None:
            raise ObserverError("dt is required to read a HistoryBuffer")
        return buffer.delayed(delay_steps(spec.h, dt))
    return _as_vec(buffer)


def delay_eso_derivative(spec, Xhat, buffer, y, u, ext, dt=None):
    """Standard ESO plus ``(1/h) D2 (xhat(t) - xhat(t-h))``.

    ``buffer`` is either a :class:`HistoryBuffer` (then ``dt`` is needed) or
    the delayed estimate itself.
    """
    Xhat = _as_vec(Xhat)
    back = _delayed(buffer, spec, dt)
    return eso_derivative(spec, Xhat, y, u, ext) + ext.D2 @ (Xhat - back) / spec.h


def smo_correction(spec, Xhat, y, Cbar):
    """``Gn nu`` with ``nu = rho sgn(y - Cbar xhat)`` (``sgn(0) = 0``).

    Inside a positive boundary layer ``sgn`` is replaced by ``s / layer``.
    """
    if spec.smo is None:
        raise ObserverError(f"{spec.kind} has no sliding-mode parameters")
    s = _as_vec(y) - np.asarray(Cbar) @ _as_vec(Xhat)
    bl = spec.smo.boundary_layer
    sg = np.clip(s / bl, -1.0, 1.0) if bl > 0 else np.sign(s)
    return spec.smo.Gn @ (spec.smo.rho * sg)


def smo_derivative(spec, Xhat, buffer, y, u, ext, dt=None):
    Xhat = _as_vec(Xhat)
    out = ext.Abar @ Xhat + _u_term(ext, u) + smo_correction(spec, Xhat, y, ext.Cbar)
    if spec.kind == DELAY_SMO:
        out = out + ext.D2 @ (Xhat - _delayed(buffer, spec, dt)) / spec.h
    return out


@dataclass(frozen=True)
class IntegralOutputSystem:
    """Extension for plants whose disturbance is not observable from ``y``.

    The plant is ``x' = A x + B u + d`` with ``d`` in ``R^n``; the output is
    augmented with ``int_{t-h}^t (y + C A^-1 B u)``. ``C2, C3, D4, D5`` are the
    output maps of the augmented measurement model.
    """

    ext: ExtendedSystem
    CAinv: np.ndarray
    CAinvB: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    D45: np.ndarray

    def measurement_model(self, X, X_h, X_2h, h):
        """Predicted augmented output from the current and delayed states."""
        return (
            self.C2 @ X
            + self.C3 @ X_h
            + self.D45 @ X_h / h
            - self.D45 @ (X + X_2h) / (2.0 * h)
        )


def integral_output_system(plant):
    """Build :class:`IntegralOutputSystem` for ``plant`` (its ``D`` is replaced by ``I_n``)."""
    n, p = plant.n, plant.p
    if abs(np.linalg.det(plant.A)) < 1e-12 * max(1.0, np.linalg.norm(plant.A)) ** n:
        raise ObserverError("integral-output observer needs an invertible A")
    base = LtiPlant(A=plant.A, B=plant.B, C=plant.C, D=np.eye(n))
    ext = build_extended(base, 1)
    CAinv = plant.C @ np.linalg.inv(plant.A)
    Z = np.zeros((p, n))
    C2 = np.block([[plant.C, Z], [CAinv, -CAinv]])
    C3 = np.block([[Z, Z], [-CAinv, CAinv]])
    D45 = np.block([[Z, Z], [Z, CAinv]])
    CAinvB = CAinv @ plant.B if plant.m else np.zeros((p, 0))
    return IntegralOutputSystem(ext=ext, CAinv=CAinv, CAinvB=CAinvB, C2=C2, C3=C3, D45=D45)


def check_gain_margin(ios, L, k=1.0):
    """Warn when the delayed output coupling is not dominated by the current one.

    Compares the slowest decay rate of ``Abar + L C2`` with ``k`` times the
    spectral radius of ``L C3``. This is a heuristic reading of the
    related dominance assumption, not a stability proof.
    """
    L = np.asarray(L, dtype=float)
    rate = -np.max(np.linalg.eigvals(ios.ext.Abar + L @ ios.C2).real)
    radius = np.max(np.abs(np.linalg.eigvals(L @ ios.C3)))
    ok = rate > k * radius
    if not ok:
        warnings.warn(
            f"decay rate {rate:.4g} of Abar + L C2 does not exceed {k:g} x spectral radius "
            f"{radius:.4g} of L C3",
            RuntimeWarning,
            stacklevel=2,
        )
    return ok


def integral_output_delay_eso_derivative(spec, Xhat, buffer, Y_aug, u, ios, dt=None):
    """Delay ESO driven by the integral-augmented output ``Y_aug = [y; int W]``.

    ``buffer`` is a :class:`HistoryBuffer` holding at least ``2h`` of
    estimates, or a pair ``(xhat(t-h), xhat(t-2h))``.
    """
    Xhat = _as_vec(Xhat)
    ext, h = ios.ext, spec.h
    if isinstance(buffer, HistoryBuffer):
        m = delay_steps(h, dt)
        X_h, X_2h = buffer.delayed(m), buffer.delayed(2 * m)
    else:
        X_h, X_2h = (_as_vec(v) for v in buffer)
    innovation = ios.measurement_model(Xhat, X_h, X_2h, h) - _as_vec(Y_aug)
    return ext.Abar @ Xhat + _u_term(ext, u) + ext.D2 @ (Xhat - X_h) / h + spec.L @ innovation


@dataclass(frozen=True)
class KernelForm:
    """An observer lowered to the generic delayed form of the integrator."""

    M0: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    m1: int
    m2: int
    Bbar: np.ndarray
    Lin: np.ndarray
    Gn: np.ndarray
    Cs: np.ndarray
    rho: float = 0.0
    boundary_layer: float = 0.0
    smo: bool = False


def extension_for(spec, plant):
    """Extended system (or integral-output system) an observer spec runs on."""
    if spec.kind == INTEGRAL_OUTPUT_DELAY_ESO:
        return integral_output_system(plant)
    return build_extended(plant, spec.order)


def lower(spec, system, dt):
    """Lower ``spec`` on ``system`` (from :func:`extension_for`) to a :class:`KernelForm`."""
    ios = system if isinstance(system, IntegralOutputSystem) else None
    ext = ios.ext if ios else system
    N, p = ext.N, ext.p
    Z = np.zeros((N, N))
    M0, M1, M2 = ext.Abar.copy(), Z.copy(), Z.copy()
    m1 = m2 = 0
    if spec.uses_delay:
        m1 = delay_steps(spec.h, dt)
        Hd = ext.D2 / spec.h
        M0 += Hd
        M1 -= Hd
    pm = 2 * p if ios else p
    if spec.L is not None and spec.kind not in SLIDING_KINDS:
        if spec.L.shape != (N, pm):
            raise ObserverError(f"{spec.name}: gain L has shape {spec.L.shape}, expected {(N, pm)}")
    if ios:
        L, h = spec.L, spec.h
        m2 = 2 * m1
        M0 += L @ (ios.C2 - ios.D45 / (2 * h))
        M1 += L @ (ios.C3 + ios.D45 / h)
        M2 += L @ (-ios.D45 / (2 * h))
        Lin = L
    elif spec.kind in SLIDING_KINDS:
        Lin = np.zeros((N, p))
    else:
        M0 += spec.L @ ext.Cbar
        Lin = spec.L
    if spec.kind in SLIDING_KINDS:
        Gn = spec.smo.Gn
        if Gn.shape != (N, p):
            raise ObserverError(f"{spec.name}: Gn has shape {Gn.shape}, expected {(N, p)}")
        return KernelForm(M0, M1, M2, m1, m2, ext.Bbar, Lin, Gn, ext.Cbar,
                          spec.smo.rho, spec.smo.boundary_layer, True)
    return KernelForm(M0, M1, M2, m1, m2, ext.Bbar, Lin, np.zeros((N, p)), np.zeros((p, N)))


@dataclass
class OnlineObserver:
    """Sample-by-sample discrete observer (forward Euler on a fixed grid).

    Call :meth:`update` once per sample with the current measurement and
    input; estimates are kept in a :class:`HistoryBuffer` sized to the
    largest delay. For the integral-output kind the window integral of
    ``y + C A^-1 B u`` is accumulated with the trapezoid rule.
    """

    spec: ObserverSpec
    plant: LtiPlant
    dt: float
    xhat0: np.ndarray = None
    system: object = field(init=False)
    xhat: np.ndarray = field(init=False)
    buffer: HistoryBuffer = field(init=False)

    def __post_init__(self):
        self.system = extension_for(self.spec, self.plant)
        ext = self.ext
        x0 = np.zeros(ext.N) if self.xhat0 is None else _as_vec(self.xhat0)
        if x0.shape != (ext.N,):
            raise ObserverError(f"initial estimate has length {x0.size}, expected {ext.N}")
        self.xhat = x0.copy()
        self.m = delay_steps(self.spec.h, self.dt) if self.spec.uses_delay else 0
        cap = 2 * self.m if self.spec.kind == INTEGRAL_OUTPUT_DELAY_ESO else max(self.m, 1)
        self.buffer = HistoryBuffer(cap, x0)
        self._cum = [0.0]
        self._w_prev = None
        self._cums = deque(maxlen=self.m + 1)

    @property
    def ext(self):
        return self.system.ext if isinstance(self.system, IntegralOutputSystem) else self.system

    def _window_integral(self, y, u):
        ios = self.system
        w = _as_vec(y) + (ios.CAinvB @ _as_vec(u) if ios.CAinvB.shape[1] else 0.0)
        if self._w_prev is None:
            cum = np.zeros_like(w)
        else:
            cum = self._cums[-1] + 0.5 * self.dt * (self._w_prev + w)
        self._w_prev = w
        self._cums.append(cum)
        return cum - self._cums[0]

    def update(self, y, u=()):
        """Advance one step using the sample at the current time; return the new estimate."""
        spec, ext, x = self.spec, self.ext, self.xhat
        if spec.kind == STANDARD_ESO:
            dx = eso_derivative(spec, x, y, u, ext)
        elif spec.kind == DELAY_ESO:
            dx = delay_eso_derivative(spec, x, self.buffer, y, u, ext, self.dt)
        elif spec.kind in SLIDING_KINDS:
            dx = smo_derivative(spec, x, self.buffer, y, u, ext, self.dt)
        else:
            Y_aug = np.concatenate([_as_vec(y), self._window_integral(y, u)])
            dx = integral_output_delay_eso_derivative(spec, x, self.buffer, Y_aug, u, self.system, self.dt)
        self.xhat = x + self.dt * dx
        self.buffer.push(self.xhat)
        return self.xhat.copy()

    @property
    def disturbance_estimate(self):
        return self.xhat[self.ext.disturbance_slice].copy()
