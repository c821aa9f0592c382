"""Fixed-step co-simulation of a true plant and a set of observers.

The plant is integrated first on the grid. Its measurements (plus noise) are
then fed to every observer, which are independent read-only consumers of the
same ``y`` and ``u`` streams. For RK4, the measurement at a step's midpoint
comes from cubic Hermite interpolation of the plant trajectory, which keeps
the undisturbed, noiseless scheme fourth-order. Noise is held over each step.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .model import LtiPlant
from .observers import (
    INTEGRAL_OUTPUT_DELAY_ESO,
    IntegralOutputSystem,
    ObserverError,
    delay_steps,
    extension_for,
    lower,
)
from .signals import NoiseSpec, NoiseState, Profile, noise_stream

EULER = "euler"
RK4 = "rk4"


class SimulationError(ValueError):
    """Inconsistent simulation setup."""


@dataclass(frozen=True)
class TruePlant:
    """The plant actually simulated: ``x' = A x + B u + Dw w``, ``y = C x``.

    ``w`` is the external disturbance signal. The observer's model may differ;
    the mismatch is what the observer sees as lumped disturbance.
    """

    A: np.ndarray
    B: np.ndarray
    Dw: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if np.size(self.B) else np.zeros((n, 0))
        Dw = np.asarray(self.Dw, dtype=float).reshape(n, -1) if np.size(self.Dw) else np.zeros((n, 0))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if A.shape != (n, n) or C.shape[1] != n:
            raise SimulationError("true plant matrices have inconsistent dimensions")
        for k, v in (("A", A), ("B", B), ("Dw", Dw), ("C", C)):
            object.__setattr__(self, k, v)

    @classmethod
    def from_plant(cls, plant):
        return cls(A=plant.A, B=plant.B, Dw=plant.D, C=plant.C)


@dataclass(frozen=True)
class Setup:
    """Everything about the world an experiment runs in.

    ``model`` is the (nominal) plant the observers are built on; ``inputs``
    is the known input ``u`` (``None`` for no input).
    """

    truth: TruePlant
    model: LtiPlant
    disturbance: Profile
    inputs: Profile | None = None

    def __post_init__(self):
        t, m = self.truth, self.model
        if t.A.shape != m.A.shape or t.C.shape != m.C.shape:
            raise SimulationError("true plant and observer model have different state/output sizes")
        if not np.array_equal(t.C, m.C):
            raise SimulationError("true plant and observer model must share the output map C")
        if t.Dw.shape[1] != self.disturbance.q:
            raise SimulationError(
                f"disturbance profile has {self.disturbance.q} channels, true plant expects {t.Dw.shape[1]}"
            )
        nu = 0 if self.inputs is None else self.inputs.q
        if t.B.shape[1] != nu or m.B.shape[1] != nu:
            raise SimulationError(f"input profile has {nu} channels, plants expect {t.B.shape[1]}/{m.B.shape[1]}")

    def lumped_map(self, D):
        """Matrices ``(Gx, Gu, Gw)`` with ``d = Gx x + Gu u + Gw w`` for disturbance map ``D``.

        ``D d`` must reproduce the whole model mismatch, so every mismatch
        column has to lie in the range of ``D``.
        """
        t, m = self.truth, self.model
        mismatch = np.hstack([t.A - m.A, t.B - m.B, t.Dw])
        Dp = np.linalg.pinv(D)
        G = Dp @ mismatch
        resid = np.linalg.norm(D @ G - mismatch)
        if resid > 1e-9 * max(1.0, np.linalg.norm(mismatch)):
            raise SimulationError("model mismatch is not in the range of the disturbance map D")
        n, nu = t.A.shape[0], t.B.shape[1]
        return G[:, :n], G[:, n:n + nu], G[:, n + nu:]


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 80.0
    integrator: str = RK4
    x0: tuple = ()
    xhat0: tuple = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    t_start: float = 0.0
    blowup: float = 1e9

    def __post_init__(self):
        if not self.dt > 0:
            raise SimulationError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.t_start:
            raise SimulationError("t_end must exceed t_start")
        if self.integrator not in (EULER, RK4):
            raise SimulationError(f"integrator must be '{EULER}' or '{RK4}', got {self.integrator!r}")
        steps = (self.t_end - self.t_start) / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise SimulationError(f"horizon {self.t_end - self.t_start} is not a multiple of dt={self.dt}")
        if round(steps) > 20_000_000:
            raise SimulationError("horizon/dt exceeds the trace budget of 2e7 steps")

    @property
    def steps(self):
        return int(round((self.t_end - self.t_start) / self.dt))


@dataclass
class ObserverTrace:
    name: str
    kind: str
    Xhat: np.ndarray
    X: np.ndarray
    n: int
    q: int
    diverged_at: int = -1

    @property
    def error(self):
        return self.Xhat - self.X

    @property
    def err_norm(self):
        return np.linalg.norm(self.error, axis=1)

    @property
    def diverged(self):
        return self.diverged_at >= 0

    @property
    def disturbance_error(self):
        return self.error[:, self.n:self.n + self.q]


@dataclass
class SimulationTrace:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray
    w: np.ndarray
    observers: list
    backend: str = ""

    @property
    def diverged(self):
        return any(o.diverged for o in self.observers)

    def __getitem__(self, name):
        for o in self.observers:
            if o.name == name:
                return o
        raise KeyError(name)

    def to_csv(self, path_or_buf=None):
        """CSV with one row per grid point; returns the text when no path is given."""
        cols = [("t", self.t[:, None])]
        cols += [(f"x{i + 1}", self.x[:, i:i + 1]) for i in range(self.x.shape[1])]
        cols += [(f"y{i + 1}", self.y[:, i:i + 1]) for i in range(self.y.shape[1])]
        cols += [(f"d{i + 1}", self.d[:, i:i + 1]) for i in range(self.d.shape[1])]
        for o in self.observers:
            cols += [(f"{o.name}.xhat{i + 1}", o.Xhat[:, i:i + 1]) for i in range(o.Xhat.shape[1])]
            cols.append((f"{o.name}.err_norm", o.err_norm[:, None]))
        header = [c[0] for c in cols]
        data = np.hstack([c[1] for c in cols])
        # repr of a Python float is the shortest round-tripping form
        lines = [",".join(header)]
        lines += [",".join(map(repr, row)) for row in data.tolist()]
        text = "\n".join(lines) + "\n"
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


def _stage_times(cfg):
    K = cfg.steps
    t = cfg.t_start + cfg.dt * np.arange(K + 1)
    t_mid = t[:-1] + 0.5 * cfg.dt
    return t, t_mid


def _profile_on(profile, t, width):
    if profile is None:
        return np.zeros((t.size, width))
    return profile.eval(t)


def _stages(grid, mid):
    """(K, 3, ...) stage array from grid samples and step midpoints."""
    return np.stack([grid[:-1], mid, grid[1:]], axis=1)


def _true_extended(setup, D, order, x, u_fn, w_fn, t):
    """True ``[x; d; d'; ...]`` for an observer whose model uses disturbance map ``D``."""
    Gx, Gu, Gw = setup.lumped_map(D)
    A, B, Dw = setup.truth.A, setup.truth.B, setup.truth.Dw
    blocks = [x]
    xk = x
    uk, wk = u_fn(t, 0), w_fn(t, 0)
    blocks.append(xk @ Gx.T + uk @ Gu.T + wk @ Gw.T)
    for k in range(1, order):
        # k-th derivative of x from the plant equation, then of the lumped disturbance
        xk = xk @ A.T + uk @ B.T + wk @ Dw.T
        uk, wk = u_fn(t, k), w_fn(t, k)
        blocks.append(xk @ Gx.T + uk @ Gu.T + wk @ Gw.T)
    return np.hstack(blocks)


def _integral_window(W, m, dt):
    """Trapezoid ``int_{t-h}^t W`` on the grid; the window is clipped at the start."""
    cum = np.zeros_like(W)
    cum[1:] = np.cumsum(0.5 * dt * (W[1:] + W[:-1]), axis=0)
    out = cum.copy()
    out[m:] -= cum[:-m]
    return out


def simulate(setup, observers, cfg, backend=None):
    """Run the plant and every observer in ``observers`` over ``cfg``'s grid.

    Divergence of an observer (``||xhat|| > cfg.blowup`` or non-finite) stops
    that observer and is recorded in its trace; it is not an exception.
    """
    integrate = kernels.integrate if backend is None else kernels.backends()[backend]
    backend_name = kernels.BACKEND if backend is None else backend
    truth, model = setup.truth, setup.model
    n, p = truth.A.shape[0], truth.C.shape[0]
    dt, K = cfg.dt, cfg.steps
    rk4 = cfg.integrator == RK4
    names = [o.name for o in observers]
    if len(set(names)) != len(names):
        raise SimulationError(f"observer names must be unique: {names}")
    for spec in observers:
        if spec.uses_delay:
            try:
                delay_steps(spec.h, dt)
            except ObserverError as exc:
                raise SimulationError(f"{spec.name}: {exc}") from exc

    t, t_mid = _stage_times(cfg)
    nu = truth.B.shape[1]
    u_grid = _profile_on(setup.inputs, t, nu)
    u_mid = _profile_on(setup.inputs, t_mid, nu)
    w_grid = setup.disturbance.eval(t)
    w_mid = setup.disturbance.eval(t_mid)

    forcing_grid = u_grid @ truth.B.T + w_grid @ truth.Dw.T
    forcing_mid = u_mid @ truth.B.T + w_mid @ truth.Dw.T
    F = np.ascontiguousarray(_stages(forcing_grid, forcing_mid))
    x0 = np.zeros(n) if len(cfg.x0) == 0 else np.asarray(cfg.x0, dtype=float)
    if x0.shape != (n,):
        raise SimulationError(f"x0 has length {x0.size}, expected {n}")
    zero_nn = np.zeros((n, n))
    x, bad = integrate(truth.A, zero_nn, zero_nn, 0, 0, F, np.zeros((n, 0)), np.zeros((0, n)),
                       np.zeros((K, 3, 0)), 0.0, 0.0, False, x0, dt, rk4, math.inf)
    if bad >= 0:
        raise SimulationError(f"true plant trajectory became non-finite at step {bad}")

    f_grid = x @ truth.A.T + forcing_grid
    x_mid = 0.5 * (x[:-1] + x[1:]) + dt / 8.0 * (f_grid[:-1] - f_grid[1:])
    y_clean = x @ truth.C.T
    noise = noise_stream(y_clean, cfg.noise, NoiseState(cfg.noise))
    y_meas = y_clean + noise
    held = noise[:-1]
    Y = _stages(y_clean, x_mid @ truth.C.T) + held[:, None, :]
    u_st = _stages(u_grid, u_mid)

    def u_fn(tt, k):
        return _profile_on(setup.inputs, tt, nu) if k == 0 or setup.inputs is None else setup.inputs.eval(tt, k)

    def w_fn(tt, k):
        return setup.disturbance.eval(tt, k)

    traces = []
    base_d = _true_extended(setup, model.D, 1, x, u_fn, w_fn, t)[:, n:]
    for spec in observers:
        system = extension_for(spec, model)
        form = lower(spec, system, dt)
        ext = system.ext if isinstance(system, IntegralOutputSystem) else system
        if spec.kind == INTEGRAL_OUTPUT_DELAY_ESO:
            W = y_meas + (u_grid @ system.CAinvB.T if nu else 0.0)
            I = _integral_window(W, form.m1, dt)
            I_st = np.stack([I[:-1], 0.5 * (I[:-1] + I[1:]), I[1:]], axis=1)
            Yobs = np.concatenate([Y, I_st], axis=2)
            D_model = np.eye(n)
        else:
            Yobs = Y
            D_model = model.D
        Fo = u_st @ form.Bbar.T - Yobs @ form.Lin.T
        Fo = np.ascontiguousarray(Fo)
        xh0 = _initial_estimate(cfg, spec, ext.N)
        Ys = np.ascontiguousarray(Y) if form.smo else np.zeros((K, 3, 0))
        Xhat, div = integrate(
            np.ascontiguousarray(form.M0), np.ascontiguousarray(form.M1), np.ascontiguousarray(form.M2),
            form.m1, form.m2, Fo, np.ascontiguousarray(form.Gn), np.ascontiguousarray(form.Cs), Ys,
            float(form.rho), float(form.boundary_layer), bool(form.smo), xh0, dt, rk4, float(cfg.blowup),
        )
        X = _true_extended(setup, D_model, spec.order, x, u_fn, w_fn, t)
        traces.append(ObserverTrace(spec.name, spec.kind, Xhat, X, n=n, q=D_model.shape[1], diverged_at=int(div)))
    return SimulationTrace(t=t, x=x, y=y_meas, d=base_d, w=w_grid, observers=traces, backend=backend_name)


def _initial_estimate(cfg, spec, N):
    x0 = cfg.xhat0
    if isinstance(x0, dict):
        x0 = x0.get(spec.name, ())
    if len(x0) == 0:
        return np.zeros(N)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise SimulationError(f"{spec.name}: initial estimate has length {x0.size}, expected {N}")
    return x0


@dataclass(frozen=True)
class SegmentMetric:
    observer: str
    segment: int
    t0: float
    t1: float
    rms_error: float
    final_error: float
    settling_time: float
    rms_channels: tuple
    final_channels: tuple
    rms_disturbance: float

    def as_row(self):
        row = {
            "observer": self.observer,
            "segment": self.segment,
            "t0": self.t0,
            "t1": self.t1,
            "rms_error": self.rms_error,
            "final_error": self.final_error,
            "settling_time": self.settling_time,
            "rms_disturbance": self.rms_disturbance,
        }
        for i, v in enumerate(self.rms_channels):
            row[f"rms_e{i + 1}"] = v
        for i, v in enumerate(self.final_channels):
            row[f"final_e{i + 1}"] = v
        return row


def metrics(trace, profile=None, warmup_fraction=0.25, band_fraction=0.02, breakpoints=None):
    """Per-observer, per-segment error statistics.

    Segments are the profile's breakpoints (or ``breakpoints``). RMS values
    skip the first ``warmup_fraction`` of each segment; the final error is the
    last sample of the segment. Settling time counts from the segment start
    until ``||e||`` enters and stays within ``band_fraction`` of the
    segment's largest true disturbance norm (``nan`` if it never settles).
    """
    if trace.t.size < 2:
        raise SimulationError("empty trace")
    if breakpoints is None:
        breakpoints = profile.breakpoints() if profile is not None else [trace.t[0], trace.t[-1]]
    tol = 1e-9 * max(1.0, abs(trace.t[-1]))
    # segments are clipped to the simulated horizon
    inner = [float(b) for b in breakpoints if trace.t[0] + tol < b < trace.t[-1] - tol]
    bps = [float(trace.t[0])] + sorted(set(inner)) + [float(trace.t[-1])]
    out = []
    for o in trace.observers:
        err = o.error
        nrm = o.err_norm
        dist = np.linalg.norm(o.X[:, o.n:o.n + o.q], axis=1)
        derr = np.linalg.norm(o.disturbance_error, axis=1)
        for si, (a, b) in enumerate(zip(bps, bps[1:])):
            last = si == len(bps) - 2
            seg = (trace.t >= a - tol) & ((trace.t <= b + tol) if last else (trace.t < b - tol))
            post = seg & (trace.t >= a + warmup_fraction * (b - a) - tol)
            if not np.any(post):
                raise SimulationError(f"segment [{a}, {b}] has no post-warm-up samples")
            idx = np.flatnonzero(seg)
            if o.diverged and o.diverged_at <= idx[-1]:
                nan_ch = tuple(float("nan") for _ in range(err.shape[1]))
                out.append(SegmentMetric(o.name, si, a, b, math.nan, math.nan, math.nan, nan_ch, nan_ch, math.nan))
                continue
            band = band_fraction * float(np.max(dist[seg]))
            outside = np.flatnonzero(nrm[seg] > band)
            if outside.size == 0:
                settle = 0.0
            elif outside[-1] == idx.size - 1:
                settle = math.nan
            else:
                settle = float(trace.t[idx[outside[-1] + 1]] - a)
            out.append(
                SegmentMetric(
                    observer=o.name,
                    segment=si,
                    t0=float(a),
                    t1=float(b),
                    rms_error=float(np.sqrt(np.mean(nrm[post] ** 2))),
                    final_error=float(nrm[idx[-1]]),
                    settling_time=settle,
                    rms_channels=tuple(float(v) for v in np.sqrt(np.mean(err[post] ** 2, axis=0))),
                    final_channels=tuple(float(v) for v in np.abs(err[idx[-1]])),
                    rms_disturbance=float(np.sqrt(np.mean(derr[post] ** 2))),
                )
            )
    return out


def metrics_table(rows):
    """Render metric rows as ``key=value`` lines."""
    lines = []
    for r in rows:
        d = r.as_row() if isinstance(r, SegmentMetric) else r
        lines.append(" ".join(f"{k}={_fmt(v)}" for k, v in d.items()))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass(frozen=True)
class SweepRow:
    h: float
    stable: bool
    diverged_at: int
    segments: tuple

    def rms(self, segment):
        return self.segments[segment].rms_error


def sweep_delay(setup, spec, h_values, cfg, warmup_fraction=0.25, workers=None, backend=None):
    """One simulation of ``spec`` per delay in ``h_values``; rows sorted by ``h``.

    Runs are independent and execute on a thread pool (the compiled kernel
    releases the GIL).
    """
    if not spec.uses_delay:
        raise SimulationError(f"{spec.kind} has no delay to sweep")
    hs = sorted(float(h) for h in h_values)
    for h in hs:
        try:
            delay_steps(h, cfg.dt)
        except ObserverError as exc:
            raise SimulationError(str(exc)) from exc

    def run(h):
        s = replace(spec, h=h, name=f"{spec.kind}_h{h:g}")
        tr = simulate(setup, [s], cfg, backend=backend)
        o = tr.observers[0]
        rows = metrics(tr, setup.disturbance, warmup_fraction)
        return SweepRow(h=h, stable=not o.diverged, diverged_at=o.diverged_at, segments=tuple(rows))

    if workers == 1 or len(hs) == 1:
        return [run(h) for h in hs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, hs))
