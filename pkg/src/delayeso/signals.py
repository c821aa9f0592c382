"""Piecewise disturbance/input schedules and measurement noise.

A :class:`Profile` holds one ordered list of segments per channel. Each
segment is a closed-form shape in local time ``s = t - t_start``, so values,
derivatives of any order and derivative bounds are exact.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Constant:
    level: float

    def value(self, s, k=0):
        s = np.asarray(s, dtype=float)
        return np.full_like(s, self.level if k == 0 else 0.0)

    def bounds(self):
        return 0.0, 0.0


@dataclass(frozen=True)
class Ramp:
    level0: float
    slope: float

    def value(self, s, k=0):
        s = np.asarray(s, dtype=float)
        if k == 0:
            return self.level0 + self.slope * s
        return np.full_like(s, self.slope if k == 1 else 0.0)

    def bounds(self):
        return abs(self.slope), 0.0


@dataclass(frozen=True)
class Sine:
    offset: float
    amplitude: float
    omega: float
    phase: float = 0.0

    def value(self, s, k=0):
        s = np.asarray(s, dtype=float)
        # k-th derivative of sin is sin shifted by k*pi/2
        v = self.amplitude * self.omega**k * np.sin(self.omega * s + self.phase + k * math.pi / 2)
        return v + self.offset if k == 0 else v

    def bounds(self):
        a, w = abs(self.amplitude), abs(self.omega)
        return a * w, a * w * w


@dataclass(frozen=True)
class SineSum:
    """``offset + sum_i a_i sin(w_i s + phi_i)``; components are ``(a, w, phi)``."""

    offset: float
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(tuple(float(v) for v in c) for c in self.components))

    def value(self, s, k=0):
        s = np.asarray(s, dtype=float)
        out = np.full_like(s, self.offset if k == 0 else 0.0)
        for a, w, ph in self.components:
            out = out + a * w**k * np.sin(w * s + ph + k * math.pi / 2)
        return out

    def bounds(self):
        d1 = sum(abs(a * w) for a, w, _ in self.components)
        d2 = sum(abs(a * w * w) for a, w, _ in self.components)
        return d1, d2


SHAPES = {"constant": Constant, "ramp": Ramp, "sine": Sine, "sine_sum": SineSum}


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    shape: object

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"empty segment [{self.t_start}, {self.t_end})")


@dataclass(frozen=True)
class Profile:
    """Piecewise-analytic vector signal, one segment list per channel.

    Segments of a channel must be contiguous. Unless ``allow_jumps`` is set,
    the signal must also be continuous at every join.
    """

    channels: tuple
    allow_jumps: bool = False
    join_tol: float = 1e-9

    def __post_init__(self):
        chans = tuple(tuple(c) for c in self.channels)
        if not chans or any(not c for c in chans):
            raise ValueError("profile needs at least one segment per channel")
        for ci, segs in enumerate(chans):
            for a, b in zip(segs, segs[1:]):
                if abs(a.t_end - b.t_start) > 1e-12 * max(1.0, abs(a.t_end)):
                    raise ValueError(f"channel {ci}: segments not contiguous at t={a.t_end}")
                if not self.allow_jumps:
                    left = float(a.shape.value(a.t_end - a.t_start))
                    right = float(b.shape.value(0.0))
                    if abs(left - right) > self.join_tol * max(1.0, abs(left)):
                        raise ValueError(
                            f"channel {ci}: discontinuity at t={b.t_start} ({left} -> {right})"
                        )
        object.__setattr__(self, "channels", chans)

    @property
    def q(self):
        return len(self.channels)

    @property
    def t_start(self):
        return max(c[0].t_start for c in self.channels)

    @property
    def t_end(self):
        return min(c[-1].t_end for c in self.channels)

    def breakpoints(self):
        """Sorted segment boundaries over all channels, including both ends."""
        pts = {self.t_start, self.t_end}
        for segs in self.channels:
            pts.update(s.t_start for s in segs if self.t_start < s.t_start < self.t_end)
        return sorted(pts)

    def eval(self, t, k=0):
        """Value (``k = 0``) or ``k``-th derivative at time(s) ``t``.

        Returns shape ``(q,)`` for scalar ``t`` and ``(len(t), q)`` otherwise.
        Derivatives are one-sided (from the right) at joins.
        """
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.t_start, self.t_end
        slack = 1e-9 * max(1.0, abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            bad = t[(t < lo - slack) | (t > hi + slack)][0]
            raise ValueError(f"t={bad} outside profile range [{lo}, {hi}]")
        out = np.empty((t.size, self.q))
        for ci, segs in enumerate(self.channels):
            starts = np.array([s.t_start for s in segs])
            idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(segs) - 1)
            for si, seg in enumerate(segs):
                mask = idx == si
                if np.any(mask):
                    out[mask, ci] = seg.shape.value(t[mask] - seg.t_start, k)
        return out[0] if scalar else out

    def __call__(self, t):
        return self.eval(t)


DisturbanceProfile = Profile


def constant_profile(values, t_end, t_start=0.0):
    """One constant segment per channel."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return Profile(tuple((Segment(t_start, t_end, Constant(float(v))),) for v in values))


def derivative_bounds(profile, window):
    """``(d1, d2)`` bounding ``||d'||`` and ``||d''||`` over ``window = (t0, t1)``.

    Per channel the supremum of the bounds of every segment meeting the window;
    channels are combined in the Euclidean norm. A window crossing a jump
    gives ``d1 = d2 = inf``.
    """
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    if t0 < profile.t_start - 1e-12 or t1 > profile.t_end + 1e-12:
        raise ValueError(f"window [{t0}, {t1}] not covered by the profile")
    b1 = np.zeros(profile.q)
    b2 = np.zeros(profile.q)
    for ci, segs in enumerate(profile.channels):
        for j, seg in enumerate(segs):
            if seg.t_end <= t0 or seg.t_start >= t1:
                continue
            d1, d2 = seg.shape.bounds()
            b1[ci] = max(b1[ci], d1)
            b2[ci] = max(b2[ci], d2)
            if j > 0 and t0 < seg.t_start and profile.allow_jumps:
                prev = segs[j - 1]
                left = float(prev.shape.value(prev.t_end - prev.t_start))
                if abs(left - float(seg.shape.value(0.0))) > profile.join_tol * max(1.0, abs(left)):
                    return math.inf, math.inf
    return float(np.linalg.norm(b1)), float(np.linalg.norm(b2))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white measurement noise.

    The amplitude of channel ``j`` at sample ``k`` is ``relative_amplitude``
    times the largest ``|y_j|`` seen up to and including ``k``. Uniform noise
    is drawn on ``[-a, a]``; gaussian noise has the same variance
    (``sigma = a / sqrt(3)``).
    """

    enabled: bool = False
    relative_amplitude: float = 0.05
    seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self):
        if not 0.0 <= self.relative_amplitude <= 1.0:
            raise ValueError(f"relative_amplitude must lie in [0, 1], got {self.relative_amplitude}")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed}")

    @property
    def active(self):
        return self.enabled and self.relative_amplitude > 0.0


@dataclass
class NoiseState:
    """Per-run noise generator: RNG plus running channel maxima."""

    spec: NoiseSpec
    rng: np.random.Generator = field(default=None)
    running_max: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.spec.seed)

    def _unit(self, shape):
        if self.spec.distribution == "uniform":
            return self.rng.uniform(-1.0, 1.0, size=shape)
        return self.rng.standard_normal(size=shape) / math.sqrt(3.0)


def apply_noise(y, spec, state=None):
    """Noisy copy of one measurement vector ``y``.

    ``state`` carries the RNG and running maxima between calls; a fresh one is
    created from ``spec.seed`` when omitted. Returns ``y`` unchanged when the
    spec is inactive.
    """
    y = np.asarray(y, dtype=float)
    if not spec.active:
        return y.copy()
    if state is None:
        state = NoiseState(spec)
    mag = np.abs(y)
    state.running_max = mag if state.running_max is None else np.maximum(state.running_max, mag)
    return y + spec.relative_amplitude * state.running_max * state._unit(y.shape)


def noise_stream(Y, spec, state=None):
    """Noise samples for a whole measurement record ``Y`` of shape ``(K, p)``.

    Draw-for-draw identical to calling :func:`apply_noise` on each row in
    order; returns the additive noise, not the noisy signal.
    """
    Y = np.asarray(Y, dtype=float)
    if not spec.active:
        return np.zeros_like(Y)
    if state is None:
        state = NoiseState(spec)
    runmax = np.maximum.accumulate(np.abs(Y), axis=0)
    if state.running_max is not None:
        runmax = np.maximum(runmax, state.running_max)
    state.running_max = runmax[-1].copy()
    return spec.relative_amplitude * runmax * state._unit(Y.shape)


def dc_drive_torque_profile(level=2.0, ramp_to=6.0, sine_amplitude=2.0, sine_omega=0.5, segment=20.0):
    """Load torque: constant, then ramp, then sine around the ramp's end level.

    Segment boundaries at ``segment`` and ``2 * segment``; the sine runs for
    ``2 * segment`` (defaults give 0-20 s, 20-40 s, 40-80 s).
    """
    T = float(segment)
    slope = (ramp_to - level) / T
    return Profile(
        (
            (
                Segment(0.0, T, Constant(level)),
                Segment(T, 2 * T, Ramp(level, slope)),
                Segment(2 * T, 4 * T, Sine(ramp_to, sine_amplitude, sine_omega, 0.0)),
            ),
        )
    )
