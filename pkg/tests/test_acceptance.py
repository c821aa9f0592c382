"""The ten acceptance criteria, one test each, at their stated tolerances.

Every test records a ``criterion N: PASS|FAIL`` line; pytest prints them in
the terminal summary and ``python tests/test_acceptance.py`` prints them
directly. Criteria that fail here are reported as they are, not relaxed.
"""

import dataclasses
import functools
import io
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE  # noqa: E402

from delayeso.cli import main as cli_main  # noqa: E402
from delayeso.gain import place_poles, solve_lyapunov  # noqa: E402
from delayeso.model import (  # noqa: E402
    NOMINAL_DC_DRIVE,
    REAL_DC_DRIVE,
    UncertainParams,
    build_extended,
    dc_drive_plant,
    numerical_rank,
    pbh_observability,
)
from delayeso.observers import INTEGRAL_OUTPUT_DELAY_ESO, integral_output_system  # noqa: E402
from delayeso.scenario import load  # noqa: E402
from delayeso.signals import NoiseSpec, constant_profile  # noqa: E402
from delayeso.sim import Setup, metrics, simulate, sweep_delay  # noqa: E402

DELAYS = (0.1, 0.5, 1.0)


def record(n, title, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title} | {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def fig2():
    exp = load("dc_drive_fig2").build()
    return exp, simulate(exp.setup, exp.observers, exp.config)


def window_max(trace, name, t0, t1):
    o = trace[name]
    m = (trace.t >= t0 - 1e-9) & (trace.t <= t1 + 1e-9)
    return float(np.max(o.err_norm[m]))


def sine_rms(trace, profile, warmup, disturbance=False):
    out = {}
    for r in metrics(trace, profile, warmup):
        if r.segment == 2:
            out[r.observer] = r.rms_disturbance if disturbance else r.rms_error
    return out


def test_criterion_01_constant_segment_exact():
    _, tr = fig2()
    worst = {o.name: window_max(tr, o.name, 15.0, 20.0) for o in tr.observers}
    ok = all(v < 1e-4 for v in worst.values())
    record(1, "constant segment ||e|| < 1e-4 (max over 15-20 s)", ok,
           ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def _ramp_oracle(exp):
    """Steady ramp offset of the plain ESO, from the drive parameters alone.

    On a steady ramp ``x(t) = x0 + v t`` with ``A_true v + Dw slope = 0``; the
    lumped disturbance is linear in ``(x, u, tau)``, so its rate is the
    lumped value of ``(v, 0, slope)``. With ``e = xhat - x`` the error obeys
    ``e' = Acl e - Gamma1`` and settles at ``Acl^-1 Gamma1``.
    """
    slope = 0.2
    A_true, Dw = exp.setup.truth.A, exp.setup.truth.Dw
    v = -np.linalg.solve(A_true, Dw[:, 0] * slope)
    ddot = UncertainParams(REAL_DC_DRIVE, NOMINAL_DC_DRIVE).lumped_disturbance(v, 0.0, slope)
    ext = build_extended(exp.setup.model)
    Acl = ext.Abar + exp.observers[0].L @ ext.Cbar
    return np.linalg.solve(Acl, np.concatenate([np.zeros(2), ddot]))


def test_criterion_02_ramp_segment_split():
    exp, tr = fig2()
    delay = {f"DelayEso_h{h:g}": window_max(tr, f"DelayEso_h{h:g}", 35.0, 40.0) for h in DELAYS}
    k40 = int(round(40.0 / exp.config.dt))
    e_std = tr["StandardEso"].error[k40]
    e_ss = _ramp_oracle(exp)
    rel = float(np.linalg.norm(e_std - e_ss) / np.linalg.norm(e_ss))
    ok = all(v < 1e-4 for v in delay.values()) and rel < 0.01
    record(2, "ramp: DelayEso ||e|| < 1e-4; StandardEso = Acl^-1 Gamma1 within 1 %", ok,
           ", ".join(f"{k}={v:.2e}" for k, v in delay.items())
           + f", StandardEso |e|={np.linalg.norm(e_std):.4g} oracle={np.linalg.norm(e_ss):.4g} rel={rel:.2e}")


def test_criterion_03_sine_ordering():
    exp, tr = fig2()
    rms = sine_rms(tr, exp.setup.disturbance, exp.warmup_fraction)
    chain = [rms["DelayEso_h0.1"], rms["DelayEso_h0.5"], rms["DelayEso_h1"], rms["StandardEso"]]
    ratio = chain[2] / chain[1]
    ok = all(a < b for a, b in zip(chain, chain[1:])) and 1.3 <= ratio <= 3.0
    record(3, "sine RMS h=0.1 < 0.5 < 1.0 < StandardEso, rms(1.0)/rms(0.5) in [1.3, 3]", ok,
           " < ".join(f"{v:.4g}" for v in chain) + f", ratio={ratio:.3f}")


def test_criterion_04_instability_below_threshold():
    exp = load("dc_drive_fig2").build()
    spec = next(o for o in exp.observers if o.name == "DelayEso_h0.1")
    dt = exp.config.dt
    grid = [dt * 2**k for k in range(8)]
    rows = sweep_delay(exp.setup, spec, grid + [0.1], exp.config, exp.warmup_fraction)
    by_h = {r.h: r for r in rows}
    unstable = [h for h in grid if not by_h[h].stable]
    ok = bool(unstable) and by_h[0.1].stable
    record(4, "some h in {dt, 2dt, 4dt, ...} diverges, h = 0.1 s stable", ok,
           f"diverged at h={', '.join(f'{h:g}' for h in unstable) or 'none'}; "
           f"first stable grid delay {min((h for h in grid if by_h[h].stable), default=math.nan):g}; "
           f"h=0.1 stable={by_h[0.1].stable}")


def test_criterion_05_noise_robustness():
    exp = load("dc_drive_noise").build()
    noisy = simulate(exp.setup, exp.observers, exp.config)
    clean = simulate(exp.setup, exp.observers, dataclasses.replace(exp.config, noise=NoiseSpec()))
    r_noisy = sine_rms(noisy, exp.setup.disturbance, exp.warmup_fraction)["DelayEso_h0.1"]
    r_clean = sine_rms(clean, exp.setup.disturbance, exp.warmup_fraction)["DelayEso_h0.1"]
    ratio = r_noisy / r_clean
    ok = not noisy.diverged and ratio <= 3.0
    record(5, "5 % noise: no divergence, sine RMS(h=0.1) within 3x of noiseless", ok,
           f"diverged={noisy.diverged}, noisy={r_noisy:.4g}, noiseless={r_clean:.4g}, ratio={ratio:.3g}")


def test_criterion_06_smo_ordering():
    exp = load("smo_fig5").build()
    tr = simulate(exp.setup, exp.observers, exp.config)
    rms = sine_rms(tr, exp.setup.disturbance, exp.warmup_fraction, disturbance=True)
    chain = [rms["DelaySmo_h0.1"], rms["DelaySmo_h0.5"], rms["DelaySmo_h1"], rms["Smo"]]
    ok = all(np.isfinite(chain)) and all(a < b for a, b in zip(chain, chain[1:]))
    record(6, "SMO L=[[0,-5],[-5,0]], rho=10: disturbance RMS h=0.1 < 0.5 < 1.0 < Smo", ok,
           " , ".join(f"{k}={rms[k]:.4g}" for k in ("DelaySmo_h0.1", "DelaySmo_h0.5", "DelaySmo_h1", "Smo"))
           + f", diverged={[o.name for o in tr.observers if o.diverged]}")


def _kron_lyapunov(Acl, Q):
    N = Acl.shape[0]
    I = np.eye(N)
    K = np.kron(I, Acl.T) + np.kron(Acl.T, I)
    return np.linalg.solve(K, -Q.reshape(-1, order="F")).reshape(N, N, order="F")


def test_criterion_07_design_correctness():
    rng = np.random.default_rng(20240607)
    worst_back = worst_fwd = worst_res = worst_kron = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 7))
        p = int(rng.integers(1, N + 1))
        A = rng.normal(size=(N, N))
        C = rng.normal(size=(p, N))
        poles = -(np.arange(1, N + 1) + rng.uniform(-0.25, 0.25, size=N))
        g = place_poles((A, C), poles)
        worst_back = max(worst_back, g.backward_error(A, C))
        worst_fwd = max(worst_fwd, g.eigen_error)
        # Lyapunov checks run on a random stable matrix, shifted left of the axis
        M = rng.normal(size=(N, N))
        Acl = M - (np.linalg.eigvals(M).real.max() + rng.uniform(0.5, 2.0)) * np.eye(N)
        G = rng.normal(size=(N, N))
        Q = G @ G.T + N * np.eye(N)
        P = solve_lyapunov(Acl, Q)
        worst_res = max(worst_res, np.linalg.norm(Acl.T @ P + P @ Acl + Q, 2) / np.linalg.norm(Q, 2))
        Pk = _kron_lyapunov(Acl, Q)
        worst_kron = max(worst_kron, np.linalg.norm(P - Pk, 2) / np.linalg.norm(Pk, 2))
    ok = worst_back < 1e-8 and worst_res < 1e-10 and worst_kron < 1e-9
    record(7, "placement eigencheck < 1e-8, Lyapunov residual < 1e-10 ||Q||, Kronecker < 1e-9", ok,
           f"placement backward={worst_back:.2e} (forward eigenvalue error {worst_fwd:.2e}), "
           f"residual={worst_res:.2e}, kronecker={worst_kron:.2e}")


def _kalman_rank(A, C):
    blocks, M = [], C
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = M @ A
    return numerical_rank(np.vstack(blocks), 1e-9)


def test_criterion_08_observability():
    rng = np.random.default_rng(8)
    agree = hidden = 0
    for _ in range(200):
        N = int(rng.integers(1, 7))
        p = int(rng.integers(1, N + 1))
        A = rng.normal(size=(N, N))
        C = rng.normal(size=(p, N))
        if rng.random() < 0.5 and N > 1:
            k = int(rng.integers(1, N))
            A[k:, :k] = 0.0
            C[:, :k] = 0.0
            T = rng.normal(size=(N, N)) + N * np.eye(N)
            A = T @ A @ np.linalg.inv(T)
            C = C @ np.linalg.inv(T)
        kal = _kalman_rank(A, C) == N
        hidden += not kal
        agree += pbh_observability(A, C).observable == kal
    drive = pbh_observability(build_extended(dc_drive_plant(NOMINAL_DC_DRIVE))).observable
    related = load("relateddoc_example").build().setup.model
    rel = pbh_observability(build_extended(related)).observable
    ok = agree == 200 and drive and not rel
    record(8, "PBH == Kalman rank on 200 systems; drive observable; related example unobservable", ok,
           f"agree={agree}/200 ({hidden} unobservable), drive={drive}, related={rel}")


def test_criterion_09_related_example():
    exp = load("relateddoc_example").build()
    spec = exp.observers[0]
    assert spec.kind == INTEGRAL_OUTPUT_DELAY_ESO
    radii, flags = {}, {}
    for h in (spec.h, spec.h / 2):
        s = dataclasses.replace(spec, h=h, name=f"io_h{h:g}")
        cfg = dataclasses.replace(exp.config, xhat0=tuple(exp.config.xhat0[spec.name]))
        tr = simulate(exp.setup, [s], cfg)
        o = tr.observers[0]
        flags[h] = o.diverged_at
        post = tr.t >= 550.0
        dist = np.linalg.norm(o.disturbance_error[post], axis=1)
        radii[h] = float(np.max(dist)) if not o.diverged else math.inf
    ios = integral_output_system(exp.setup.model)
    eig = np.linalg.eigvals(ios.ext.Abar + spec.L @ ios.C2)
    h0, h1 = spec.h, spec.h / 2
    ok = math.isfinite(radii[h0]) and (not math.isfinite(radii[h1]) or radii[h1] <= radii[h0])
    record(9, "related example (printed L, h=0.05): bounded error, halving h does not grow the ball", ok,
           f"h={h0:g}: radius={radii[h0]:.4g} diverged_at_t={flags[h0] * exp.config.dt if flags[h0] >= 0 else None}; "
           f"h={h1:g}: radius={radii[h1]:.4g}; eig(Abar+L C2) max real={eig.real.max():.3f}")


def _final_states(setup, specs, dt, integrator):
    from delayeso.sim import SimConfig

    tr = simulate(setup, specs, SimConfig(dt=dt, t_end=2.0, x0=(10.0, 5.0), integrator=integrator))
    return {o.name: o.Xhat[-1] for o in tr.observers}


def test_criterion_10_numerical_hygiene(tmp_path):
    blobs = []
    for i in range(2):
        out = tmp_path / str(i)
        code = cli_main(["run", "--scenario", "dc_drive_noise", "--out", str(out), "--seed", "2024"],
                        out=io.StringIO())
        assert code == 0
        blobs.append((out / "dc_drive_noise.csv").read_bytes())
    same = blobs[0] == blobs[1]

    exp = load("dc_drive_fig2").build()
    quiet = Setup(exp.setup.truth, exp.setup.model, constant_profile([0.0], 2.0), constant_profile([0.0], 2.0))
    specs = [o for o in exp.observers if o.name in ("StandardEso", "DelayEso_h0.1")]
    ratios = {}
    for integ in ("rk4", "euler"):
        Z = [_final_states(quiet, specs, dt, integ) for dt in (2e-3, 1e-3, 5e-4)]
        ratios[integ] = {
            k: float(np.linalg.norm(Z[0][k] - Z[1][k]) / np.linalg.norm(Z[1][k] - Z[2][k])) for k in Z[0]
        }
    ok = same and all(12.0 <= r <= 20.0 for r in ratios["rk4"].values())
    record(10, "bitwise-equal seeded CSV; RK4 step-halving ratio in [12, 20]", ok,
           f"identical={same}, rk4 " + ", ".join(f"{k}={v:.2f}" for k, v in ratios["rk4"].items())
           + " (euler " + ", ".join(f"{v:.2f}" for v in ratios["euler"].values()) + ")")


if __name__ == "__main__":
    import tempfile

    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for t in tests:
        try:
            if "tmp_path" in t.__code__.co_varnames[: t.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    t(Path(d))
            else:
                t()
        except AssertionError:
            failed += 1
    print(f"{len(tests) - failed}/{len(tests)} criteria pass")
    sys.exit(1 if failed else 0)
