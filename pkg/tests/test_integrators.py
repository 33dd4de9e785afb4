import math

import numpy as np
import pytest
from scipy import linalg, signal

from pirnn.core import G, GroundMotionRecord, StructuralModel
from pirnn.integrators import (Integrator, IntegratorConfig, Method, NonConvergence, State,
                               initial_acceleration, integrate, kr_alpha_coefficients)
from pirnn.structural_models import FrameConfig, assemble_frame, elastic_stiffness

W = 2 * math.pi          # T = 1 s


def sdof(zeta=0.0, m=1.0):
    return StructuralModel(M=[[m]], C=[[2 * zeta * W * m]], K=[[W * W * m]], gamma=[1.0])


def two_dof():
    M = np.diag([2.0, 1.0])
    K = np.array([[600.0, -200.0], [-200.0, 200.0]])
    C = 0.01 * M + 0.002 * K
    return StructuralModel(M=M, C=C, K=K, gamma=[1.0, 1.0])


def zeros(n, dt):
    return GroundMotionRecord("zero", dt, np.zeros(n))


def free_exact(t, zeta, x0=0.01):
    wd = W * math.sqrt(1 - zeta ** 2)
    return x0 * np.exp(-zeta * W * t) * (np.cos(wd * t) + zeta * W / wd * np.sin(wd * t))


def harmonic_exact(t, zeta, p0=1.0, Tf=0.7):
    """Unit-mass SDOF from rest under p0 sin(wf t)."""
    wf = 2 * math.pi / Tf
    r = wf / W
    wd = W * math.sqrt(1 - zeta ** 2)
    den = (1 - r * r) ** 2 + (2 * zeta * r) ** 2
    c1 = p0 / W ** 2 * (1 - r * r) / den
    c2 = -p0 / W ** 2 * 2 * zeta * r / den
    a = -c2
    b = (zeta * W * a - c1 * wf) / wd
    return (c1 * np.sin(wf * t) + c2 * np.cos(wf * t)
            + np.exp(-zeta * W * t) * (a * np.cos(wd * t) + b * np.sin(wd * t)))


def linear_run(method, zeta, dt, kind, T=10.0):
    n = int(round(T / dt)) + 1
    t = np.arange(n) * dt
    if kind == "free":
        rec, X0, exact = zeros(n, dt), [0.01], free_exact(t, zeta)
    else:
        # F = -m ag, so ag = -sin gives a +sin load
        rec = GroundMotionRecord("h", dt, -np.sin(2 * math.pi / 0.7 * t))
        X0, exact = None, harmonic_exact(t, zeta)
    it = Integrator(sdof(zeta), IntegratorConfig(method=method, dt=dt))
    return it.run(rec, X0=X0).X[:, 0], exact, it


def test_initial_acceleration_examples():
    m = sdof()
    assert initial_acceleration(m, [0.0], [0.0], 0.0) == pytest.approx([0.0])
    assert initial_acceleration(m, [0.0], [0.0], 3.0) == pytest.approx([-3.0])
    assert initial_acceleration(m, [0.0], [0.0], 3.0, sign_convention="positive") == pytest.approx([3.0])
    assert initial_acceleration(m, [1.0], [0.0], 0.0) == pytest.approx([-W * W])
    frame = assemble_frame()
    assert initial_acceleration(frame, np.zeros(2), np.zeros(2), 2.0) == pytest.approx([-2.0, -2.0])


def test_kr_coefficients_undamped_scalar():
    m, k, dt = 2.0, 50.0, 0.05
    p = kr_alpha_coefficients([[m]], [[0.0]], [[k]], 1.0, dt)
    a1 = m / (m + dt * dt * k / 4)
    assert p.alpha1[0, 0] == pytest.approx(a1, rel=1e-14)
    assert p.alpha2[0, 0] == pytest.approx(a1, rel=1e-14)
    assert p.alpha3[0, 0] == pytest.approx(0.5, rel=1e-14)
    assert p.alpha_f == 0.5 and p.alpha_m == 0.5
    with pytest.raises(ValueError):
        kr_alpha_coefficients([[m]], [[0.0]], [[k]], 1.5, dt)


def _amplification(model, cfg, size):
    """Columns: one zero-load step applied to each unit state (linear model)."""
    it = Integrator(model, cfg)
    n = model.n_dof
    cols = []
    for j in range(size):
        z = np.zeros(size)
        z[j] = 1.0
        X, V = z[:n], z[n:2 * n]
        A = z[2 * n:] if size == 3 * n else np.linalg.solve(model.M, -model.C @ V - model.K @ X)
        s = State(X, V, A, model.K @ X + model.C @ V, ())
        s1 = it.step(s, 0.0, 0.0)
        cols.append(np.concatenate([s1.X, s1.V, s1.A][:size // n]))
    return np.column_stack(cols)


def test_kr_amplification_matches_newmark_average_acceleration():
    """With rho_inf = 1 the principal roots coincide with the trapezoidal rule;
    the remaining (spurious) roots sit at -alpha_m / (1 - alpha_m) = -1."""
    model = two_dof()
    dt = 0.02
    kr = np.linalg.eigvals(_amplification(model, IntegratorConfig(method="kr", dt=dt), 6))
    nm = np.linalg.eigvals(_amplification(model, IntegratorConfig(method="newmark", dt=dt), 4))
    for lam in nm:
        assert np.min(np.abs(kr - lam)) < 1e-10
    spurious = [lam for lam in kr if np.min(np.abs(nm - lam)) > 1e-8]
    assert len(spurious) == 2
    assert np.allclose(spurious, -1.0, atol=1e-8)


def test_kr_first_step_from_rest_under_constant_force():
    m, k, dt, F = 1.0, 10.0, 1e-3, 2.0
    model = StructuralModel(M=[[m]], C=[[0.0]], K=[[k]], gamma=[1.0])
    it = Integrator(model, IntegratorConfig(method="kr", dt=dt))
    s1 = it.step(it.start(-F), -F, -F)
    a2 = kr_alpha_coefficients([[m]], [[0.0]], [[k]], 1.0, dt).alpha2[0, 0]
    # the explicit update uses alpha2 = (1/2 + gamma) alpha1, i.e. about F/m dt^2
    assert s1.X[0] == pytest.approx(a2 * F / m * dt * dt, rel=1e-12)
    assert s1.V[0] == pytest.approx(dt * a2 * F / m, rel=1e-12)


def test_kr_free_particle_state_unchanged():
    model = StructuralModel(M=[[3.0]], C=[[0.0]], K=[[0.0]], gamma=[1.0])
    h = integrate(model, zeros(50, 0.01), IntegratorConfig(method="kr", dt=0.01), X0=[0.4])
    assert np.all(h.X == 0.4) and np.all(h.V == 0.0) and np.all(h.A == 0.0)


@pytest.mark.parametrize("method", list(Method))
def test_zero_excitation_gives_zero_response(method):
    for model in (sdof(0.05), assemble_frame()):
        h = integrate(model, zeros(200, 0.02), IntegratorConfig(method=method))
        assert not np.any(h.X) and not np.any(h.V) and not np.any(h.A)
        for f in h.elem_forces.values():
            assert not np.any(f)


@pytest.mark.parametrize("method", list(Method))
@pytest.mark.parametrize("zeta", [0.0, 0.05])
@pytest.mark.parametrize("kind", ["free", "harmonic"])
def test_linear_sdof_peak_matches_closed_form(method, zeta, kind):
    x, exact, _ = linear_run(method, zeta, 0.005, kind)
    err = abs(np.abs(x).max() - np.abs(exact).max()) / np.abs(exact).max()
    assert err < 0.01


def _order(method, zeta, kind):
    e = []
    for dt in (0.005, 0.0025):
        x, exact, _ = linear_run(method, zeta, dt, kind)
        e.append(np.sqrt(np.mean((x - exact) ** 2)))
    return math.log2(e[0] / e[1])


@pytest.mark.parametrize("method", ["newmark", "hht"])
@pytest.mark.parametrize("kind", ["free", "harmonic"])
def test_implicit_second_order(method, kind):
    assert _order(method, 0.05, kind) >= 1.9


def test_kr_second_order_from_rest():
    assert _order("kr", 0.0, "harmonic") >= 1.9
    assert _order("kr", 0.05, "harmonic") >= 1.9


def test_kr_free_vibration_start_is_first_order():
    # started from the equilibrium acceleration A0 = -k x0 / m, the explicit
    # update leaves an O(dt) velocity offset that never decays
    assert _order("kr", 0.0, "free") == pytest.approx(0.87, abs=0.05)


@pytest.mark.parametrize("cfg", [IntegratorConfig(method="newmark", dt=0.005),
                                 IntegratorConfig(method="hht", dt=0.005, alpha_hht=0.0),
                                 IntegratorConfig(method="kr", dt=0.005, rho_inf=1.0)])
def test_energy_drift_undamped(cfg):
    n = 50 * 200 + 1
    h = integrate(sdof(0.0), zeros(n, cfg.dt), cfg, X0=[0.01])
    E = 0.5 * h.V[:, 0] ** 2 + 0.5 * W * W * h.X[:, 0] ** 2
    # secular drift: cycle-averaged energy of the first and last cycle
    first, last = E[:200].mean(), E[-201:-1].mean()
    assert abs(last / first - 1) < 1e-3


def _resonant_sine(dt, amp=0.2 * G, T=10.0):
    t = np.arange(int(round(T / dt)) + 1) * dt
    return GroundMotionRecord("sine", dt, amp * np.sin(2 * math.pi * t / 0.8))


def test_frame_hht_and_kr_agree_at_small_dt():
    model = assemble_frame()
    rec = _resonant_sine(0.002)
    hht = Integrator(model, IntegratorConfig(method="hht", dt=0.002))
    kr = Integrator(model, IntegratorConfig(method="kr", dt=0.002))
    a, b = hht.run(rec), kr.run(rec)
    rms = np.sqrt(np.mean((a.X - b.X) ** 2, axis=0)) / np.sqrt(np.mean(a.X ** 2, axis=0))
    assert np.all(rms < 0.02)
    assert np.abs(a.X[:, 0]).max() > 2 * 0.01      # the brace yields
    assert kr.stats["newton_iterations"] == 0
    assert 0 < hht.stats["max_residual"] <= 1e-10


def test_elastic_frame_matches_modal_superposition():
    model = assemble_frame(FrameConfig(damper_c=0.0, brace_yield_drift=1e6))
    K, M, C = elastic_stiffness(model), model.M, model.C
    dt = 0.0025
    t = np.arange(int(round(10 / dt)) + 1) * dt
    ag = 0.3 * G * np.sin(2 * math.pi * t / 0.8) * np.sin(math.pi * t / 10) ** 2
    rec = GroundMotionRecord("m", dt, ag)
    w2, phi = linalg.eigh(K, M)
    X = np.zeros((t.size, 2))
    for k in range(2):
        ph = phi[:, k]
        mk = ph @ M @ ph
        sys = signal.lti([[0, 1], [-w2[k], -(ph @ C @ ph) / mk]], [[0], [1]], [[1, 0]], [[0]])
        _, q, _ = signal.lsim(sys, -(ph @ M @ model.gamma) / mk * ag, t)
        X += np.outer(q, ph)
    for method in Method:
        h = integrate(model, rec, IntegratorConfig(method=method, dt=dt))
        rms = np.sqrt(np.mean((h.X - X) ** 2, axis=0)) / np.sqrt(np.mean(X ** 2, axis=0))
        assert np.all(rms < 0.005), (method, rms)


def test_history_length_1501():
    rec = GroundMotionRecord("r", 0.02, 0.1 * np.sin(np.arange(1501) * 0.1))
    h = integrate(sdof(0.05), rec, IntegratorConfig())
    assert h.X.shape == (1501, 1) and h.V.shape == h.A.shape == (1501, 1)
    assert h.A[0, 0] == pytest.approx(-rec.samples[0])


def test_dt_mismatch_rejected():
    with pytest.raises(ValueError):
        integrate(sdof(), zeros(10, 0.01), IntegratorConfig(dt=0.02))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(newton_max_iter=0)
    with pytest.raises(ValueError):
        IntegratorConfig(alpha_hht=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(sign_convention="absolute")
    assert IntegratorConfig(method="kr").method is Method.KR_ALPHA


class _FlakyOnce(Integrator):
    """Fails the full-size step at one index so the retry path is exercised."""

    def step(self, s, ag0, ag1, index=0, dt=None):
        if index == 5 and dt is None:
            raise NonConvergence(index, 1, 1.0)
        return super().step(s, ag0, ag1, index, dt)


def test_retry_with_substeps():
    model = sdof(0.05)
    rec = GroundMotionRecord("r", 0.02, np.sin(np.arange(20) * 0.3))
    it = _FlakyOnce(model, IntegratorConfig(method="newmark"))
    h = it.run(rec)
    assert it.stats["retries"] == 1
    ref = integrate(model, rec, IntegratorConfig(method="newmark"))
    assert np.allclose(h.X[:5], ref.X[:5], rtol=0, atol=0)
    assert np.allclose(h.X, ref.X, rtol=0.05, atol=1e-4)


def test_nonconvergence_reports_step():
    cfg = IntegratorConfig(method="hht", newton_max_iter=1)
    rec = GroundMotionRecord("r", 0.02, np.sin(np.arange(20) * 0.3))
    with pytest.raises(NonConvergence) as info:
        integrate(sdof(0.05), rec, cfg)
    assert info.value.step == 1 and info.value.iterations == 1
