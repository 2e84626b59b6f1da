import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wptlink.analysis import (REPORT_COLUMNS, AnalysisError, NotConverged, cycle_metrics,
                              detect_steady_state, fourier_coefficient, fundamental_phase,
                              harmonic_ratios, linear_regression, phasor_solve,
                              rectifier_ac_resistance, rising_crossings, zero_phase_frequency)
from wptlink.circuit import Resistor, default_circuit, default_dt, run_transient
from wptlink.controller import ControllerConfig, fixed_drive
from wptlink.harness import bench_dataset
from wptlink.magnetics import coil_mutual, default_rx_coil, default_tx_coil, make_coil

F0 = 127e3
TX, RX = default_tx_coil(2.0), default_rx_coil(0.8)


def fraction_fit(points):
    """Exact least squares in rational arithmetic (oracle for the float fit)."""
    pts = [(Fraction(str(x)), Fraction(str(y))) for x, y in points]
    n = len(pts)
    mx = sum(x for x, _ in pts) / n
    my = sum(y for _, y in pts) / n
    sxx = sum((x - mx) ** 2 for x, _ in pts)
    sxy = sum((x - mx) * (y - my) for x, y in pts)
    syy = sum((y - my) ** 2 for _, y in pts)
    slope = sxy / sxx
    return slope, my - slope * mx, sxy * sxy / (sxx * syy)


class TestSteadyState:
    def test_zero_trace_is_cycle_one(self):
        t = np.linspace(0, 10e-6, 101)
        assert detect_steady_state((t, np.zeros((101, 3))), period=1e-6) == 1

    def test_exponential_settling_closed_form(self):
        # x = 1 + exp(-t/tau), tau = 5 periods; boundary residual is
        # a*c/(1+a) with a = exp(-n/5), c = 1 - exp(-1/5)
        T, tol = 1e-6, 1e-3
        t = np.linspace(0, 200 * T, 200 * 50 + 1)
        x = 1 + np.exp(-t / (5 * T))
        c = 1 - math.exp(-0.2)
        n_exact = math.floor(-5 * math.log(tol / (c - tol))) + 1
        assert detect_steady_state((t, x), period=T, tol=tol) == n_exact

    def test_not_converged_carries_residual(self):
        T = 1e-6
        t = np.linspace(0, 20 * T, 2001)
        with pytest.raises(NotConverged) as exc:
            detect_steady_state((t, t + T), period=T, tol=1e-3)
        # ramp: |s(n+1) - s(n)| / |s(n)| = 1 / (n + 1) at the last boundary
        assert exc.value.residual == pytest.approx(1 / 20, rel=1e-6)

    def test_too_short(self):
        t = np.linspace(0, 2e-6, 21)
        with pytest.raises(AnalysisError):
            detect_steady_state((t, np.ones(21)), period=1e-6)


class TestHarmonics:
    N = 1000

    def grid(self, periods=4):
        dt = 1 / (F0 * self.N)
        return np.arange(periods * self.N) * dt

    def test_pure_sine(self):
        t = self.grid()
        r = harmonic_ratios(t, 2.5 * np.sin(2 * np.pi * F0 * t + 0.3), F0, 5)
        assert r[0] == 1.0
        assert max(r[1:]) < 1e-12

    def test_square_wave_series(self):
        t = self.grid()
        # sample mid-step so no sample sits on an edge
        x = np.sign(np.sin(2 * np.pi * F0 * (t + 0.5 / (F0 * self.N))))
        r = harmonic_ratios(t, x, F0, 5)
        assert r[2] == pytest.approx(1 / 3, rel=1e-4)
        assert r[4] == pytest.approx(1 / 5, rel=1e-4)
        assert r[1] < 1e-12 and r[3] < 1e-12

    def test_fractional_periods_rejected(self):
        t = self.grid()[: int(3.5 * self.N)]
        with pytest.raises(AnalysisError, match="whole number"):
            harmonic_ratios(t, np.sin(2 * np.pi * F0 * t), F0, 3)

    def test_series_rlc_third_harmonic(self):
        # Q = 10 tank under square-wave drive at f0
        Q = 10.0
        r = 2 * math.pi * F0 * 24e-6 / Q
        cfg = default_circuit(m=0.0, tx=make_coil(24e-6, r - 0.1, 25e-3))
        n = 256
        tr = run_transient(cfg, fixed_drive(F0), 200 / F0, 1 / (F0 * n))
        sel = slice(len(tr.t) - 1 - 20 * n, len(tr.t) - 1)
        got = harmonic_ratios(tr.t[sel], tr.i1[sel], F0, 3)[2]
        expect = (1 / 3) / math.sqrt(1 + Q ** 2 * (3 - 1 / 3) ** 2)
        assert abs(got - expect) < 2e-3
        assert expect == pytest.approx(0.0125, abs=1e-4)

    def test_phase(self):
        t = self.grid()
        v = np.sin(2 * np.pi * F0 * t)
        i = np.sin(2 * np.pi * F0 * t - math.radians(30))
        assert fundamental_phase(t, v, i, F0) == pytest.approx(-30.0, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), n_h=st.integers(1, 20))
    def test_parseval_bound(self, seed, n_h):
        rng = np.random.default_rng(seed)
        t = np.arange(64) / (F0 * 64)
        x = rng.normal(size=64)
        amps = np.array([abs(fourier_coefficient(t, x, k * F0)) for k in range(1, n_h + 1)])
        assert np.sum(amps ** 2) / 2 <= np.mean(x ** 2) + 1e-9


class TestPhasor:
    def test_uncoupled(self):
        cfg = default_circuit(m=0.0, load=Resistor(100.0), rectifier=False)
        w = 2 * math.pi * 120e3
        sol = phasor_solve(cfg, 120e3)
        assert sol.i2 == 0
        z1 = (cfg.tx.esr + cfg.bridge_ron
              + 1j * (w * cfg.tx.inductance - 1 / (w * cfg.c1)))
        assert sol.z_in == pytest.approx(z1, rel=1e-12)

    def test_reflected_impedance_hand_value(self):
        m = 3.3586e-6
        cfg = default_circuit(m=m, load=Resistor(100.0), rectifier=False)
        assert 2 * math.pi * F0 * m == pytest.approx(2.680, abs=1e-3)
        r_ac = 130.3 - cfg.rx.esr
        sol = phasor_solve(cfg, F0, r_ac=r_ac)
        r1 = cfg.tx.esr + cfg.bridge_ron
        assert sol.z_in.real - r1 == pytest.approx(0.0551, abs=1e-4)
        assert abs(sol.z_in.imag) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(k=st.floats(0.001, 0.5), r_ac=st.floats(1.0, 500.0), esr1=st.floats(0.05, 3.0),
           esr2=st.floats(0.05, 3.0))
    def test_eta_closed_form(self, k, r_ac, esr1, esr2):
        tx, rx = default_tx_coil(esr1), default_rx_coil(esr2)
        m = k * math.sqrt(tx.inductance * rx.inductance)
        cfg = default_circuit(m=m, tx=tx, rx=rx, rectifier=False)
        sol = phasor_solve(cfg, F0, r_ac=r_ac)
        w = 2 * math.pi * F0
        r1, r2 = esr1 + cfg.bridge_ron, esr2 + r_ac
        eta = (w * m) ** 2 * r_ac / (r2 * (r1 * r2 + (w * m) ** 2))
        assert sol.eta_ac == pytest.approx(eta, rel=1e-12)
        assert 0.0 <= sol.eta_ac <= 1.0

    def test_lossless_resonance_is_singular(self):
        tx, rx = default_tx_coil(0.0), default_rx_coil(0.0)
        cfg = default_circuit(m=0.0, tx=tx, rx=rx, rectifier=False, bridge_ron=0.0)
        with pytest.raises(AnalysisError):
            phasor_solve(cfg, F0, r_ac=0.0)

    def test_rectifier_mapping(self):
        assert rectifier_ac_resistance(100.0) == pytest.approx(800 / math.pi ** 2)
        assert rectifier_ac_resistance(100.0, "inductive") == pytest.approx(
            100 * math.pi ** 2 / 8)
        with pytest.raises(AnalysisError):
            rectifier_ac_resistance(1.0, "other")


class TestZeroPhase:
    def test_uncoupled_is_tank_resonance(self):
        cfg = default_circuit(m=0.0, f0=125e3, rectifier=False)
        f = zero_phase_frequency(cfg, (119e3, 135e3))
        f_ref = 1 / (2 * math.pi * math.sqrt(cfg.tx.inductance * cfg.c1))
        assert f == pytest.approx(f_ref, rel=2e-6)

    def test_weak_coupling_heavy_damping(self):
        m = 0.05 * math.sqrt(24e-6 * 47e-6)
        cfg = default_circuit(m=m, load=Resistor(500.0), rectifier=False)
        assert zero_phase_frequency(cfg, (119e3, 135e3)) == pytest.approx(F0, rel=5e-3)

    def test_no_sign_change(self):
        with pytest.raises(AnalysisError, match="sign"):
            zero_phase_frequency(default_circuit(rectifier=False), (128e3, 135e3))


@pytest.fixture(scope="module")
def run():
    cfg = default_circuit(m=coil_mutual(TX, RX, 1e-2), tx=TX, rx=RX, load=Resistor(120.0))
    return run_transient(cfg, ControllerConfig(), 3e-3, default_dt(135e3))


class TestCycleMetrics:
    def test_zero_drive(self):
        cfg = default_circuit()
        tr = run_transient(cfg, fixed_drive(F0, duty=1e-9), 1e-4, default_dt(F0))
        rep = cycle_metrics(tr, 5, t_start=0.0, period=1 / F0)
        assert rep.p_source == 0.0 and rep.p_load == 0.0 and rep.efficiency == 0.0

    def test_fractional_window(self, run):
        with pytest.raises(AnalysisError, match="whole"):
            cycle_metrics(run, 2.5)

    def test_ohms_law(self, run):
        zc = rising_crossings(run.t, run.i1)
        rep = cycle_metrics(run, 50, t_start=zc[-51])
        assert rep.p_load == pytest.approx(rep.v_load ** 2 / 120.0, rel=5e-3)
        assert rep.p_source == pytest.approx(run.circuit.v_supply * rep.i_supply_avg)
        assert rep.efficiency == pytest.approx(rep.p_load / rep.p_source)
        assert 0 <= rep.efficiency <= 1

    def test_rectifier_never_beats_linear_oracle(self, run):
        zc = rising_crossings(run.t, run.i1)
        rep = cycle_metrics(run, 50, t_start=zc[-51])
        eta_ac = phasor_solve(run.circuit, rep.f_lock).eta_ac
        assert rep.efficiency <= eta_ac + 0.01

    def test_row_layout(self, run):
        zc = rising_crossings(run.t, run.i1)
        rep = cycle_metrics(run, 10, t_start=zc[-11])
        assert len(rep.row(1.0)) == len(REPORT_COLUMNS)


class TestRegression:
    def test_exact_line(self):
        s, b, r2 = linear_regression([(0, 1), (1, 3), (2, 5), (5, 11)])
        assert (s, b, r2) == pytest.approx((2.0, 1.0, 1.0), rel=1e-14)

    def test_bench_oracle(self):
        pts = [(r.distance * 100, r.efficiency * 100) for r in bench_dataset()]
        slope, intercept, r2 = fraction_fit([(round(x, 6), round(y, 6)) for x, y in pts])
        assert slope == Fraction(-1171, 45)
        assert intercept == Fraction(18467, 360)
        got = linear_regression(pts)
        assert got == pytest.approx((float(slope), float(intercept), float(r2)), rel=1e-12)
        assert got[0] == pytest.approx(-26.0, abs=0.05)
        assert got[1] == pytest.approx(51.3, abs=0.05)
        assert got[2] == pytest.approx(0.93, abs=0.005)

    def test_duplicated_x(self):
        with pytest.raises(AnalysisError):
            linear_regression([(1.0, 2.0), (1.0, 3.0)])

    def test_too_few(self):
        with pytest.raises(AnalysisError):
            linear_regression([(1.0, 2.0)])

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-50, 50), b=st.floats(-50, 50), sigma=st.floats(0.01, 2.0),
           seed=st.integers(0, 2 ** 31))
    def test_noisy_line(self, a, b, sigma, seed):
        rng = np.random.default_rng(seed)
        x = np.linspace(0, 10, 200)
        y = a * x + b + rng.normal(0, sigma, x.size)
        s, i, r2 = linear_regression(list(zip(x, y)))
        se = sigma / math.sqrt(np.sum((x - x.mean()) ** 2))
        assert abs(s - a) < 6 * se
        assert 0.0 <= r2 <= 1.0
