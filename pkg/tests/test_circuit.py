import csv
import math

import numpy as np
import pytest

from wptlink import _kernels as K
from wptlink.analysis import cycle_metrics, energy_balance, rising_crossings
from wptlink.circuit import (TRACE_COLUMNS, CircuitError, ConstantCurrent, DCMotor,
                             LCLFilter, NumericalInstability, Resistor, SimState,
                             default_circuit, default_dt, initial_state, run_transient, step,
                             stored_energy, validate_circuit)
from wptlink.controller import ControllerConfig, FaultCode, Mode, fixed_drive
from wptlink.magnetics import coil_mutual, default_rx_coil, default_tx_coil

DT = 1.0 / (135e3 * 200)
M_1CM = coil_mutual(default_tx_coil(), default_rx_coil(), 1e-2)
# bench-like parasitics: the bare default ESRs would trip the power limit
TX, RX = default_tx_coil(2.0), default_rx_coil(0.8)


def link(m=M_1CM, **kw):
    return default_circuit(m=m, tx=TX, rx=RX, **kw)


@pytest.fixture(scope="module")
def coupled_trace():
    cfg = link(load=Resistor(120.0))
    return run_transient(cfg, ControllerConfig(), 3e-3, DT)


class TestValidation:
    def test_defaults_accepted(self):
        cfg = default_circuit()
        assert validate_circuit(cfg) is cfg
        assert cfg.v_supply == 5.0
        assert cfg.c1 == pytest.approx(65.44e-9, rel=1e-3)
        assert cfg.c2 == pytest.approx(33.42e-9, rel=1e-3)

    def test_unit_coupling_rejected(self):
        with pytest.raises(CircuitError) as exc:
            validate_circuit(default_circuit(m=math.sqrt(24e-6 * 47e-6)))
        assert any(f.startswith("m ") for f in exc.value.fields)

    def test_zero_capacitor_rejected(self):
        with pytest.raises(CircuitError) as exc:
            validate_circuit(default_circuit().with_(c1=0.0))
        assert any(f.startswith("c1") for f in exc.value.fields)

    def test_lists_every_violation(self):
        bad = default_circuit().with_(c1=0.0, c2=-1.0, v_supply=0.0)
        with pytest.raises(CircuitError) as exc:
            validate_circuit(bad)
        names = {f.split()[0] for f in exc.value.fields}
        assert {"c1", "c2", "v_supply"} <= names

    def test_bad_loads(self):
        for load in (Resistor(0.0), DCMotor(armature_r=-1.0), ConstantCurrent(0.0)):
            with pytest.raises(CircuitError, match="load"):
                validate_circuit(default_circuit(load=load))
        with pytest.raises(CircuitError, match="lcl"):
            validate_circuit(default_circuit().with_(lcl=LCLFilter(0.0, 1e-6, 1e-6)))


class TestStep:
    def test_decoupled_rx_stays_zero(self):
        cfg = default_circuit(m=0.0)
        s = SimState()
        for n in range(2000):
            s = step(cfg, s, 1 if (n // 100) % 2 == 0 else -1, DT)
            for name in ("i2", "v_c2", "v_rect", "i_lin", "v_cmid", "i_lout"):
                assert getattr(s, name) == 0.0
        assert abs(s.i1) > 0

    def test_zero_drive_zero_state(self):
        cfg = default_circuit(m=M_1CM)
        s = SimState()
        for _ in range(500):
            s = step(cfg, s, 0, DT)
        assert np.all(s.as_array() == 0.0)

    def test_step_size_precondition(self):
        cfg = default_circuit()
        period = 1 / 127e3
        step(cfg, SimState(), 1, period / 200, period=period)
        with pytest.raises(ValueError, match="period/200"):
            step(cfg, SimState(), 1, period / 150, period=period)
        with pytest.raises(ValueError):
            step(cfg, SimState(), 1, 0.0)
        with pytest.raises(ValueError):
            step(cfg, SimState(), 2, DT)

    def test_non_finite_state_raises(self):
        with pytest.raises(NumericalInstability) as exc:
            step(default_circuit(), SimState(i1=math.inf, t=1e-3), 1, DT)
        assert exc.value.t == pytest.approx(1e-3 + DT)

    def test_step_matches_run_loop(self):
        # one-step API and the compiled loop share the integrator
        cfg = default_circuit(m=M_1CM)
        ctrl = fixed_drive(127e3, duty=1.0)
        tr = run_transient(cfg, ctrl, 40 * DT, DT)
        s = SimState()
        for n in range(40):
            s = step(cfg, s, int(tr.drive[n]), DT)
        np.testing.assert_allclose(s.as_array(), tr.x[40], rtol=1e-12, atol=1e-15)


class TestRunTransient:
    def test_uncoupled_stays_in_search(self):
        from wptlink.harness import idle_amplitude
        cfg = link(m=0.0)
        base = ControllerConfig(detect_threshold=0.02)
        ctrl = ControllerConfig(detect_threshold=0.02,
                                idle_amplitude=idle_amplitude(cfg, base, DT))
        tr = run_transient(cfg, ctrl, 1e-3, DT)
        assert tr.controller.mode == Mode.SEARCH
        assert np.all(tr.x[:, K.X_ELOAD] == 0.0)

    def test_deterministic(self):
        cfg = link(load=Resistor(120.0))
        a = run_transient(cfg, ControllerConfig(), 5e-4, DT)
        b = run_transient(cfg, ControllerConfig(), 5e-4, DT)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.drive, b.drive)

    def test_sampling_grid(self, coupled_trace):
        t = coupled_trace.t
        assert np.all(np.diff(t) > 0)
        np.testing.assert_allclose(np.diff(t), DT, rtol=1e-9)

    def test_decimated_output(self):
        cfg = link()
        tr = run_transient(cfg, ControllerConfig(), 2e-4, DT, dt_out=4 * DT)
        np.testing.assert_allclose(np.diff(tr.t), 4 * DT, rtol=1e-9)
        with pytest.raises(ValueError, match="divide"):
            run_transient(cfg, ControllerConfig(), 2e-4, DT, dt_out=2.5 * DT)

    def test_dt_precondition(self):
        with pytest.raises(ValueError, match="200 steps"):
            run_transient(default_circuit(), ControllerConfig(), 1e-4, 1 / (127e3 * 100))

    def test_locks_and_delivers_power(self, coupled_trace):
        assert coupled_trace.controller.mode == Mode.LOCK
        zc = rising_crossings(coupled_trace.t, coupled_trace.i1)
        rep = cycle_metrics(coupled_trace, 50, t_start=zc[-51])
        assert 0 < rep.efficiency < 1
        assert rep.p_load > 0.1

    def test_finite_everywhere(self, coupled_trace):
        assert np.all(np.isfinite(coupled_trace.x))

    def test_magnetic_energy_positive(self, coupled_trace):
        cfg = coupled_trace.circuit
        i1, i2 = coupled_trace.i1, coupled_trace.i2
        wm = 0.5 * (cfg.tx.inductance * i1 ** 2 + 2 * cfg.m * i1 * i2
                    + cfg.rx.inductance * i2 ** 2)
        assert np.all(wm >= 0)
        assert np.all(coupled_trace.stored_energy() >= 0)

    def test_energy_balance(self, coupled_trace):
        zc = rising_crossings(coupled_trace.t, coupled_trace.i1)
        for a, b in [(zc[-51], zc[-1]), (zc[10], zc[40]), (zc[-30], zc[-2])]:
            eb = energy_balance(coupled_trace, a, b)
            assert eb["relative"] < 5e-3
            assert abs(eb["t_start"] - a) <= DT and abs(eb["t_end"] - b) <= DT

    def test_step_halving_convergence(self):
        cfg = link(load=Resistor(120.0))
        out = []
        base = default_dt(135e3)
        for dt in (base, base / 2):
            tr = run_transient(cfg, ControllerConfig(), 4e-3, dt)
            zc = rising_crossings(tr.t, tr.i1)
            out.append(cycle_metrics(tr, 50, t_start=zc[-51]).p_load)
        assert abs(out[1] / out[0] - 1) < 1e-3

    def test_overpower_fault_latches(self):
        cfg = link(load=Resistor(120.0))
        tr = run_transient(cfg, ControllerConfig(p_max=0.5), 2e-3, DT)
        assert tr.status == "fault"
        assert tr.fault == FaultCode.OVERPOWER
        assert tr.t[-1] < 2e-3
        assert tr.telemetry()["fault"] == "OVERPOWER"

    @pytest.mark.parametrize("load", [DCMotor(), ConstantCurrent(20e-3)])
    def test_other_loads_run(self, load):
        cfg = link(load=load)
        tr = run_transient(cfg, ControllerConfig(), 1e-3, DT)
        assert np.all(np.isfinite(tr.x))
        assert initial_state(cfg).is_finite()

    def test_linear_mode_has_no_rectifier_state(self):
        cfg = link(load=Resistor(20.0), rectifier=False)
        tr = run_transient(cfg, ControllerConfig(), 5e-4, DT)
        assert np.all(tr.x[:, K.X_VRECT] == 0.0)
        np.testing.assert_allclose(tr.v_load, 20.0 * tr.i2)

    def test_csv_export(self, coupled_trace, tmp_path):
        path = coupled_trace.to_csv(tmp_path / "trace.csv")
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == len(coupled_trace.t) + 1
        assert float(rows[5][0]) == pytest.approx(coupled_trace.t[4], rel=1e-8)

    def test_stored_energy_helper(self):
        cfg = link()
        s = SimState(i1=1.0, i2=-0.5, v_c1=2.0)
        expect = (0.5 * (24e-6 + 2 * M_1CM * -0.5 + 47e-6 * 0.25)
                  + 0.5 * cfg.c1 * 4.0)
        assert stored_energy(cfg, s) == pytest.approx(expect, rel=1e-12)
