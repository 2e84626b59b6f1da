import json

import pytest

from wptlink.cli import EXIT_CONFIG, EXIT_OK, EXIT_REQUIREMENT, _parse_assignments, main
from wptlink.config import ConfigError, bundled_scenario_text, load_scenario


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestResonance:
    @pytest.mark.parametrize("L,nf", [("47uH", 33.42), ("24 uH", 65.44)])
    def test_capacitance(self, capsys, L, nf):
        code, out, _ = run(capsys, "resonance", "-L", L)
        assert code == EXIT_OK
        shown = float(out.splitlines()[-1].split("=")[1].split()[0])
        assert shown == pytest.approx(nf, rel=1e-3)

    def test_json(self, capsys):
        code, out, _ = run(capsys, "resonance", "-L", "47uH", "--format", "json")
        assert json.loads(out)["capacitance_f"] == pytest.approx(33.42e-9, rel=1e-3)

    def test_bad_unit(self, capsys):
        code, _, err = run(capsys, "resonance", "-L", "47 uF")
        assert code == EXIT_CONFIG and "configuration error" in err


class TestExitCodes:
    def test_regress(self, capsys, tmp_path):
        code, out, _ = run(capsys, "regress", "--out", str(tmp_path))
        assert code == EXIT_OK
        assert out.splitlines()[0] == "slope_pct_per_cm,intercept_pct,r2"
        assert (tmp_path / "regression.json").exists()

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "sweep", "--config", str(tmp_path / "nope.cfg"))
        assert code == EXIT_CONFIG

    def test_invalid_config(self, capsys, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text(bundled_scenario_text().replace("l1 = 24 uH", "l1 = -24 uH"))
        code, _, err = run(capsys, "sweep", "--config", str(p))
        assert code == EXIT_CONFIG and "l1" in err

    def test_requirement_failure(self, capsys):
        # uncalibrated parasitics draw more than the power limit
        code, out, _ = run(capsys, "simulate", "--distance", "1 cm", "--duration", "2 ms")
        assert code == EXIT_REQUIREMENT
        assert "OVERPOWER" in out

    def test_out_of_range(self, capsys):
        code, _, err = run(capsys, "simulate", "--config", "calibrated", "--distance", "2.5 cm")
        assert code == EXIT_REQUIREMENT and "no coupling" in err


class TestBundled:
    def test_calibrated_loads(self):
        s = load_scenario(bundled_scenario_text("calibrated"))
        assert s.coupling.mode == "tabulated"
        assert s.circuit.tx.esr == pytest.approx(1.8958, rel=1e-4)

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="bundled"):
            bundled_scenario_text("tuned")

    def test_simulate_writes_outputs(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", "--config", "calibrated", "--distance", "1 cm",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        header = (tmp_path / "trace.csv").read_text().splitlines()[0]
        assert header.startswith("t")
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["result"]["passed"] is True

    def test_sweep_csv(self, capsys, tmp_path):
        code, out, _ = run(capsys, "sweep", "--config", "calibrated", "--workers", "2",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "distance_cm,i_tx_a,p_tx_w,i_rx_ma,v_rx_v,p_rx_w,efficiency_pct"
        assert len(lines) == 9
        assert "largest passing distance: 2.00 cm" in out


class TestAssignments:
    def test_parse(self):
        assert _parse_assignments("tx.esr=2.1, k_scale=1.6") == {"tx.esr": 2.1, "k_scale": 1.6}

    @pytest.mark.parametrize("text", ["tx.esr", "tx.esr=abc"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            _parse_assignments(text)

    def test_calibrate_zero_budget(self, capsys, tmp_path):
        code, out, _ = run(capsys, "calibrate", "--config", "calibrated", "--free", "",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        frag = (tmp_path / "calibration.cfg").read_text()
        assert "tx_esr = " in frag and "mode = tabulated" in frag
