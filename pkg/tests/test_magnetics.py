import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wptlink.magnetics import (MU0, CoilSpec, CouplingModel, MagneticsError, coil_mutual,
                               coupling_coefficient, default_rx_coil, default_tx_coil,
                               ellip_ke, make_coil, mutual_inductance_loops,
                               resonance_capacitance, resonant_frequency)

from scipy.special import ellipe, ellipk


def neumann_mutual(a, b, d, n=20000):
    """Neumann double line integral reduced to one angle (independent oracle).

    The integrand is smooth and periodic, so the plain trapezoid rule
    converges spectrally.
    """
    psi = 2 * np.pi * np.arange(n) / n
    f = np.cos(psi) / np.sqrt(a * a + b * b + d * d - 2 * a * b * np.cos(psi))
    return MU0 * a * b / 2.0 * float(np.sum(f)) * (2 * np.pi / n)


# golden from the Neumann oracle above
M_GOLDEN = 1.34953927e-8


class TestEllipticIntegrals:
    @pytest.mark.parametrize("m", [0.0, 0.1, 0.5, 0.9, 0.999])
    def test_against_scipy(self, m):
        K, E = ellip_ke(m)
        assert K == pytest.approx(ellipk(m), rel=1e-12)
        assert E == pytest.approx(ellipe(m), rel=1e-12)

    def test_domain(self):
        with pytest.raises(MagneticsError):
            ellip_ke(1.0)
        with pytest.raises(MagneticsError):
            ellip_ke(-0.1)


class TestResonance:
    def test_rx_tank(self):
        C = resonance_capacitance(47e-6, 127e3)
        assert C == pytest.approx(1 / ((2 * math.pi * 127e3) ** 2 * 47e-6), rel=1e-15)
        assert C == pytest.approx(33.42e-9, rel=1e-3)
        assert resonant_frequency(47e-6, 33.42e-9) == pytest.approx(127e3, rel=1e-3)

    def test_tx_tank(self):
        C = resonance_capacitance(24e-6, 127e3)
        assert C == pytest.approx(65.44e-9, rel=1e-3)
        assert resonant_frequency(24e-6, 65.44e-9) == pytest.approx(127e3, rel=1e-3)

    def test_lc_product_invariance(self):
        assert resonant_frequency(4 * 47e-6, 33.42e-9 / 4) == pytest.approx(
            resonant_frequency(47e-6, 33.42e-9), rel=1e-14)

    @pytest.mark.parametrize("L,C", [(0, 1e-9), (1e-6, 0), (-1e-6, 1e-9), (1e-6, -1)])
    def test_rejects_non_positive(self, L, C):
        with pytest.raises(MagneticsError):
            resonant_frequency(L, C)
        with pytest.raises(MagneticsError):
            resonance_capacitance(L, 1e5 if C > 0 else C)

    @settings(max_examples=200, deadline=None)
    @given(L=st.floats(1e-6, 1e-3), f=st.floats(50e3, 500e3))
    def test_round_trip(self, L, f):
        assert resonant_frequency(L, resonance_capacitance(L, f)) == pytest.approx(f, rel=1e-9)


class TestLoopMutual:
    def test_golden_matches_oracle(self):
        oracle = neumann_mutual(25e-3, 13.15e-3, 6e-3)
        assert oracle == pytest.approx(M_GOLDEN, rel=1e-8)
        assert mutual_inductance_loops(25e-3, 13.15e-3, 6e-3) == pytest.approx(oracle, rel=1e-9)

    def test_reference_value_band(self):
        assert mutual_inductance_loops(25e-3, 13.15e-3, 6e-3) == pytest.approx(13.6e-9, rel=0.02)

    def test_far_field(self):
        assert mutual_inductance_loops(25e-3, 13.15e-3, 1.0) < 1e-12

    def test_symmetry(self):
        assert mutual_inductance_loops(25e-3, 13.15e-3, 4e-3) == pytest.approx(
            mutual_inductance_loops(13.15e-3, 25e-3, 4e-3), rel=1e-14)

    def test_singular(self):
        with pytest.raises(MagneticsError):
            mutual_inductance_loops(10e-3, 10e-3, 0.0)

    def test_coplanar_distinct_radii_ok(self):
        assert mutual_inductance_loops(10e-3, 20e-3, 0.0) > 0

    def test_vectorised(self):
        d = np.array([1e-3, 5e-3, 2e-2])
        out = mutual_inductance_loops(25e-3, 13.15e-3, d)
        assert out.shape == (3,)
        assert out[1] == pytest.approx(mutual_inductance_loops(25e-3, 13.15e-3, 5e-3))

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(1e-3, 0.1), b=st.floats(1e-3, 0.1), frac=st.floats(0.1, 5.0))
    def test_neumann_agreement(self, a, b, frac):
        d = frac * max(a, b)
        assert mutual_inductance_loops(a, b, d) == pytest.approx(neumann_mutual(a, b, d),
                                                                 rel=5e-3)


class TestCoils:
    def test_coil_validation(self):
        with pytest.raises(MagneticsError, match="inductance"):
            CoilSpec(0.0, 0.1, 0.01, ((0.01, 0.0),))
        with pytest.raises(MagneticsError, match="filaments"):
            CoilSpec(1e-6, 0.1, 0.01, ())
        with pytest.raises(MagneticsError, match="filaments"):
            CoilSpec(1e-6, 0.1, 0.01, ((0.02, 0.0),))
        with pytest.raises(MagneticsError, match="esr"):
            CoilSpec(1e-6, -0.1, 0.01, ((0.01, 0.0),))

    def test_default_filaments(self):
        tx = default_tx_coil()
        assert len(tx.filaments) == 10
        assert tx.radii.min() == pytest.approx(0.4 * 25e-3)
        assert tx.radii.max() == pytest.approx(25e-3)

    def test_single_filament_reduces_to_loop(self):
        a = CoilSpec(1e-6, 0.0, 0.02, ((0.02, 0.0),))
        b = CoilSpec(1e-6, 0.0, 0.01, ((0.01, 0.0),))
        assert coil_mutual(a, b, 7e-3) == pytest.approx(mutual_inductance_loops(0.02, 0.01, 7e-3))

    def test_k_scale_multiplies(self):
        tx, rx = default_tx_coil(), default_rx_coil()
        m1 = coil_mutual(tx, rx, 1e-2)
        assert coil_mutual(tx, rx, 1e-2, CouplingModel(k_scale=1.7)) == pytest.approx(1.7 * m1)

    def test_turns_scale_reproduces_inductance(self):
        from wptlink.magnetics import filament_self_sum
        c = make_coil(47e-6, 0.3, 13.15e-3)
        wire = min(4e-4, 0.45 * (c.radii[1] - c.radii[0]))
        assert c.turns_scale ** 2 * filament_self_sum(c.radii, None, wire) == pytest.approx(47e-6)

    def test_strictly_decreasing_in_distance(self):
        tx, rx = default_tx_coil(), default_rx_coil()
        d = np.linspace(1e-3, 50e-3, 60)
        m = np.array([coil_mutual(tx, rx, x) for x in d])
        assert np.all(np.diff(m) < 0)

    def test_nonpositive_distance(self):
        with pytest.raises(MagneticsError):
            coil_mutual(default_tx_coil(), default_rx_coil(), 0.0)


class TestTabulated:
    def test_hand_value(self):
        model = CouplingModel("tabulated", ((2e-3, 0.3), (6e-3, 0.20), (1e-2, 0.1)))
        M = coil_mutual(default_tx_coil(), default_rx_coil(), 6e-3, model)
        assert M == pytest.approx(0.20 * math.sqrt(24e-6 * 47e-6), rel=1e-12)
        assert M == pytest.approx(6.72e-6, rel=2e-3)

    def test_linear_interpolation(self):
        model = CouplingModel("tabulated", ((1e-2, 0.2), (2e-2, 0.1)))
        assert model.k_at(1.5e-2) == pytest.approx(0.15)

    def test_zero_table(self):
        model = CouplingModel("tabulated", ((1e-3, 0.0), (1e-1, 0.0)))
        assert coil_mutual(default_tx_coil(), default_rx_coil(), 1e-2, model) == 0.0

    def test_no_extrapolation(self):
        model = CouplingModel("tabulated", ((5e-3, 0.3), (2e-2, 0.1)))
        with pytest.raises(MagneticsError, match="outside"):
            coil_mutual(default_tx_coil(), default_rx_coil(), 2.5e-2, model)

    @pytest.mark.parametrize("table", [((1e-2, 0.1), (1e-2, 0.2)), ((1e-2, 1.0),),
                                       ((1e-2, -0.1),), None])
    def test_invalid_tables(self, table):
        with pytest.raises(MagneticsError):
            CouplingModel("tabulated", table)


class TestCouplingCoefficient:
    def test_zero(self):
        assert coupling_coefficient(0.0, 24e-6, 47e-6) == 0.0

    def test_inverse_of_tabulated_example(self):
        assert coupling_coefficient(6.72e-6, 24e-6, 47e-6) == pytest.approx(0.20, rel=2e-3)

    def test_unity_rejected(self):
        with pytest.raises(MagneticsError):
            coupling_coefficient(math.sqrt(24e-6 * 47e-6), 24e-6, 47e-6)

    @settings(max_examples=100, deadline=None)
    @given(frac=st.floats(0.0, 0.999), L1=st.floats(1e-7, 1e-3), L2=st.floats(1e-7, 1e-3))
    def test_range(self, frac, L1, L2):
        k = coupling_coefficient(frac * math.sqrt(L1 * L2), L1, L2)
        assert 0.0 <= k < 1.0
