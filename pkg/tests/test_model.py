import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpbr.model import (ConverterParams, DomainError, EquilibriumPoint, Polarity, UncertaintyBox,
                        build_mode, current_vertices, dc_equilibrium_current,
                        enumerate_delta_vertices, error_dynamics, half_cycle_model, load_range)


def test_table_defaults(params):
    assert (params.L_B, params.R_B, params.C_o, params.V_o) == (2.4e-3, 0.42, 270e-6, 380.0)
    assert (params.P_o_min, params.P_o_max) == (25.0, 300.0)
    assert (params.V_rms_min, params.V_rms_nom, params.V_rms_max) == (85.0, 120.0, 250.0)
    assert params.f_s == 64.8e3


@pytest.mark.parametrize("kwargs", [
    {"L_B": 0.0}, {"C_o": -1e-6}, {"V_o": float("nan")}, {"P_o_min": 300.0},
    {"V_rms_nom": 300.0}, {"V_o": 350.0}, {"R_B": -0.1},
])
def test_params_invariants(kwargs):
    with pytest.raises(DomainError):
        ConverterParams(**kwargs)


def test_mode1_matrices(params):
    mode = build_mode(1, params, 170.0, 481.33)
    assert mode.A[0, 0] == pytest.approx(-175.0, rel=1e-12)
    assert mode.A[1, 1] == pytest.approx(-1 / (481.33 * 270e-6), rel=1e-12)
    assert mode.A[1, 1] == pytest.approx(-7.695, abs=5e-4)
    assert mode.A[0, 1] == 0 and mode.A[1, 0] == 0
    np.testing.assert_allclose(mode.b, [70833.333333, 0.0], rtol=1e-9)


def test_mode2_and_mode4_coupling(params):
    m2 = build_mode(2, params, 100.0, 1000.0)
    assert m2.A[0, 1] == pytest.approx(-416.6667, rel=1e-6)
    assert m2.A[1, 0] == pytest.approx(3703.7037, rel=1e-6)
    m4 = build_mode(4, params, 0.0, 1000.0)
    np.testing.assert_array_equal(m4.b, [0.0, 0.0])
    assert m4.A[0, 1] == -m2.A[0, 1] and m4.A[1, 0] == -m2.A[1, 0]


@pytest.mark.parametrize("index,R_L", [(0, 100.0), (5, 100.0), (1, 0.0), (2, -5.0)])
def test_build_mode_errors(params, index, R_L):
    with pytest.raises(DomainError):
        build_mode(index, params, 10.0, R_L)


def test_half_cycle_model(params):
    pos = half_cycle_model(Polarity.POSITIVE, params, 170.0, 481.33)
    neg = half_cycle_model("negative", params, -170.0, 481.33)
    assert [m.index for m in pos.modes] == [1, 2]
    assert [m.index for m in neg.modes] == [3, 4]
    with pytest.raises(DomainError):
        half_cycle_model(Polarity.POSITIVE, params, -1.0, 481.33)


def test_error_dynamics_mode2(params):
    mode = build_mode(2, params, 170.0, 481.33)
    A, k = error_dynamics(mode, EquilibriumPoint(1.771, 380.0))
    # independent oracle: explicit scalar arithmetic
    k0 = 170 / 0.0024 - (0.42 / 0.0024) * 1.771 - (1 / 0.0024) * 380
    k1 = (1 / 270e-6) * 1.771 - 380 / (481.33 * 270e-6)
    np.testing.assert_allclose(k, [k0, k1], rtol=1e-12)
    assert k0 == pytest.approx(-87809.9, abs=0.1)
    np.testing.assert_allclose(error_dynamics(mode, (0.0, 0.0))[1], mode.b)


def test_mode1_offset_independent_of_voltage(params):
    mode = build_mode(1, params, 50.0, 900.0)
    k_a = error_dynamics(mode, (2.0, 100.0))[1]
    k_b = error_dynamics(mode, (2.0, 500.0))[1]
    assert k_a[0] == k_b[0]


def test_current_vertices(params):
    assert current_vertices(params, Polarity.POSITIVE) == pytest.approx((0.0, 4.991341), abs=1e-6)
    assert current_vertices(params, Polarity.NEGATIVE) == pytest.approx((0.0, -4.991341), abs=1e-6)


def test_load_range(params):
    lo, hi = load_range(params)
    assert lo == pytest.approx(481.3333, abs=1e-4)
    assert hi == pytest.approx(5776.0, rel=1e-12)
    unit = ConverterParams(V_o=400.0, P_o_min=1.0, P_o_max=400.0 ** 2, V_rms_max=250.0)
    assert load_range(unit)[0] == pytest.approx(1.0)


def test_delta_vertices_counts(params):
    box = UncertaintyBox.for_polarity(params, Polarity.POSITIVE)
    verts = enumerate_delta_vertices(box)
    assert len(verts) == 8
    assert any(v[0] == pytest.approx(481.333, abs=1e-3) and v[1] == pytest.approx(4.9913, abs=1e-4)
               and v[2] == pytest.approx(353.55, abs=1e-2) for v in verts)
    flat = UncertaintyBox(box.R_L_range, box.i_eq_range, (170.0, 170.0))
    assert len(enumerate_delta_vertices(flat)) == 4


def test_negative_box_is_mirrored(params):
    pos = UncertaintyBox.for_polarity(params, Polarity.POSITIVE)
    neg = UncertaintyBox.for_polarity(params, Polarity.NEGATIVE)
    assert neg.i_eq_range == (-pos.i_eq_range[1], 0.0)
    assert neg.v_in_range == (-pos.v_in_range[1], 0.0)


def test_box_rejects_inverted_range():
    with pytest.raises(DomainError):
        UncertaintyBox((10.0, 1.0), (0.0, 1.0), (0.0, 1.0))
    with pytest.raises(DomainError):
        UncertaintyBox((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))


def test_dc_equilibrium_current(params):
    # oracle: roots of R_B i^2 - v i + P = 0 with P = V_o^2 / R_L
    roots = np.roots([0.42, -170.0, 380.0 ** 2 / 481.33])
    expected = float(np.min(roots.real))
    assert dc_equilibrium_current(params, 170.0, 481.33) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.7725, abs=1e-4)



@given(L=st.floats(1e-5, 1e-1), C=st.floats(1e-6, 1e-2), R_B=st.floats(1e-3, 10.0),
       R_L=st.floats(1.0, 1e5), v_in=st.floats(-400, 400), index=st.sampled_from([1, 2, 3, 4]))
def test_modes_are_hurwitz(L, C, R_B, R_L, v_in, index):
    p = ConverterParams(L_B=L, C_o=C, R_B=R_B)
    mode = build_mode(index, p, v_in, R_L)
    assert np.all(np.linalg.eigvals(mode.A).real < 0)
    assert mode.b[1] == 0
    if index in (1, 3):
        assert mode.A[1, 0] == 0 and mode.A[0, 1] == 0
    else:
        assert mode.A[0, 1] * mode.A[1, 0] <= 0


@given(R_L=st.floats(1.0, 1e5), v_in=st.floats(-400, 400))
def test_mode_symmetries(params, R_L, v_in):
    modes = [build_mode(i, params, v_in, R_L) for i in (1, 2, 3, 4)]
    np.testing.assert_array_equal(modes[0].A, modes[2].A)
    flipped = modes[1].A.copy()
    flipped[0, 1] *= -1
    flipped[1, 0] *= -1
    np.testing.assert_array_equal(modes[3].A, flipped)
    for m in modes[1:]:
        np.testing.assert_array_equal(m.b, modes[0].b)


@given(x1=st.tuples(st.floats(-10, 10), st.floats(-500, 500)),
       x2=st.tuples(st.floats(-10, 10), st.floats(-500, 500)),
       index=st.sampled_from([1, 2, 3, 4]))
def test_error_dynamics_linear_in_equilibrium(params, x1, x2, index):
    mode = build_mode(index, params, 120.0, 800.0)
    k0 = error_dynamics(mode, (0.0, 0.0))[1]
    k1 = error_dynamics(mode, x1)[1] - k0
    k2 = error_dynamics(mode, x2)[1] - k0
    k12 = error_dynamics(mode, np.add(x1, x2))[1] - k0
    np.testing.assert_allclose(k12, k1 + k2, rtol=1e-9, atol=1e-6)


@given(bounds=st.lists(st.tuples(st.floats(1, 100), st.floats(0, 100)), min_size=3, max_size=3),
       degenerate=st.lists(st.booleans(), min_size=3, max_size=3))
def test_vertex_count_is_power_of_two(bounds, degenerate):
    ranges = [(lo, lo) if d else (lo, lo + w + 1e-3) for (lo, w), d in zip(bounds, degenerate)]
    box = UncertaintyBox(*ranges)
    assert len(enumerate_delta_vertices(box)) == 2 ** (3 - sum(degenerate))


def test_equilibrium_requires_positive_voltage():
    with pytest.raises(DomainError):
        EquilibriumPoint(1.0, 0.0)
    assert math.isclose(EquilibriumPoint(1.0, 2.0).as_array()[1], 2.0)
