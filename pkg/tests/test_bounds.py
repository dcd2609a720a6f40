import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgosafe.bounds import (
    EpsilonCaps,
    bound_main_general,
    bound_main_stable,
    bound_transient,
    check_caps,
    epsilon_caps,
    epsilon_for_xi,
    growth_factor,
    largest_c,
    t1_horizon,
    transient_time,
    xi_for_epsilon,
)
from hgosafe.errors import CapViolationError, EmptySetError, NotHurwitzError
from hgosafe.observer import build_observer
from hgosafe.plant import ConstraintSets, LinearizingController, NormalFormSystem, estimate_constants
from hgosafe.reach import Grid, LevelSetField

T1 = 24.74


def design(eps):
    return build_observer([4.0, 4.0], eps)


class TestTransientTime:
    def test_decreases_to_zero(self):
        ts = [transient_time(design(e), 10.0) for e in (1e-2, 1e-3, 1e-4)]
        assert ts[0] > ts[1] > ts[2] > 0

    def test_zero_initial_error(self):
        assert transient_time(design(0.01), 0.0) == 0.0

    def test_preset_reference(self, di_constants):
        t = transient_time(design(0.01), di_constants.k)
        assert 0.0608 / 5 <= t <= 0.0608 * 5


class TestTransientBound:
    def test_closed_form(self, exact_constants):
        val = bound_transient(0.01, exact_constants, design(0.01), 2)
        assert val == pytest.approx(3.16228 * 0.140377 * math.log(1e10) * 0.01, rel=1e-4)
        assert val == pytest.approx(0.1022, abs=5e-4)

    def test_zero_drift(self, exact_constants):
        c = dataclasses.replace(exact_constants, C1=0.0)
        assert bound_transient(0.01, c, design(0.01), 2) == 0.0

    def test_vanishes(self, exact_constants):
        vals = [bound_transient(e, exact_constants, design(e), 2) for e in (1e-2, 1e-3, 1e-4)]
        assert vals[0] > vals[1] > vals[2] > 0


class TestGeneralBound:
    @given(st.floats(1e-5, 0.5), st.floats(0, 3), st.floats(0, 3), st.floats(0, 2))
    def test_unit_growth_is_four_transients(self, eps, M1, M2, gamma):
        from hgosafe.plant import ConstantsReport

        c = ConstantsReport(M1=M1, M2=M2, gamma=gamma, L=M2, C1=3.0, k=10.0, x_max=25.0,
                            omega_boundary_min_sq=None, grid_density=0, safety_factor=1.0,
                            M1_raw=M1, gamma_raw=gamma, C1_raw=3.0, a_min=1.0)
        d = design(eps)
        T_eps = transient_time(d, c.k)
        general = bound_main_general(eps, T_eps, c, d, 2, T_eps)
        assert general == pytest.approx(4 * bound_transient(eps, c, d, 2), rel=1e-12, abs=1e-300)

    def test_drift_free_degenerate(self, exact_constants):
        c = dataclasses.replace(exact_constants, M1=0.0, M2=0.0)
        d = design(0.01)
        T_eps = transient_time(d, c.k)
        expected = 4 * bound_transient(0.01, c, d, 2) * math.exp(5.0 - T_eps)
        assert bound_main_general(0.01, 5.0, c, d, 2) == pytest.approx(expected, rel=1e-12)

    def test_dwarfs_stable_bound(self, di_constants, di_ctrl):
        d = design(0.01)
        general = bound_main_general(0.01, T1, di_constants, d, 2)
        stable = bound_main_stable(0.01, T1, di_constants, di_ctrl, d, 2)
        assert general / stable > 1e6

    @pytest.mark.parametrize("eps", [1e-2, 1e-3])
    def test_stable_refines_general(self, di_constants, di_ctrl, eps):
        d = design(eps)
        for T in (1.0, 5.0, T1):
            assert bound_main_stable(eps, T, di_constants, di_ctrl, d, 2) <= bound_main_general(eps, T, di_constants, d, 2)


class TestStableBound:
    def test_requires_hurwitz(self, di_constants):
        with pytest.raises(NotHurwitzError):
            bound_main_stable(0.01, 5.0, di_constants, LinearizingController(np.zeros(2)), design(0.01), 2)

    def test_drift_term(self, exact_constants, di_ctrl):
        d = design(0.01)
        T_eps = transient_time(d, exact_constants.k)
        no_lead = dataclasses.replace(exact_constants, C1=0.0)
        drift = bound_main_stable(0.01, T1, no_lead, di_ctrl, d, 2)
        assert drift == pytest.approx((T1 - T_eps) * 0.2 * math.sqrt(2) * 0.01, rel=1e-12)
        assert drift == pytest.approx(0.0698, abs=1e-3)

    def test_preset_value(self, di_constants, di_ctrl):
        assert 0.05 <= bound_main_stable(0.01, T1, di_constants, di_ctrl, design(0.01), 2) <= 0.5

    def test_literal_growth_dominates(self, di_ctrl):
        for s in (0.0, 1.0, 10.0, 24.0):
            assert growth_factor(di_ctrl, s, literal=True) >= growth_factor(di_ctrl, s) * (1 - 1e-12)


class TestXi:
    def test_ordering_and_ratio(self, di_constants, di_ctrl):
        a = xi_for_epsilon(0.01, T1, di_constants, di_ctrl, design(0.01), "stable").xi
        b = xi_for_epsilon(0.001, T1, di_constants, di_ctrl, design(0.001), "stable").xi
        assert b < a
        assert 0.08 <= b / a <= 0.25

    def test_strictly_decreasing(self, di_constants, di_ctrl):
        xs = [xi_for_epsilon(e, T1, di_constants, di_ctrl, design(e), "stable").xi for e in (1e-2, 1e-3, 1e-4, 1e-5)]
        assert all(x > y for x, y in zip(xs, xs[1:]))

    def test_report_is_flat(self, di_constants, di_ctrl):
        d = xi_for_epsilon(0.01, T1, di_constants, di_ctrl, design(0.01), "stable").to_dict()
        for key in ("epsilon", "T", "T_eps", "xi", "xi_transient", "xi_main", "eps_bar", "eps3", "eps4",
                    "eps_hat", "rho", "lambda_min_P", "const_M1", "const_C1", "const_k", "const_gamma"):
            assert key in d
        assert not any(isinstance(v, dict) for v in d.values())

    def test_short_horizon_is_transient_only(self, di_constants, di_ctrl):
        r = xi_for_epsilon(0.01, 0.01, di_constants, di_ctrl, design(0.01), "general")
        assert r.xi_main == 0.0 and r.xi == r.xi_transient

    def test_xi_max_of_terms(self, di_constants, di_ctrl):
        r = xi_for_epsilon(0.01, T1, di_constants, di_ctrl, design(0.01), "stable")
        assert r.xi == max(r.xi_main, r.xi_transient) >= 0


class TestEpsilonForXi:
    def test_generous_target(self, di_constants, di_ctrl):
        d = design(0.01)
        caps = epsilon_caps(di_constants, d)
        eps = epsilon_for_xi(1e9, T1, di_constants, di_ctrl, d, "stable")
        assert eps >= min(caps.eps_hat, 1.0) / 2

    def test_reference_pairing(self, di_constants, di_ctrl):
        eps = epsilon_for_xi(0.1768, T1, di_constants, di_ctrl, design(0.01), "stable")
        assert 0.01 / 3 <= eps <= 0.01 * 3

    @settings(max_examples=25)
    @given(st.floats(1e-3, 1.0))
    def test_round_trip(self, di_constants, di_ctrl, target):
        eps = epsilon_for_xi(target, T1, di_constants, di_ctrl, design(0.01), "stable")
        assert xi_for_epsilon(eps, T1, di_constants, di_ctrl, design(eps), "stable").xi <= target * (1 + 1e-12)


class TestCaps:
    def test_unbounded_without_drift_lipschitz(self, di_constants):
        assert epsilon_caps(di_constants, design(0.01)).eps_bar == math.inf

    def test_eps4_closed_form(self, exact_constants, di_Q):
        caps = epsilon_caps(exact_constants, design(0.01), di_Q, 16.0)
        lam = 0.5 * (18.5 + math.sqrt(18.5 ** 2 - 4 * 46.25))
        assert caps.eps4 == pytest.approx(math.sqrt(16 / (16 * lam ** 3 * 0.08)), rel=1e-9)
        assert caps.eps4 == pytest.approx(0.0578, abs=1e-3)
        assert caps.eps_hat <= min(caps.eps_bar, caps.eps3, caps.eps4)

    def test_cap_violation_names_binding_cap(self):
        sys_ = NormalFormSystem.from_expressions(2, "1", "3*sin(x1)", 1.0)
        sets = ConstraintSets(np.array([[-4, 4], [-3, 3.0]]), 1.0)
        ctrl = LinearizingController.from_beta(0.2, 2)
        c = estimate_constants(sys_, ctrl, sets)
        d = design(0.5)
        caps = epsilon_caps(c, d)
        assert math.isfinite(caps.eps_bar) and caps.binding() == "eps_bar"
        with pytest.raises(CapViolationError) as info:
            xi_for_epsilon(0.5, 1.0, c, ctrl, d)
        assert info.value.binding == "eps_bar"

    def test_check_caps(self):
        check_caps(0.01, EpsilonCaps(1.0, 1.0, 1.0, 1.0))
        with pytest.raises(CapViolationError):
            check_caps(0.01, EpsilonCaps(1.0, 0.005, 1.0, 0.005))


class TestT1:
    def test_reference(self, di_Q):
        assert t1_horizon(di_Q, 16.0, 25.0) == pytest.approx(24.74, abs=0.05)

    def test_already_inside(self, di_Q):
        assert t1_horizon(di_Q, 16.0, 0.5) == 0.0

    def test_larger_c_is_faster(self, di_Q):
        assert t1_horizon(di_Q, 32.0, 25.0) < t1_horizon(di_Q, 16.0, 25.0)


class TestLargestC:
    def test_whole_grid(self, di_Q):
        g = Grid((-1, -1), (1, 1), (11, 11))
        fld = LevelSetField(g, -np.ones(g.counts))
        V = np.einsum("...i,ij,...j->...", g.points(), di_Q, g.points())
        assert largest_c(di_Q, fld) == pytest.approx(V.max())

    def test_empty(self, di_Q):
        g = Grid((-1, -1), (1, 1), (11, 11))
        with pytest.raises(EmptySetError):
            largest_c(di_Q, LevelSetField(g, np.ones(g.counts)))

    def test_preset(self, di_Q, di_delta):
        c = largest_c(di_Q, di_delta)
        assert c >= 12.0
        # sublevel sets are invariant, so the binding constraint is the face x1 = 4:
        # c* = 16 / (Q^-1)_11; the grid can only overshoot by the distance to the next node row
        c_star = 16.0 / np.linalg.inv(di_Q)[0, 0]
        assert c_star * 0.97 <= c <= c_star * 1.1
