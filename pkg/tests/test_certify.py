import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cone_certify import certify
from cone_certify.errors import DegenerateVarianceError, DomainError, InconsistencyError

# frozen from an independent evaluation with mpmath at 30 digits
DELTA0_GOLDEN = 4.647479231789014
C_ALPHA_MAX_GOLDEN = 0.2054839235088156
NONMARKOV_DELTA0_GOLDEN = 3.506429099981772


def test_delta0_golden():
    _, D0 = certify.delta0_threshold(0.0)
    assert D0 == pytest.approx(DELTA0_GOLDEN, rel=1e-13)
    assert 4.60 <= D0 <= 4.65


def test_c_alpha_at_cap_and_half():
    assert certify.c_alpha(4 / 25) == pytest.approx(C_ALPHA_MAX_GOLDEN, rel=1e-13)
    assert certify.c_alpha(4 / 25) <= 2 / 9
    assert certify.c_alpha(0.5) == pytest.approx(2 / math.pi * math.log(3), rel=1e-15)


def test_c_alpha_domain():
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            certify.c_alpha(a)


def test_golden_table():
    g = certify.golden_constants()
    assert g["fourier_factor"] <= 10.0
    assert g["fourier_factor_nm"] <= 8.0
    assert g["Delta0_nm_computed"] == pytest.approx(NONMARKOV_DELTA0_GOLDEN, rel=1e-12)
    assert g["Delta0_nm_computed"] <= g["Delta0_nm"] == 3.51
    assert g["headline_chain"] <= g["headline_coeff"] == 11460
    assert g["nonmarkov_chain"] <= g["nonmarkov_coeff"] == 9168
    assert g["threshold"] < 1


def test_constant_B_values():
    assert certify.constant_B(2.0, 0.0) == 1.0
    assert certify.constant_B(2.0, 1.0) == 3.0


@settings(max_examples=200, deadline=None)
@given(st.floats(1.01, 20.0), st.floats(0.0, 20.0))
def test_B_identity(gamma, G):
    B = certify.constant_B(gamma, G)
    assert B * (gamma - 1) - gamma * G == pytest.approx(1.0, rel=1e-9, abs=1e-9)


def test_doubling_diameter():
    assert certify.constant_DR(2.0, 0.0) == pytest.approx(1 + 2 * math.log(3), rel=1e-15)


def test_diameter_forms_agree_on_grid():
    worst = 0.0
    for gamma in np.linspace(1.05, 10.0, 20):
        for G in np.linspace(0.0, 10.0, 20):
            a = certify.dr_closed_form(gamma, G)
            b = certify.dr_composed_form(gamma, G)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    assert worst <= 1e-12


def test_expanding_required():
    with pytest.raises(DomainError):
        certify.constant_B(1.0, 0.0)
    with pytest.raises(DomainError):
        certify.constant_DR(2.0, -1.0)


def test_aperture_at_B_one():
    ap = certify.aperture_constants(1.0)
    assert ap.K == pytest.approx(2 * math.sqrt(2) * math.e, rel=1e-15)
    assert ap.C1 == pytest.approx(math.e)
    r = ap.r_star
    assert ap.C1 ** 2 * r * r + 2 * ap.C1 ** 2 * r - 1.0 == pytest.approx(0.0, abs=1e-14)


def test_aperture_root_without_cancellation():
    ap = certify.aperture_constants(16.0 + 1 / 3)
    r = ap.r_star
    B = 16.0 + 1 / 3
    assert r > 0
    assert (ap.C1 * r) ** 2 + 2 * ap.C1 ** 2 * r == pytest.approx(B * B, rel=1e-12)


def test_delta0_identity():
    D_R = certify.constant_DR(2.0, 0.0)
    d0 = certify.delta0(D_R, 1.0, 2 * math.pi)
    assert d0 * (1 + 2 * math.pi) * 6 * math.cosh(D_R / 4) ** 2 == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DomainError):
        certify.delta0(D_R, 0.0, 0.0)


def test_alpha_checks():
    with pytest.raises(DegenerateVarianceError):
        certify.alpha_of(0.1, 0.0, 1.0)
    with pytest.raises(InconsistencyError):
        certify.alpha_of(0.1, 100.0, 1.0)
    assert certify.alpha_of(0.01, 0.5, 1.0) == pytest.approx(0.01 * 0.5 / 25)


def test_doubling_certificate():
    rep = certify.certificate(2.0, 0.0, 1.0, 2 * math.pi, 0.5)
    f = rep.fields()
    assert f["D_R"] == pytest.approx(1 + 2 * math.log(3))
    assert f["B"] == 1.0
    assert rep.flags and rep.flags[0].startswith("warning")
    assert f["alpha"] <= 4 / 25
    assert f["threshold"] == pytest.approx(2 * math.exp(1 / 6) / 3, rel=1e-14)
    assert f["Delta"] == pytest.approx(2 * f["D_R"] + DELTA0_GOLDEN, rel=1e-13)
    expected_C = 11460 * math.cosh(f["D_R"] / 4) ** 6 * (1 + 2 * math.pi) ** 2 / 0.5 ** 1.5
    assert f["final_constant"] == pytest.approx(expected_C, rel=1e-13)
    assert rep.provenance["D_R"]["inputs"]["composed_form"] == pytest.approx(f["D_R"], rel=1e-12)


def test_certificate_provenance_covers_every_field():
    rep = certify.certificate(4 / 3, 10 / 3, 0.56, 1 / 0.6, 0.0379)
    assert set(rep.fields()) <= set(rep.provenance)
    assert rep.fields()["gamma"] == pytest.approx(4 / 3)


def test_per_n_bounds_decrease_and_dominate_intermediate():
    rep = certify.certificate(2.0, 0.0, 1.0, 2 * math.pi, 0.5)
    prev = math.inf
    for n in (1, 2, 10, 1000, 10 ** 6):
        b = rep.per_n_bound(n)
        assert b.intermediate <= b.bound
        assert b.bound < prev
        prev = b.bound
        assert b.bound * math.sqrt(n) == pytest.approx(b.final_constant, rel=1e-14)


def test_be_bound_rejects_bad_n():
    with pytest.raises(DomainError):
        certify.be_bound(3.0, 1.0, 1.0, 1.0, 0)


def test_nonmarkov_certificate():
    rep = certify.nonmarkov_certificate(gamma=3.0, A_LY=1.0, variation_f=1.0, sup_f=1.0, card_A0=2.0,
                                        N_star=4, D_R=2.0, sigma=0.5, n=8)
    assert rep.a_cone == pytest.approx(2 / (1 - 2 / 3))
    M4 = 5 / (1 - (2 / 3) ** 4) * (4 + (4 / 3) ** 4)
    assert rep.M_table[4] == pytest.approx(M4, rel=1e-14)
    assert rep.exp_bound_max <= 1 / 30
    assert rep.bound == pytest.approx(9168 * math.cosh(0.5) ** 6 * M4 ** 2 / 0.125 / math.sqrt(8), rel=1e-13)


def test_nonmarkov_preconditions():
    kw = dict(A_LY=1.0, variation_f=1.0, sup_f=1.0, card_A0=2.0, N_star=4, D_R=2.0, sigma=0.5)
    with pytest.raises(DomainError):
        certify.nonmarkov_certificate(gamma=2.0, n=8, **kw)
    with pytest.raises(DomainError):
        certify.nonmarkov_certificate(gamma=3.0, n=7, **kw)
    with pytest.raises(DegenerateVarianceError):
        certify.nonmarkov_certificate(gamma=3.0, n=8, **{**kw, "sigma": 0.0})
