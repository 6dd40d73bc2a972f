import math

import numpy as np
import pytest
from scipy.optimize import brentq

from shiftniche.critical_speed import (
    barrier,
    closed_form_bounds,
    fat_tail_speed_bound,
    find_speeds,
    save_lambda_curve_csv,
    spectral_speed_bound,
    symmetric_remark_values,
)
from shiftniche.environment import Logistic, niche_profile
from shiftniche.errors import TransformDivergent, ValidationError
from shiftniche.kernel import make_kernel, moment
from shiftniche.spectral import lambda_p_limit

POLICY = {"h": 0.05}


@pytest.fixture(scope="module")
def report(uniform1, reference_growth):
    return find_speeds(uniform1, reference_growth, POLICY)


@pytest.fixture(scope="module")
def fat_setup():
    kernel = make_kernel("fat_quartic", scale=1.0, sampling_radius=200.0)
    return kernel, Logistic(niche_profile(inner=1.5), 1.0)


def uniform_speed_oracle():
    """For uniform(1), E(alpha) = sinh(alpha)/alpha, so with sup a = 1 the
    objective is sinh(alpha)/alpha**2, minimized where tanh(alpha) = alpha/2."""
    alpha = brentq(lambda t: math.tanh(t) - t / 2.0, 1.0, 3.0, xtol=1e-15)
    return math.sinh(alpha) / alpha**2, alpha


def test_oracle_value_frozen():
    value, alpha = uniform_speed_oracle()
    # frozen after the scalar root above was computed independently
    assert value == pytest.approx(0.9052617393690582, abs=1e-12)
    assert alpha == pytest.approx(1.915008, abs=1e-6)


def test_spectral_bound_matches_oracle(uniform1, reference_growth):
    value, alpha, flags = spectral_speed_bound(uniform1, reference_growth)
    oracle, oracle_alpha = uniform_speed_oracle()
    assert flags == []
    assert abs(value - oracle) <= 1e-6
    assert alpha == pytest.approx(oracle_alpha, abs=1e-3)


def test_plus_minus_agree_for_symmetric(uniform1, reference_growth):
    plus = spectral_speed_bound(uniform1, reference_growth, "+")[0]
    minus = spectral_speed_bound(uniform1, reference_growth, "-")[0]
    assert abs(plus - minus) <= 1e-12


def test_spectral_bound_exceeds_first_moment(skew_kernel, reference_growth):
    # E(alpha) - 1 >= alpha * m1 by convexity, so the bound dominates the drift
    for orient, sign in (("+", 1.0), ("-", -1.0)):
        value = spectral_speed_bound(skew_kernel, reference_growth, orient)[0]
        assert value >= sign * moment(skew_kernel, 1) - 1e-12


def test_asymmetric_bounds_differ(skew_kernel, reference_growth):
    plus = spectral_speed_bound(skew_kernel, reference_growth, "+")[0]
    minus = spectral_speed_bound(skew_kernel, reference_growth, "-")[0]
    assert plus > minus


def test_boundary_minimum_flag(uniform1, reference_growth):
    _, alpha, flags = spectral_speed_bound(uniform1, reference_growth, alpha_range=(1e-3, 1.0))
    assert flags == ["boundary-minimum"]
    assert alpha == pytest.approx(1.0)


def test_bad_alpha_range(uniform1, reference_growth):
    with pytest.raises(ValidationError):
        spectral_speed_bound(uniform1, reference_growth, alpha_range=(2.0, 1.0))


@pytest.mark.parametrize(
    "spec",
    [
        ("uniform", {"radius": 1.0}),
        ("uniform", {"radius": 2.5}),
        ("tent", {"radius": 1.0}),
        ("truncated_cosine", {"radius": 1.5}),
        ("gaussian", {"sigma": 0.7, "sampling_radius": 10.0}),
    ],
)
@pytest.mark.parametrize("sup_a", [0.25, 1.0, 2.0])
def test_corrected_symmetric_value_below_c0(spec, sup_a):
    kernel = make_kernel(spec[0], **spec[1])
    growth = Logistic(niche_profile(inner=sup_a), 1.0)
    remark, corrected = symmetric_remark_values(kernel, growth)
    c0 = spectral_speed_bound(kernel, growth)[0]
    assert corrected <= c0 + 1e-12
    assert remark == pytest.approx(math.sqrt(2.0) * corrected)


def test_symmetric_values_uniform(uniform1, reference_growth):
    # m2 = 1/3 for uniform(1)
    remark, corrected = symmetric_remark_values(uniform1, reference_growth)
    assert remark == pytest.approx(2.0 / math.sqrt(3.0), abs=1e-9)
    assert corrected == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-9)


def test_symmetric_values_reject_asymmetric(skew_kernel, reference_growth):
    with pytest.raises(ValidationError):
        symmetric_remark_values(skew_kernel, reference_growth)


def test_fat_tail_has_no_exponential_bound(fat_setup):
    kernel, growth = fat_setup
    with pytest.raises(TransformDivergent):
        spectral_speed_bound(kernel, growth)
    bounds = closed_form_bounds(kernel, growth)
    assert bounds["c_alpha_plus"] is None
    assert math.isfinite(bounds["c_hash"])


def test_fat_tail_bound(fat_setup):
    kernel, growth = fat_setup
    fat = fat_tail_speed_bound(kernel, growth)
    assert math.isfinite(fat["c_hash"]) and fat["c_hash"] > 0
    assert abs(fat["root_residual"]) <= 1e-12
    assert fat["barrier_residual"] <= 1e-6
    assert fat["c_hash"] == max(fat["c0"], fat["c1"], fat["c2"])
    tau = fat["tau0"]
    assert abs(fat["M2"] * tau**2 + fat["M1"] * tau - fat["kappa"]) <= 1e-12


def test_barrier_shape():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(barrier(x, 0.5), [2.0, 1.0, 0.4])


def test_find_speeds_reference(report, uniform1, reference_growth):
    lo, hi = report.c_star_plus
    assert 0 < lo < hi <= lo + report.bracket_tol
    assert report.c_star_plus[0] <= report.c_dstar_plus[0]
    assert report.monotone_sign_structure
    assert report.flags == []
    assert report.lambda_at_rest < 0
    # the outer threshold never exceeds the exponential-moment speed
    assert report.c_dstar_plus[1] <= report.bounds["c_alpha_plus"] + 1e-3


def test_find_speeds_symmetric_thresholds(report):
    assert abs(report.c_star_plus[0] - report.c_star_minus[0]) <= 2e-3
    assert abs(report.c_dstar_plus[1] - report.c_dstar_minus[1]) <= 2e-3


def test_brackets_reverified_independently(report, uniform1, reference_growth):
    for side, sign in (("plus", 1.0), ("minus", -1.0)):
        lo, hi = getattr(report, f"c_star_{side}")
        lam_lo = lambda_p_limit(uniform1, reference_growth, sign * lo, h=0.05).lambda_p
        lam_hi = lambda_p_limit(uniform1, reference_growth, sign * hi, h=0.05).lambda_p
        assert lam_lo < 0 <= lam_hi


def test_worker_determinism(report, uniform1, reference_growth):
    again = find_speeds(uniform1, reference_growth, POLICY, workers=4)
    assert again.to_text() == report.to_text()
    assert again.lambda_curve == report.lambda_curve


def test_report_text_sections(report):
    text = report.to_text()
    for section in ("[speeds]", "[bounds]", "[scan]", "[flags]"):
        assert section in text
    assert "c_star_plus = [" in text


def test_lambda_curve_csv(report, tmp_path):
    path = tmp_path / "curve.csv"
    save_lambda_curve_csv(report.lambda_curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "c,lambda_p"
    assert len(lines) == len(report.lambda_curve) + 1
    cs = [float(line.split(",")[0]) for line in lines[1:]]
    assert cs == sorted(cs)


def test_not_persistent_at_rest(uniform1):
    hostile = Logistic(niche_profile(inner=-0.1, outer=-1.0), 1.0)
    with pytest.raises(ValidationError, match="not-persistent-at-rest"):
        find_speeds(uniform1, hostile, POLICY, c_range=(-1.0, 1.0))


def test_c_range_must_straddle_zero(uniform1, reference_growth):
    with pytest.raises(ValidationError):
        find_speeds(uniform1, reference_growth, POLICY, c_range=(0.1, 1.0))


def test_no_sign_change_flagged(uniform1, reference_growth):
    rep = find_speeds(uniform1, reference_growth, POLICY, c_range=(-0.3, 0.3), half_points=3)
    assert "no-sign-change-plus" in rep.flags
    assert rep.c_star_plus == (0.3, math.inf)
