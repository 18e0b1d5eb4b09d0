import math

import numpy as np
import pytest

from errors import ConfigError, DomainError
from services.damping_service import (
    ConstantDamping,
    CosineDamping,
    GrowingOff,
    IntervalLengths,
    PolyProduct,
    ShrinkingOn,
    SpaceBump,
    build_profile,
    discontinuity_times,
    smooth_chi,
    snapshot,
)
from services.grid_service import TorusGrid


def test_constant_broadcasts_over_points():
    W = ConstantDamping(0.3)
    x = np.zeros((5, 2))
    np.testing.assert_array_equal(W.eval(x, 1.0), np.full(5, 0.3))
    assert W.sup_norm == 0.3


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        ConstantDamping(1.0).eval([0.0], -0.1)


def test_cosine_stays_nonnegative():
    W = CosineDamping(1.0, 1.0)
    values = snapshot(W, TorusGrid(1, 32), 0.0).values
    assert values.min() >= 0
    assert values.max() == pytest.approx(2.0)
    with pytest.raises(DomainError):
        CosineDamping(0.5, 1.0)


def test_space_bump_support():
    W = SpaceBump(1.0, [math.pi], 1.0)
    assert W.eval([math.pi], 0.0) == pytest.approx(1.0)
    assert W.eval([math.pi + 1.2], 0.0) == 0.0
    flat = SpaceBump(2.0, [0.0], 0.5, "flat")
    # wraps around the period
    assert flat.eval([2 * math.pi - 0.25], 0.0) == 2.0


def test_strip_bump_ignores_other_axes():
    W = SpaceBump(1.0, [math.pi, 0.0], 1.0, axes=[0])
    assert W.eval([math.pi, 3.0], 0.0) == pytest.approx(1.0)
    assert W.eval([0.0, 0.0], 0.0) == 0.0


def test_poly_product_decays_with_rate():
    W = PolyProduct(ConstantDamping(1.0), 0.5)
    assert W.eval([0.0], 3.0) == pytest.approx(0.5)
    assert W.sup_norm == 1.0


def test_poly_product_factor_bracketed():
    W = PolyProduct(ConstantDamping(1.0), 1.0, C_m=0.5, C_M=2.0, omega=3.0)
    t = np.linspace(0, 20, 401)
    ratio = W.factor(t) / W.rate(t)
    assert ratio.min() >= 0.5 - 1e-12
    assert ratio.max() <= 2.0 + 1e-12


def test_growing_off_switch_times():
    W = GrowingOff(ConstantDamping(1.0), 1.0, IntervalLengths("power", 1.0, alpha=1.0))
    assert discontinuity_times(W, 6.0) == [1.0, 2.0, 3.0, 5.0, 6.0]
    assert W.eval([0.0], 0.5) == 1.0
    assert W.eval([0.0], 1.5) == 0.0
    assert W.eval([0.0], 5.5) == 1.0
    assert W.on_count(10.0) == 4
    assert W.on_duration(5.5) == pytest.approx(2.5)


def test_shrinking_on_switch_times():
    W = ShrinkingOn(ConstantDamping(1.0), 2.0, IntervalLengths("decay", 1.0, beta=1.0))
    assert discontinuity_times(W, 4.0) == [1.0, 2.0, 2.5, 4.0]
    assert W.eval([0.0], 0.5) == 1.0
    assert W.eval([0.0], 2.75) == 0.0


def test_shrinking_on_requires_short_intervals():
    with pytest.raises(DomainError):
        ShrinkingOn(ConstantDamping(1.0), 1.0, IntervalLengths("decay", 2.0))


def test_shrinking_on_requires_positive_floor():
    with pytest.raises(DomainError):
        ShrinkingOn(SpaceBump(1.0, [0.0], 1.0), 2.0, IntervalLengths("decay", 1.0))


def test_smooth_chi_shape():
    assert smooth_chi(0.5) == 1.0
    assert smooth_chi(0.0) == pytest.approx(0.0)
    assert smooth_chi(1.2) == 0.0


def test_interval_lengths():
    assert IntervalLengths("geometric", 1.0, r=2.0)(3) == 8.0
    assert IntervalLengths("double_exp", 1.0)(0.0) == pytest.approx(math.e)
    with pytest.raises(DomainError):
        IntervalLengths("geometric", r=1.0)


def test_build_profile_nested():
    W = build_profile(
        {"family": "growing_off",
         "params": {"base": {"family": "constant", "params": {"a": 0.5}}, "L0": 1.0, "f": {"kind": "power"}}}
    )
    assert isinstance(W, GrowingOff)
    assert W.sup_norm == 0.5
    assert build_profile(None) is None
    assert build_profile({"family": "none"}) is None


@pytest.mark.parametrize(
    "spec, field",
    [
        ({"family": "wobble"}, "damping.family"),
        ({"family": "constant", "params": {}}, "damping.params.a"),
        ({"family": "constant", "params": {"a": 1, "b": 2}}, "damping.params.b"),
        ({"family": "growing_off",
          "params": {"base": {"family": "constant", "params": {"a": 1}}, "L0": 1, "f": {"C1": 1}}},
         "damping.params.f.kind"),
    ],
)
def test_build_profile_reports_field(spec, field):
    with pytest.raises(ConfigError) as info:
        build_profile(spec)
    assert info.value.field == field


def test_shrinking_on_right_ends_are_off():
    W = ShrinkingOn(ConstantDamping(1.0), 2.0, IntervalLengths("decay", 1.0, beta=1.0))
    assert W.eval([0.0], 1.0) == 0.0
    assert W.eval([0.0], 2.5) == 0.0
    assert W.eval([0.0], 2.0) == 1.0
    assert W.eval([0.0], 2.4) == 1.0


@pytest.mark.parametrize("chi", ["indicator", "smooth"])
def test_shrinking_on_zero_set(chi):
    S0 = 2.0
    f = IntervalLengths("decay", 1.0, beta=0.2)
    W = ShrinkingOn(ConstantDamping(1.0), S0, f, chi)
    for k in range(51):
        end = k * S0 + float(f(k))
        t = np.concatenate([[end], np.linspace(end, (k + 1) * S0, 7)[1:-1]])
        assert np.all(W.eval(np.zeros((t.size, 1)), t) == 0.0), k


@pytest.mark.parametrize(
    "profile",
    [
        ConstantDamping(0.7),
        CosineDamping(1.0, 1.0, (1, 1)),
        SpaceBump(2.0, [1.0, 2.0], 1.2),
        PolyProduct(CosineDamping(1.0, 0.5, (1, 0)), 0.5, C_m=0.5, C_M=2.0, omega=3.0),
        GrowingOff(SpaceBump(1.0, [0.0, 0.0], 2.0), 1.0, IntervalLengths("power", 1.0, alpha=1.0)),
        ShrinkingOn(CosineDamping(1.0, 0.5, (0, 1)), 2.0, IntervalLengths("decay", 1.0, beta=0.2), "smooth"),
    ],
)
def test_damping_is_nonnegative_and_below_sup(profile):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 2 * math.pi, size=(10_000, 2))
    t = rng.uniform(0.0, 50.0, size=10_000)
    values = profile.eval(x, t)
    assert values.min() >= 0.0
    assert values.max() <= profile.sup_norm * (1 + 1e-12)
