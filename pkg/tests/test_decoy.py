import math

import pytest

from keyforge import decoy
from keyforge.errors import InfeasibleObservations, OutOfRange


def true_y1(eta):
    return eta


def test_poisson_examples():
    assert decoy.poisson_pn(0.7, 0) == pytest.approx(math.exp(-0.7))
    assert decoy.poisson_pn(0.5, 1) == pytest.approx(0.3033, abs=1e-4)
    with pytest.raises(OutOfRange):
        decoy.poisson_pn(0.0, 1)


def test_lossless_channel():
    b = decoy.decoy_lp_bounds(decoy.loss_channel(1.0, (0.5, 0.1)))
    assert b.y1_lower >= 1 - 1e-6
    assert b.yield_lp.gap < 1e-8


def test_dark_channel():
    model = decoy.DecoyModel((0.5, 0.1), (0.0, 0.0), (0.0, 0.0))
    assert decoy.decoy_lp_bounds(model).y1_lower == 0.0
    assert decoy.decoy_asymptotic_rate(model) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("eta", [0.05, 0.1, 0.3])
def test_loss_channel_bounds(eta):
    b = decoy.decoy_lp_bounds(decoy.loss_channel(eta, (0.5, 0.1)))
    assert b.y1_lower <= true_y1(eta)
    assert b.y1_lower >= 0.95 * true_y1(eta)
    assert max(b.yield_lp.gap, b.error_lp.gap) < 1e-8


def test_unknown_background_is_weaker():
    known = decoy.decoy_lp_bounds(decoy.loss_channel(0.1, (0.5, 0.1)))
    free = decoy.decoy_lp_bounds(decoy.loss_channel(0.1, (0.5, 0.1), known_background=False))
    assert free.y1_lower <= known.y1_lower


def test_three_intensities_with_vacuum_like_decoy():
    b = decoy.decoy_lp_bounds(decoy.loss_channel(0.1, (0.5, 0.1, 0.001), known_background=False))
    assert 0.9 * 0.1 <= b.y1_lower <= 0.1


def test_error_bound_covers_truth():
    b = decoy.decoy_lp_bounds(decoy.loss_channel(0.1, (0.5, 0.1), error=0.02))
    assert b.e1_upper >= 0.02 - 1e-9


def test_perfect_channel_rate():
    rate = decoy.decoy_asymptotic_rate(decoy.loss_channel(1.0, (0.5, 0.1)))
    assert rate == pytest.approx(decoy.poisson_pn(0.5, 1), abs=1e-9)


def test_rate_examples():
    model = decoy.loss_channel(0.1, (0.5, 0.1))
    assert decoy.decoy_asymptotic_rate(model, q_x1_upper=0.5) <= 0
    with pytest.raises(OutOfRange):
        decoy.decoy_asymptotic_rate(model, f_ec=0.9)


def test_inconsistent_data():
    # the decoy gain cannot exceed what its photon-number mixture allows
    model = decoy.DecoyModel((0.5, 0.1), (0.01, 0.09), (0.0, 0.0), y0_bounds=(0.0, 0.0))
    with pytest.raises(InfeasibleObservations):
        decoy.decoy_lp_bounds(model)


def test_model_validation():
    with pytest.raises(OutOfRange):
        decoy.DecoyModel((0.5,), (0.1,), (0.0,))
    with pytest.raises(OutOfRange):
        decoy.DecoyModel((0.5, 0.1), (0.1, 0.05), (0.2, 0.0))
    with pytest.raises(OutOfRange):
        decoy.DecoyModel((0.5, 0.1), (0.1, 0.05), (0.0, 0.0), y0_bounds=(0.5, 0.1))
    with pytest.raises(OutOfRange):
        decoy.loss_channel(1.5, (0.5, 0.1))
