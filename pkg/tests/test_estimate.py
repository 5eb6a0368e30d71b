"""Delay-Doppler transform and target extraction tests.

The closed-form Dirichlet-kernel channel is the oracle for the transform
pair; peak estimation is checked on- and off-grid, with and without the ML
polish, plus Doppler wrapping, shortfall flagging, Hungarian pairing, and
the delay-cut sidelobe metric.
"""

import math
import warnings

import numpy as np
import pytest

from isacwave.grid import GridParams, Target, sensing_channel
from isacwave.estimate import (
    cir_peak_sidelobe,
    dd_closed_form,
    dd_inverse,
    dd_map,
    dirichlet_kernel,
    estimate_targets,
    pair_estimates,
)

GRID = GridParams(64, 64, 15e3, noise_power=1.0)


# ---------------------------------------------------------------------------
# transform pair
# ---------------------------------------------------------------------------

def test_dd_map_is_unitary():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((16, 12)) + 1j * rng.standard_normal((16, 12))
    assert abs(np.linalg.norm(dd_map(h)) - np.linalg.norm(h)) \
        <= 1e-12 * np.linalg.norm(h)


def test_dd_roundtrip():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((8, 10)) + 1j * rng.standard_normal((8, 10))
    back = dd_inverse(dd_map(h))
    assert np.allclose(back, h, atol=1e-12)


def test_dd_on_grid_target_lands_on_its_bin():
    beta = 0.7 - 0.4j
    t = Target(beta, 3 * GRID.delay_res, 2 * GRID.doppler_res)
    hdd = dd_map(sensing_channel(GRID, [t]))
    expected = math.sqrt(GRID.M * GRID.N) * beta
    assert abs(hdd[3, 2] - expected) < 1e-9 * abs(expected)
    rest = np.abs(hdd).copy()
    rest[3, 2] = 0.0
    assert rest.max() < 1e-9 * abs(expected)


def test_dd_negative_doppler_wraps():
    t = Target(1.0 + 0j, 3 * GRID.delay_res, -2 * GRID.doppler_res)
    hdd = dd_map(sensing_channel(GRID, [t]))
    i, j = np.unravel_index(np.argmax(np.abs(hdd)), hdd.shape)
    assert (i, j) == (3, GRID.N - 2)


def test_closed_form_matches_transform_off_grid():
    # the binding oracle: exact equality (1e-9 relative) at full occupancy
    targets = [Target(1.0 + 0.3j, 2.37 * GRID.delay_res, 1.62 * GRID.doppler_res),
               Target(0.6 * np.exp(0.4j), 9.81 * GRID.delay_res,
                      -4.44 * GRID.doppler_res)]
    via_map = dd_map(sensing_channel(GRID, targets))
    closed = dd_closed_form(targets, GRID)
    rel = np.linalg.norm(closed - via_map) / np.linalg.norm(via_map)
    assert rel <= 1e-9


def test_dirichlet_kernel_values():
    assert abs(dirichlet_kernel(np.array([0.0]), 16)[0] - 16.0) < 1e-12
    # zeros at the other integers
    ints = dirichlet_kernel(np.arange(1, 16, dtype=float), 16)
    assert np.abs(ints).max() < 1e-9
    # even-length kernel flips sign after one period
    assert abs(dirichlet_kernel(np.array([16.0]), 16)[0] + 16.0) < 1e-9
    # stable across the removable singularity
    near = dirichlet_kernel(np.array([1e-11, -1e-11]), 16)
    assert np.allclose(near, 16.0, atol=1e-6)


# ---------------------------------------------------------------------------
# peak extraction
# ---------------------------------------------------------------------------

def test_on_grid_targets_recovered_exactly():
    targets = [Target(1.0 + 0j, 5 * GRID.delay_res, 7 * GRID.doppler_res),
               Target(0.8j, 20 * GRID.delay_res, -9 * GRID.doppler_res)]
    hdd = dd_map(sensing_channel(GRID, targets))
    res = estimate_targets(hdd, 2, GRID)
    assert not res.shortfall
    order, dist = pair_estimates([t.tau for t in targets],
                                 [t.nu for t in targets],
                                 res.tau, res.nu, GRID)
    assert set(order.tolist()) == {0, 1}
    assert dist.max() < 1e-9


def test_off_grid_quadratic_refinement_within_bound():
    # debiased 3-point quadratic alone: well inside the 0.05*delay_res bound
    for frac in (0.1, 0.3, 0.45):
        tau = (5 + frac) * GRID.delay_res
        hdd = dd_map(sensing_channel(GRID, [Target(1.0 + 0j, tau, 0.0)]))
        res = estimate_targets(hdd, 1, GRID, polish=False)
        assert abs(res.tau[0] - tau) <= 0.05 * GRID.delay_res
        assert abs(res.tau[0] - tau) <= 1e-6 * GRID.delay_res


def test_ml_polish_is_exact_noiseless():
    t = Target(0.7 + 0.4j, 3.3 * GRID.delay_res, -2.6 * GRID.doppler_res)
    hdd = dd_map(sensing_channel(GRID, [t]))
    res = estimate_targets(hdd, 1, GRID)
    assert abs(res.tau[0] - t.tau) <= 1e-9 * GRID.delay_res
    assert abs(res.nu[0] - t.nu) <= 1e-9 * GRID.doppler_res


def test_two_separated_targets_both_refined():
    targets = [Target(1.0 + 0j, 4.4 * GRID.delay_res, 1.2 * GRID.doppler_res),
               Target(0.9 * np.exp(0.7j), 9.4 * GRID.delay_res,
                      -3.8 * GRID.doppler_res)]
    hdd = dd_map(sensing_channel(GRID, targets))
    res = estimate_targets(hdd, 2, GRID)
    order, dist = pair_estimates([t.tau for t in targets],
                                 [t.nu for t in targets],
                                 res.tau, res.nu, GRID)
    # 5-bin separation leaves small mutual leakage; both peaks stay sub-bin
    assert dist.max() < 0.05


def test_shortfall_flag_when_fewer_peaks():
    t = Target(1.0 + 0j, 5 * GRID.delay_res, 0.0)
    hdd = dd_map(sensing_channel(GRID, [t]))
    with pytest.warns(UserWarning, match="local maxima"):
        res = estimate_targets(hdd, 3, GRID)
    assert res.shortfall
    assert res.tau.size == 1


def test_rejects_nonpositive_target_count():
    with pytest.raises(ValueError):
        estimate_targets(np.ones((8, 8)), 0, GRID)


def test_pair_estimates_handles_permutation_and_shortage():
    tau_t = np.array([2.0, 7.0]) * GRID.delay_res
    nu_t = np.array([1.0, -3.0]) * GRID.doppler_res
    # swapped estimates
    order, dist = pair_estimates(tau_t, nu_t, tau_t[::-1], nu_t[::-1], GRID)
    assert order.tolist() == [1, 0]
    assert dist.max() < 1e-12
    # one estimate missing: the unmatched target reports -1 / inf
    order, dist = pair_estimates(tau_t, nu_t, tau_t[:1], nu_t[:1], GRID)
    assert order[0] == 0 and order[1] == -1
    assert math.isinf(dist[1])


# ---------------------------------------------------------------------------
# sidelobe metric
# ---------------------------------------------------------------------------

def test_sidelobe_level_full_grid_dirichlet():
    # off-grid target on the full grid: classic periodic-sinc sidelobes
    t = Target(1.0 + 0j, 3.37 * GRID.delay_res, 0.0)
    psl = cir_peak_sidelobe(dd_map(sensing_channel(GRID, [t])))
    assert -20.0 < psl < -8.0


def test_sparse_mask_raises_sidelobes():
    # an on-grid target has exact Dirichlet nulls on the full grid; any
    # proper sampling destroys them and sidelobes reappear far above that
    rng = np.random.default_rng(7)
    t = Target(1.0 + 0j, 5 * GRID.delay_res, 0.0)
    h = sensing_channel(GRID, [t])
    assert cir_peak_sidelobe(dd_map(h)) < -100.0
    mask = rng.random(h.shape) < 0.25
    sparse_psl = cir_peak_sidelobe(dd_map(np.where(mask, h, 0.0)))
    assert -40.0 < sparse_psl < -3.0
