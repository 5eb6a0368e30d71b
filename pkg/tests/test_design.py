import math

import numpy as np
import pytest

from isacwave import (Allocation, BnbLimits, DesignConfig, GridParams, Target,
                      fisher_weights, solve_tf, solve_tfe, validate_solution)
from isacwave.design import (DesignSolution, _model_data, block_weight_aggregates,
                             build_relaxation_tf)
from isacwave.conic import solve_conic

from enumeration import TfEnumeration

GRID = GridParams(M=8, N=8, delta_f=15e3, noise_power=1.0)
_DT, _DN = GRID.delay_res, GRID.doppler_res
TARGETS = (
    Target(tau=1.1 * _DT, nu=0.6 * _DN, beta=1.0 + 0.0j),
    Target(tau=4.2 * _DT, nu=-0.9 * _DN, beta=np.exp(0.9j)),
)


def two_ue_config(**kw):
    base = dict(grid=GRID, targets=TARGETS, channel_gains=(3.0, 8.0),
                mu=0.5, eta_bar=0.35, e_max=64.0, sigma_max_sq=4.0, n_b=2)
    base.update(kw)
    return DesignConfig(**base)


def single_ue_config(**kw):
    base = dict(grid=GRID, targets=TARGETS, channel_gains=(5.0,),
                mu=0.5, eta_bar=0.3, e_max=64.0, sigma_max_sq=4.0, n_b=2)
    base.update(kw)
    return DesignConfig(**base)


# ---------------------------------------------------------------------------
# model pieces
# ---------------------------------------------------------------------------

def test_block_aggregates_match_resource_sums():
    weights = fisher_weights(GRID, TARGETS)
    agg = block_weight_aggregates(weights, GRID, 2)
    # recompute one block the slow way: block b=(i,j) covers rows 2i:2i+2,
    # cols 2j:2j+2 of the M x N map
    w = weights.delay[0, 1]
    for b in [0, 3, 5, 14]:
        i, j = b % 4, b // 4
        manual = w[2 * i:2 * i + 2, 2 * j:2 * j + 2].sum()
        assert agg["tau12"][b] == pytest.approx(manual, rel=1e-12)
    for key in ("tau11", "nu11", "nu12", "cross11", "cross12"):
        assert agg[key].shape == (16,)
    # totals are preserved by the tiling
    assert agg["nu11"].sum() == pytest.approx(weights.doppler[0, 0].sum(), rel=1e-12)


def test_rejects_wrong_target_count():
    with pytest.raises(ValueError, match="two targets"):
        solve_tf(single_ue_config(targets=TARGETS[:1]))


def test_rejects_unequal_reflection_magnitudes():
    lopsided = (TARGETS[0],
                Target(tau=TARGETS[1].tau, nu=TARGETS[1].nu, beta=0.4j))
    with pytest.raises(ValueError, match="equal-magnitude"):
        solve_tf(single_ue_config(targets=lopsided))


def test_config_validation():
    with pytest.raises(ValueError, match="mu"):
        two_ue_config(mu=0.0)
    with pytest.raises(ValueError, match="eps"):
        two_ue_config(eps_tau=0.8, eps_nu=0.8)
    with pytest.raises(ValueError, match="n_b"):
        two_ue_config(n_b=3)
    with pytest.raises(ValueError, match="instantaneous"):
        two_ue_config(instantaneous_gains=(1.0,))


def test_tf_energy_default_spreads_budget():
    cfg = two_ue_config()
    # e_max / (mu * M * N) = 64 / 32
    assert cfg.tf_energy == pytest.approx(2.0)
    assert two_ue_config(sigma_sq_tf=0.7).tf_energy == pytest.approx(0.7)


# ---------------------------------------------------------------------------
# relaxation vs enumeration
# ---------------------------------------------------------------------------

def test_relaxation_root_bounds_enumeration():
    cfg = single_ue_config()
    prog = build_relaxation_tf(cfg)
    res = solve_conic(prog)
    assert res.ok
    root_m = prog.meta["m_from_v"](res.objective)
    enum = TfEnumeration(cfg)
    # the continuous relaxation can only be at least as good as any mask
    assert root_m <= enum.best_model * (1 + 1e-9)


def test_tf_integral_eval_matches_conic_leaf():
    cfg = single_ue_config()
    prog = build_relaxation_tf(cfg)
    a = np.zeros((1, 16), dtype=np.int8)
    a[0, [1, 2, 5, 6, 9, 10, 12, 15]] = 1  # 8 blocks = c_star
    m_closed, _ = prog.integral_eval(a)
    override = {int(i): (float(v), float(v))
                for i, v in zip(prog.meta["a_ids"].ravel(), a.ravel())}
    res = solve_conic(prog, bounds_override=override)
    assert res.ok
    m_conic = prog.meta["m_from_v"](res.objective)
    assert m_conic == pytest.approx(m_closed, rel=1e-6)


def test_bnb_matches_enumeration_single_ue():
    cfg = single_ue_config()
    enum = TfEnumeration(cfg)
    sol = solve_tf(cfg, BnbLimits(max_nodes=4000, max_time=120.0))
    assert sol.status == "optimal"
    assert sol.objective_model == pytest.approx(enum.best_model, rel=1e-4)
    # certified bound must lie below everything the enumeration saw
    assert sol.objective_bound <= enum.best_model * (1 + 1e-9)


def test_bnb_certificates_consistent_two_ue():
    # with two UEs the relaxation is looser; whatever gap the node cap leaves,
    # the incumbent/bound pair must still bracket the enumeration optimum
    cfg = two_ue_config()
    enum = TfEnumeration(cfg)
    sol = solve_tf(cfg, BnbLimits(max_nodes=300, max_time=60.0))
    assert sol.allocation is not None
    assert sol.objective_model >= enum.best_model * (1 - 1e-9)
    assert sol.objective_bound <= enum.best_model * (1 + 1e-9)
    assert sol.objective_model <= enum.best_model * (1 + sol.gap + 1e-9)


def test_enumeration_cross_checks_crb_engine():
    # the oracle's independent 2x2 algebra must agree with the package CRB
    # engine on a sample mask
    from isacwave import crb_general, weighted_crb_objective
    cfg = single_ue_config()
    enum = TfEnumeration(cfg)
    # a full-occupancy mask keeps the 4x4 FIM comfortably invertible
    i = int(np.flatnonzero(enum.masks.sum(axis=1) == 8)[7])
    mask = enum.masks[i].astype(bool)
    # expand 2x2 blocks to the resource grid
    mg = np.kron(mask.reshape(4, 4, order="F"), np.ones((2, 2)))
    e = cfg.tf_energy * (mg.reshape(-1, order="F") > 0)
    weights = fisher_weights(GRID, TARGETS)
    rep = crb_general(weights, e, GRID)
    want = weighted_crb_objective(rep.trace_tau, rep.trace_nu,
                                  cfg.eps_tau, cfg.eps_nu, GRID)
    assert enum.exact[i] == pytest.approx(want, rel=1e-9)


# ---------------------------------------------------------------------------
# feasibility edge cases
# ---------------------------------------------------------------------------

def test_infeasible_rate_threshold():
    # demanding more rate than full ownership of the grid can deliver
    sol = solve_tf(two_ue_config(eta_bar=10.0))
    assert sol.status == "infeasible"
    assert sol.allocation is None
    assert math.isinf(sol.objective_exact)


def test_full_occupancy_no_rate_pressure():
    cfg = single_ue_config(mu=1.0, eta_bar=0.0)
    sol = solve_tf(cfg, BnbLimits(max_nodes=2000, max_time=120.0))
    assert sol.status == "optimal"
    enum = TfEnumeration(cfg)
    assert sol.objective_model == pytest.approx(enum.best_model, rel=1e-4)


def test_zero_gain_ue_infeasible():
    sol = solve_tf(two_ue_config(channel_gains=(0.0, 8.0)))
    assert sol.status == "infeasible"


# ---------------------------------------------------------------------------
# monotonicity and dominance
# ---------------------------------------------------------------------------

def test_mu_monotonicity_with_warm_chain():
    lims = BnbLimits(max_nodes=600, max_time=60.0)
    prev = None
    values = []
    for mu in (0.25, 0.5, 1.0):
        cfg = single_ue_config(mu=mu, sigma_sq_tf=1.0)
        sol = solve_tf(cfg, lims, warm=prev)
        assert sol.allocation is not None
        values.append(sol.objective_model)
        prev = sol.allocation
    assert values[1] <= values[0] * (1 + 1e-9)
    assert values[2] <= values[1] * (1 + 1e-9)


def test_tfe_dominates_tf_with_warm_start():
    cfg = two_ue_config(delta_db=0.0)
    tf = solve_tf(cfg, BnbLimits(max_nodes=300, max_time=60.0))
    assert tf.allocation is not None
    tfe = solve_tfe(cfg, BnbLimits(max_nodes=300, max_time=120.0),
                    warm=tf.allocation)
    assert tfe.allocation is not None
    assert tfe.objective_model <= tf.objective_model * (1 + 1e-9)
    assert tfe.allocation.total_energy <= cfg.e_max * (1 + 1e-6)


def test_delta_monotonicity_chain():
    # at full occupancy there are no zero-energy borders, so even a -30 dB
    # gradient cap stays feasible (near-uniform map); the feasible sets nest
    # as the cap loosens, which the warm chain turns into a guarantee
    lims = BnbLimits(max_nodes=300, max_time=120.0)
    tf = solve_tf(single_ue_config(mu=1.0, eta_bar=0.2),
                  BnbLimits(max_nodes=600, max_time=60.0))
    prev = tf.allocation
    values = []
    for ddb in (-30.0, -10.0, 0.0):
        sol = solve_tfe(single_ue_config(mu=1.0, eta_bar=0.2, delta_db=ddb),
                        lims, warm=prev)
        assert sol.allocation is not None
        values.append(sol.objective_model)
        prev = sol.allocation
    assert values[1] <= values[0] * (1 + 1e-9)
    assert values[2] <= values[1] * (1 + 1e-9)


def test_tfe_zero_gradient_at_full_mu_equals_tf():
    # a hard-zero gradient cap forces a flat total-energy map; at mu = 1 that
    # is exactly the uniform design, so TFE collapses onto TF with
    # sigma_sq_tf = E_max/(M N)
    cfg_tfe = single_ue_config(mu=1.0, delta_db=-math.inf, eta_bar=0.2)
    tfe = solve_tfe(cfg_tfe, BnbLimits(max_nodes=300, max_time=120.0))
    assert tfe.allocation is not None
    assert tfe.allocation.occupancy == pytest.approx(1.0)
    e = tfe.allocation.energies[0]
    assert np.allclose(e, cfg_tfe.e_max / GRID.n_resources, rtol=1e-5)

    cfg_tf = single_ue_config(mu=1.0, eta_bar=0.2,
                              sigma_sq_tf=cfg_tfe.e_max / GRID.n_resources)
    tf = solve_tf(cfg_tf, BnbLimits(max_nodes=300, max_time=60.0))
    assert tfe.objective_model == pytest.approx(tf.objective_model, rel=1e-5)


# ---------------------------------------------------------------------------
# objective weighting extremes
# ---------------------------------------------------------------------------

def _allocated_mean_abs_index(alloc, axis):
    g = alloc.union_mask().reshape(GRID.M, GRID.N, order="F")
    m_idx = np.abs(np.arange(-GRID.M // 2, GRID.M // 2))
    n_idx = np.abs(np.arange(-GRID.N // 2, GRID.N // 2))
    if axis == "freq":
        per = g.sum(axis=1).astype(float)
        return (per * m_idx).sum() / per.sum()
    per = g.sum(axis=0).astype(float)
    return (per * n_idx).sum() / per.sum()


def test_extreme_doppler_weight_spreads_time_aperture():
    # all weight on Doppler -> push energy to large |symbol index|
    cfg = single_ue_config(eps_tau=0.0, eps_nu=1.0, mu=0.25, eta_bar=0.0)
    sol = solve_tf(cfg, BnbLimits(max_nodes=600, max_time=60.0))
    grid_mean = np.abs(np.arange(-4, 4)).mean()
    assert _allocated_mean_abs_index(sol.allocation, "time") > grid_mean


def test_extreme_delay_weight_spreads_frequency_aperture():
    cfg = single_ue_config(eps_tau=1.0, eps_nu=0.0, mu=0.25, eta_bar=0.0)
    sol = solve_tf(cfg, BnbLimits(max_nodes=600, max_time=60.0))
    grid_mean = np.abs(np.arange(-4, 4)).mean()
    assert _allocated_mean_abs_index(sol.allocation, "freq") > grid_mean


# ---------------------------------------------------------------------------
# validation + determinism
# ---------------------------------------------------------------------------

def test_validator_flags_hand_built_violations():
    cfg = two_ue_config()
    masks = np.zeros((2, 64), dtype=bool)
    masks[0, :40] = True   # 40 > mu*M*N = 32 resources
    masks[1, 40:48] = True
    energies = np.where(masks, 5.0, 0.0)   # exceeds sigma_max_sq = 4
    alloc = Allocation(masks=masks, energies=energies, M=8, N=8, n_b=1)
    bad = DesignSolution(mode="tfe", status="optimal", allocation=alloc,
                         objective_exact=0.0, objective_model=0.0,
                         objective_bound=0.0, gap=0.0, node_count=0,
                         solve_time=0.0)
    rep = validate_solution(bad, cfg)
    assert "occupancy" in rep.violations
    assert "energy_cap" in rep.violations
    assert not rep.ok


def test_returned_solutions_carry_clean_validation():
    sol = solve_tf(single_ue_config(), BnbLimits(max_nodes=600, max_time=60.0))
    assert sol.validation is not None and sol.validation.ok
    assert sol.crb is not None
    assert sol.objective_exact > 0


def test_determinism_repeated_solve():
    lims = BnbLimits(max_nodes=400, max_time=60.0)
    a = solve_tf(two_ue_config(), lims)
    b = solve_tf(two_ue_config(), lims)
    assert a.node_count == b.node_count
    assert a.objective_model == b.objective_model
    assert np.array_equal(a.allocation.masks, b.allocation.masks)
    np.testing.assert_allclose(a.allocation.energies, b.allocation.energies,
                               rtol=0, atol=0)
