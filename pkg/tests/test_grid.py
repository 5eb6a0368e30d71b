import numpy as np
import pytest

from isacwave.grid import (
    Allocation,
    CommPath,
    GridParams,
    Target,
    avg_channel_gain,
    build_waveform,
    comm_channel,
    sensing_channel,
    simulate_rx,
    steering_vectors,
)


def small_grid(M=8, N=8, delta_f=1e6, noise_power=1.0):
    return GridParams(M=M, N=N, delta_f=delta_f, noise_power=noise_power)


def uniform_alloc(grid, energy_per_bin=1.0):
    L = grid.n_resources
    masks = np.ones((1, L), dtype=bool)
    energies = np.full((1, L), energy_per_bin)
    return Allocation(masks=masks, energies=energies, M=grid.M, N=grid.N)


# ---------------------------------------------------------------------------
# steering vectors
# ---------------------------------------------------------------------------

def test_steering_quarter_cycle_values():
    # M = 4 and tau equal to one delay-resolution cell: one full cycle across
    # the band, sampled at the centered subcarriers -> [-1, j, 1, -j].
    grid = GridParams(M=4, N=4, delta_f=1e6)
    tau = 1.0 / (grid.M * grid.delta_f)
    d_tau, _ = steering_vectors(grid, tau, 0.0)
    np.testing.assert_allclose(d_tau, [-1.0, 1j, 1.0, -1j], atol=1e-12)


def test_steering_endpoints_and_modulus():
    rng = np.random.default_rng(7)
    for _ in range(20):
        M = 2 * rng.integers(2, 16)
        N = 2 * rng.integers(2, 16)
        grid = GridParams(M=int(M), N=int(N), delta_f=1e6)
        tau = rng.uniform(0, grid.unambiguous_delay())
        nu = rng.uniform(-grid.unambiguous_doppler(), grid.unambiguous_doppler())
        d_tau, d_nu = steering_vectors(grid, tau, nu)
        assert d_tau.shape == (grid.M,) and d_nu.shape == (grid.N,)
        np.testing.assert_allclose(np.abs(d_tau), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(d_nu), 1.0, atol=1e-12)
        # leading entry at m = -M/2 and the unit sample at m = 0
        np.testing.assert_allclose(
            d_tau[0], np.exp(1j * np.pi * grid.M * grid.delta_f * tau), atol=1e-12)
        np.testing.assert_allclose(d_tau[grid.M // 2], 1.0, atol=1e-12)
        np.testing.assert_allclose(
            d_nu[0], np.exp(-1j * np.pi * grid.N * grid.T * nu), atol=1e-12)


# ---------------------------------------------------------------------------
# sensing channel
# ---------------------------------------------------------------------------

def test_sensing_channel_matches_elementwise_formula():
    grid = small_grid()
    rng = np.random.default_rng(3)
    targets = [
        Target(beta=complex(rng.normal(), rng.normal()),
               tau=rng.uniform(0, grid.unambiguous_delay()),
               nu=rng.uniform(-grid.unambiguous_doppler(), grid.unambiguous_doppler()))
        for _ in range(3)
    ]
    h = sensing_channel(grid, targets)
    # independent elementwise evaluation
    ref = np.zeros((grid.M, grid.N), dtype=complex)
    for r, m in enumerate(grid.m_idx):
        for c, n in enumerate(grid.n_idx):
            for t in targets:
                ref[r, c] += t.beta * np.exp(
                    2j * np.pi * (t.nu * n * grid.T - t.tau * m * grid.delta_f))
    np.testing.assert_allclose(h, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_sensing_channel_rank_at_most_k(k):
    grid = small_grid(M=16, N=16)
    rng = np.random.default_rng(11 + k)
    targets = [
        Target(beta=1.0 + 0.2j * i,
               tau=rng.uniform(0, grid.unambiguous_delay()),
               nu=rng.uniform(-grid.unambiguous_doppler(), grid.unambiguous_doppler()))
        for i in range(k)
    ]
    s = np.linalg.svd(sensing_channel(grid, targets), compute_uv=False)
    assert (s[k:] < 1e-9 * s[0]).all()


def test_target_validation_raises():
    grid = small_grid()
    with pytest.raises(ValueError):
        Target(beta=1.0, tau=-1e-9, nu=0.0).validate(grid)
    with pytest.raises(ValueError):
        Target(beta=1.0, tau=grid.unambiguous_delay(), nu=0.0).validate(grid)
    with pytest.raises(ValueError):
        Target(beta=1.0, tau=0.0, nu=grid.unambiguous_doppler()).validate(grid)


# ---------------------------------------------------------------------------
# allocation container
# ---------------------------------------------------------------------------

def test_allocation_rejects_overlap_and_stray_energy():
    grid = small_grid()
    L = grid.n_resources
    masks = np.zeros((2, L), dtype=bool)
    masks[0, :4] = True
    masks[1, 3] = True  # overlaps UE 0
    with pytest.raises(ValueError):
        Allocation(masks=masks, energies=np.where(masks, 1.0, 0.0),
                   M=grid.M, N=grid.N)

    masks[1, 3] = False
    energies = np.where(masks, 1.0, 0.0)
    energies[1, 10] = 0.5  # energy on an unallocated resource
    with pytest.raises(ValueError):
        Allocation(masks=masks, energies=energies, M=grid.M, N=grid.N)


def test_allocation_aggregates():
    grid = small_grid()
    L = grid.n_resources
    masks = np.zeros((2, L), dtype=bool)
    masks[0, :10] = True
    masks[1, 20:25] = True
    energies = np.where(masks, 2.0, 0.0)
    alloc = Allocation(masks=masks, energies=energies, M=grid.M, N=grid.N)
    assert alloc.occupancy == pytest.approx(15 / L)
    assert alloc.total_energy == pytest.approx(30.0)
    np.testing.assert_array_equal(alloc.union_mask(), masks.any(axis=0))
    # order='F' reshape round trip
    np.testing.assert_array_equal(
        alloc.energy_grid().ravel(order="F"), alloc.total_energy_vector)


# ---------------------------------------------------------------------------
# waveform / receiver
# ---------------------------------------------------------------------------

def test_waveform_energy_accounting():
    grid = small_grid()
    rng = np.random.default_rng(5)
    L = grid.n_resources
    masks = np.zeros((2, L), dtype=bool)
    masks[0, rng.choice(L, 12, replace=False)] = True
    free = np.where(~masks[0])[0]
    masks[1, rng.choice(free, 9, replace=False)] = True
    energies = np.where(masks, rng.uniform(0.5, 2.0, size=(2, L)), 0.0)
    alloc = Allocation(masks=masks, energies=energies, M=grid.M, N=grid.N)
    x = build_waveform(grid, alloc, rng)
    assert np.linalg.norm(x) ** 2 == pytest.approx(alloc.total_energy, rel=1e-12)
    # per-resource magnitude equals allocated energy; empty resources silent
    np.testing.assert_allclose(
        (np.abs(x) ** 2).ravel(order="F"), alloc.total_energy_vector, atol=1e-12)


def test_rx_noise_statistics():
    grid = small_grid(M=64, N=64, noise_power=0.25)
    rng = np.random.default_rng(17)
    x = np.zeros((grid.M, grid.N), dtype=complex)
    h = np.zeros_like(x)
    r = simulate_rx(x, h, grid, rng)
    # 4096 samples: mean ~ N(0, N0/L), per-entry variance ~ N0
    assert abs(r.mean()) < 5 * np.sqrt(grid.noise_power / r.size)
    assert np.var(r.real) == pytest.approx(grid.noise_power / 2, rel=0.1)
    assert np.var(r.imag) == pytest.approx(grid.noise_power / 2, rel=0.1)
    assert np.mean(np.abs(r) ** 2) == pytest.approx(grid.noise_power, rel=0.1)


def test_rx_is_seed_deterministic():
    grid = small_grid()
    alloc = uniform_alloc(grid)
    h = sensing_channel(grid, [Target(beta=1.0, tau=1e-7, nu=1e3)])
    x1 = build_waveform(grid, alloc, np.random.default_rng(42))
    x2 = build_waveform(grid, alloc, np.random.default_rng(42))
    np.testing.assert_array_equal(x1, x2)
    r1 = simulate_rx(x1, h, grid, np.random.default_rng(1))
    r2 = simulate_rx(x2, h, grid, np.random.default_rng(1))
    np.testing.assert_array_equal(r1, r2)


# ---------------------------------------------------------------------------
# comm channel
# ---------------------------------------------------------------------------

def test_comm_channel_average_power():
    grid = small_grid()
    paths = [CommPath(gain=0.7, tau=2e-7), CommPath(gain=0.3, tau=5e-7, nu=200.0)]
    assert avg_channel_gain(paths) == pytest.approx(1.0)
    rng = np.random.default_rng(23)
    acc = 0.0
    trials = 400
    for _ in range(trials):
        h = comm_channel(grid, paths, rng)
        acc += np.mean(np.abs(h) ** 2)
    # loose CLT band around the analytic mean power
    assert acc / trials == pytest.approx(avg_channel_gain(paths), rel=0.15)
