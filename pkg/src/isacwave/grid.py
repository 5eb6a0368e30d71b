"""Time-frequency resource grid, steering vectors, and channel synthesis.

The sensing geometry lives on an M x N grid of OFDM resources: M subcarriers
spaced delta_f apart and N symbols of duration T = 1/delta_f (total bandwidth
B = M*delta_f, burst length N*T).  Subcarrier indices m and symbol indices n
are centered,

    m in {-M/2, ..., M/2 - 1},      n in {-N/2, ..., N/2 - 1},

so a scatterer with round-trip delay tau and Doppler shift nu contributes
exp(j*2*pi*(nu*n*T - tau*m*delta_f)) at resource (m, n).

Vectorized per-resource quantities (energy vectors, masks, Fisher weight
maps) use column-major order throughout the package: flat index
l = row + M*col with the frequency index fastest (numpy order='F').
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GridParams",
    "Target",
    "CommPath",
    "Allocation",
    "ChannelMatrix",
    "steering_vectors",
    "sensing_channel",
    "comm_channel",
    "avg_channel_gain",
    "build_waveform",
    "simulate_rx",
]


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridParams:
    """OFDM resource-grid geometry and noise level.

    Attributes
    ----------
    M : int
        Number of subcarriers (even).
    N : int
        Number of OFDM symbols (even).
    delta_f : float
        Subcarrier spacing in Hz.  Symbol duration is T = 1/delta_f.
    noise_power : float
        Per-resource complex noise variance N0 (real/imag parts are each
        N0/2).
    """

    M: int
    N: int
    delta_f: float
    noise_power: float = 1.0

    def __post_init__(self):
        if self.M <= 0 or self.M % 2 or self.N <= 0 or self.N % 2:
            raise ValueError(f"grid dims must be positive and even, got {self.M}x{self.N}")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")

    @property
    def T(self) -> float:
        """OFDM symbol duration in seconds."""
        return 1.0 / self.delta_f

    @property
    def bandwidth(self) -> float:
        return self.M * self.delta_f

    @property
    def burst(self) -> float:
        """Total burst duration N*T."""
        return self.N * self.T

    @property
    def n_resources(self) -> int:
        return self.M * self.N

    @property
    def delay_res(self) -> float:
        """Delay resolution cell, 1/B."""
        return 1.0 / self.bandwidth

    @property
    def doppler_res(self) -> float:
        """Doppler resolution cell, 1/(N*T)."""
        return 1.0 / self.burst

    @cached_property
    def m_idx(self) -> np.ndarray:
        """Centered subcarrier indices (-M/2 .. M/2-1)."""
        return np.arange(-self.M // 2, self.M // 2)

    @cached_property
    def n_idx(self) -> np.ndarray:
        """Centered symbol indices (-N/2 .. N/2-1)."""
        return np.arange(-self.N // 2, self.N // 2)

    def unambiguous_delay(self) -> float:
        return 1.0 / self.delta_f

    def unambiguous_doppler(self) -> float:
        """Half-open Doppler interval edge: nu in [-1/(2T), 1/(2T))."""
        return 0.5 / self.T


@dataclass(frozen=True)
class Target:
    """Point scatterer: complex reflectivity, delay (s), Doppler (Hz)."""

    beta: complex
    tau: float
    nu: float

    def validate(self, grid: GridParams) -> None:
        if not (0.0 <= self.tau < grid.unambiguous_delay()):
            raise ValueError(
                f"delay {self.tau} outside [0, {grid.unambiguous_delay()})"
            )
        lim = grid.unambiguous_doppler()
        if not (-lim <= self.nu < lim):
            raise ValueError(f"doppler {self.nu} outside [{-lim}, {lim})")


@dataclass(frozen=True)
class CommPath:
    """One multipath component of a UE link.

    ``gain`` is the average path power Omega; per-realization amplitudes are
    drawn alpha ~ CN(0, Omega) by :func:`comm_channel`.
    """

    gain: float
    tau: float
    nu: float = 0.0


@dataclass
class ChannelMatrix:
    """M x N complex channel samples tagged with their domain.

    domain is "tf" for time-frequency samples, "dd" for delay-Doppler bins.
    """

    data: np.ndarray
    domain: str = "tf"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if self.domain not in ("tf", "dd"):
            raise ValueError(f"unknown domain {self.domain!r}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Allocation:
    """Per-UE resource masks and energies on the flattened grid.

    masks : (K, L) bool -- a_k, orthogonal across UEs (at most one UE per
        resource).
    energies : (K, L) float -- per-resource energy e_k in joule; nonzero only
        where the corresponding mask is set.
    n_b : int -- edge size of the square resource blocks the design was made
        at (1 = per-resource granularity).
    """

    masks: np.ndarray
    energies: np.ndarray
    M: int
    N: int
    n_b: int = 1

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        self.energies = np.asarray(self.energies, dtype=np.float64)
        if self.masks.ndim != 2 or self.masks.shape != self.energies.shape:
            raise ValueError("masks and energies must both be (K, L)")
        if self.masks.shape[1] != self.M * self.N:
            raise ValueError("mask length != M*N")
        if (self.masks.sum(axis=0) > 1).any():
            raise ValueError("resource assigned to more than one UE")
        if (self.energies < -1e-12).any():
            raise ValueError("negative energy")
        if (self.energies[~self.masks] > 1e-12 * max(self.energies.max(), 1.0)).any():
            raise ValueError("energy on unallocated resource")
        self.energies = np.where(self.masks, np.maximum(self.energies, 0.0), 0.0)

    @property
    def n_ue(self) -> int:
        return self.masks.shape[0]

    @property
    def total_energy_vector(self) -> np.ndarray:
        """Combined energy over UEs, length L (this is what sensing sees)."""
        return self.energies.sum(axis=0)

    @property
    def total_energy(self) -> float:
        return float(self.energies.sum())

    @property
    def occupancy(self) -> float:
        """Fraction of grid resources assigned to any UE."""
        return float(self.masks.sum()) / self.masks.shape[1]

    def union_mask(self) -> np.ndarray:
        return self.masks.any(axis=0)

    def mask_grid(self) -> np.ndarray:
        """Union mask reshaped to (M, N)."""
        return self.union_mask().reshape(self.M, self.N, order="F")

    def energy_grid(self) -> np.ndarray:
        return self.total_energy_vector.reshape(self.M, self.N, order="F")


# ---------------------------------------------------------------------------
# steering vectors and channels
# ---------------------------------------------------------------------------

def steering_vectors(grid: GridParams, tau: float, nu: float):
    """Frequency- and time-domain steering vectors of a (tau, nu) scatterer.

    Returns (d_tau, d_nu) with
        d_tau[m] = exp(-j*2*pi*m*delta_f*tau)   over centered m,
        d_nu[n]  = exp(+j*2*pi*n*T*nu)          over centered n,
    so the first entry of d_tau is exp(+j*pi*M*delta_f*tau) and the entry at
    m = 0 is 1.
    """
    d_tau = np.exp(-2j * np.pi * grid.m_idx * grid.delta_f * tau)
    d_nu = np.exp(2j * np.pi * grid.n_idx * grid.T * nu)
    return d_tau, d_nu


def sensing_channel(grid: GridParams, targets) -> np.ndarray:
    """Superposition sensing channel H[m, n] = sum_k beta_k * exp(j*2*pi*(nu_k*n*T - tau_k*m*delta_f)).

    Row index runs over centered subcarriers, column index over centered
    symbols.  Rank is at most the number of targets.
    """
    h = np.zeros((grid.M, grid.N), dtype=np.complex128)
    for t in targets:
        t.validate(grid)
        d_tau, d_nu = steering_vectors(grid, t.tau, t.nu)
        h += t.beta * np.outer(d_tau, d_nu)
    return h


def comm_channel(grid: GridParams, paths, rng: np.random.Generator) -> np.ndarray:
    """One realization of a UE's multipath channel.

    Path amplitudes are drawn alpha ~ CN(0, gain); geometry follows the same
    steering structure as the sensing channel.
    """
    h = np.zeros((grid.M, grid.N), dtype=np.complex128)
    for p in paths:
        scale = np.sqrt(p.gain / 2.0)
        alpha = rng.normal(scale=scale) + 1j * rng.normal(scale=scale)
        d_tau, d_nu = steering_vectors(grid, p.tau, p.nu)
        h += alpha * np.outer(d_tau, d_nu)
    return h


def avg_channel_gain(paths) -> float:
    """Average per-resource channel power: E[|h|^2] = sum of path gains.

    Steering factors are unit modulus, so E[||H||_F^2] / L reduces to the sum
    of the average path powers.
    """
    return float(sum(p.gain for p in paths))


# ---------------------------------------------------------------------------
# waveform and received signal
# ---------------------------------------------------------------------------

def _qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-modulus QPSK symbols, Gray axes (+-1 +-j)/sqrt(2)."""
    bits = rng.integers(0, 2, size=(2,) + tuple(shape))
    re = 2.0 * bits[0] - 1.0
    im = 2.0 * bits[1] - 1.0
    return (re + 1j * im) / np.sqrt(2.0)


def build_waveform(grid: GridParams, alloc: Allocation, rng: np.random.Generator) -> np.ndarray:
    """Transmit grid X with |X[m,n]|^2 equal to the allocated energy.

    X = sqrt(e) .* s on allocated resources (s unit-modulus QPSK), zero
    elsewhere, so ||X||_F^2 == alloc.total_energy exactly.
    """
    e = alloc.energy_grid()
    s = _qpsk(rng, e.shape)
    return np.sqrt(e) * s * alloc.mask_grid()


def simulate_rx(x: np.ndarray, h: np.ndarray, grid: GridParams,
                rng: np.random.Generator) -> np.ndarray:
    """Received grid R = X .* H + W with W i.i.d. CN(0, noise_power)."""
    if x.shape != h.shape:
        raise ValueError("waveform/channel shape mismatch")
    sigma = np.sqrt(grid.noise_power / 2.0)
    w = rng.normal(scale=sigma, size=x.shape) + 1j * rng.normal(scale=sigma, size=x.shape)
    return x * h + w
