"""Fisher information and Cramer-Rao bounds for multi-target delay-Doppler estimation.

Everything the estimation-theoretic side needs is linear in the per-resource
energy vector e: each Fisher-information matrix entry is an inner product
e^T w with a fixed real weight map w determined by the target geometry.  This
module computes those weight maps, assembles FIM blocks, and inverts them into
CRBs, with a closed-form fast path for the two-target case used by the
resource optimizer.

Conventions
-----------
Weight maps are stored as (M, N) real arrays on the grid (frequency index
first); flattening uses order='F' like the rest of the package.  The mixed
delay-Doppler block is stored with the positive sign convention
(+4*pi^2*delta_f*T*m*n*...); the overall sign of that block is immaterial --
flipping it is a diag(I, -I) similarity of the full FIM, so CRBs and
positive-semidefiniteness are unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridParams

__all__ = [
    "CrbSingularError",
    "FisherWeights",
    "fisher_weights",
    "fisher_blocks",
    "CrbReport",
    "crb_general",
    "TwoTargetClosedForm",
    "crb_two_target_closed",
    "weighted_crb_objective",
]

#: condition-number ceiling beyond which a FIM block is treated as singular
COND_LIMIT = 1e12

#: relative tolerance of the Schur-vs-full-inverse cross check
CROSS_CHECK_RTOL = 1e-9


class CrbSingularError(Exception):
    """Raised when the FIM cannot be inverted at working precision."""


# ---------------------------------------------------------------------------
# per-resource Fisher weight maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FisherWeights:
    """Per-resource FIM weight maps for every target pair.

    Attributes
    ----------
    delay, doppler, cross : (K, K, M, N) float arrays
        Weight maps w such that the corresponding FIM entry is sum(e * w).
        ``cross`` holds the (doppler_k, delay_l) mixed block.  All three are
        symmetric in the pair indices.
    """

    delay: np.ndarray
    doppler: np.ndarray
    cross: np.ndarray

    @property
    def n_targets(self) -> int:
        return self.delay.shape[0]


def fisher_weights(grid: GridParams, targets) -> FisherWeights:
    """Weight maps for the FIM of (tau_1..tau_K, nu_1..nu_K) estimation.

    For targets k, l the maps are

        delay[k,l][m,n]   = (8 pi^2 delta_f^2 / N0) * Re{beta_k conj(beta_l)
                             * m^2 * p_kl[m] * q_kl[n]}
        doppler[k,l][m,n] = (8 pi^2 T^2 / N0)       * Re{... * n^2 * ...}
        cross[k,l][m,n]   = (8 pi^2 delta_f T / N0) * Re{... * m * n * ...}

    with p_kl[m] = exp(-j*2*pi*m*delta_f*(tau_k - tau_l)) and
    q_kl[n] = exp(+j*2*pi*n*T*(nu_k - nu_l)) the pairwise phase rotations.
    """
    K = len(targets)
    m = grid.m_idx.astype(np.float64)
    n = grid.n_idx.astype(np.float64)
    base = 8.0 * np.pi**2 / grid.noise_power
    c_tau = base * grid.delta_f**2
    c_nu = base * grid.T**2
    c_x = base * grid.delta_f * grid.T

    delay = np.empty((K, K, grid.M, grid.N))
    doppler = np.empty((K, K, grid.M, grid.N))
    cross = np.empty((K, K, grid.M, grid.N))
    for k in range(K):
        for l in range(K):
            tk, tl = targets[k], targets[l]
            amp = tk.beta * np.conj(tl.beta)
            p = np.exp(-2j * np.pi * m * grid.delta_f * (tk.tau - tl.tau))
            q = np.exp(2j * np.pi * n * grid.T * (tk.nu - tl.nu))
            phase = np.outer(p, q)
            delay[k, l] = c_tau * np.real(amp * phase) * (m**2)[:, None]
            doppler[k, l] = c_nu * np.real(amp * phase) * (n**2)[None, :]
            cross[k, l] = c_x * np.real(amp * phase) * np.outer(m, n)
    return FisherWeights(delay=delay, doppler=doppler, cross=cross)


def _energy_grid(e, grid: GridParams) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 1:
        if e.size != grid.n_resources:
            raise ValueError("energy vector length != M*N")
        return e.reshape(grid.M, grid.N, order="F")
    if e.shape != (grid.M, grid.N):
        raise ValueError("energy grid shape mismatch")
    return e


def fisher_blocks(weights: FisherWeights, e, grid: GridParams):
    """FIM blocks (F_tau, F_nu, F_cross) for energy allocation e.

    e may be a length-L vector (order='F') or an (M, N) grid.  Each entry is
    the inner product of e with the corresponding weight map; the delay and
    Doppler blocks are symmetric K x K matrices, ``F_cross`` is the mixed
    (doppler, delay) block.
    """
    eg = _energy_grid(e, grid)
    f_tau = np.tensordot(weights.delay, eg, axes=([2, 3], [0, 1]))
    f_nu = np.tensordot(weights.doppler, eg, axes=([2, 3], [0, 1]))
    f_cross = np.tensordot(weights.cross, eg, axes=([2, 3], [0, 1]))
    # enforce exact symmetry against roundoff: the maps are pair-symmetric
    f_tau = 0.5 * (f_tau + f_tau.T)
    f_nu = 0.5 * (f_nu + f_nu.T)
    f_cross = 0.5 * (f_cross + f_cross.T)
    return f_tau, f_nu, f_cross


# ---------------------------------------------------------------------------
# CRBs, generic path
# ---------------------------------------------------------------------------

@dataclass
class CrbReport:
    """FIM blocks and the resulting delay/Doppler CRB matrices."""

    f_tau: np.ndarray
    f_nu: np.ndarray
    f_cross: np.ndarray
    c_tau: np.ndarray
    c_nu: np.ndarray
    cond_fim: float

    @property
    def trace_tau(self) -> float:
        return float(np.trace(self.c_tau))

    @property
    def trace_nu(self) -> float:
        return float(np.trace(self.c_nu))

    def full_fim(self) -> np.ndarray:
        return np.block([[self.f_tau, self.f_cross.T], [self.f_cross, self.f_nu]])

    def to_dict(self) -> dict:
        return {
            "f_tau": self.f_tau.tolist(),
            "f_nu": self.f_nu.tolist(),
            "f_cross": self.f_cross.tolist(),
            "c_tau": self.c_tau.tolist(),
            "c_nu": self.c_nu.tolist(),
            "cond_fim": self.cond_fim,
            "trace_tau": self.trace_tau,
            "trace_nu": self.trace_nu,
        }


def _checked_inv(a: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise CrbSingularError(
            f"FIM singular: targets unresolvable under this allocation ({what} condition {cond:.3e})"
        )
    return np.linalg.inv(a)


def crb_general(weights: FisherWeights, e, grid: GridParams,
                cross_check: bool = True) -> CrbReport:
    """Delay/Doppler CRBs via Schur complements of the full FIM.

        C_tau = (F_tau - F_cross^T F_nu^-1 F_cross)^-1
        C_nu  = (F_nu  - F_cross F_tau^-1 F_cross^T)^-1

    Inversions and condition checks run in resolution-normalized units
    (delays in delay_res cells, Dopplers in doppler_res cells): raw delay and
    Doppler FIM entries differ by ~(delta_f^2 * burst^2) purely through
    units, which would otherwise swamp the singularity test.  ``cond_fim`` is
    the condition number of that normalized full FIM.

    With ``cross_check`` the Schur results are verified against the
    corresponding diagonal blocks of the full 2K x 2K FIM inverse to 1e-9
    relative (cheap for the K this package deals with; disable only in hot
    loops).
    """
    f_tau, f_nu, f_cross = fisher_blocks(weights, e, grid)
    k = f_tau.shape[0]
    st, sn = grid.delay_res, grid.doppler_res
    nf_tau = f_tau * st * st
    nf_nu = f_nu * sn * sn
    nf_cross = f_cross * st * sn
    full = np.block([[nf_tau, nf_cross.T], [nf_cross, nf_nu]])
    cond_full = float(np.linalg.cond(full))
    if not np.isfinite(cond_full) or cond_full > COND_LIMIT:
        raise CrbSingularError(
            f"FIM singular: targets unresolvable under this allocation (condition {cond_full:.3e})"
        )
    inv_nu = _checked_inv(nf_nu, "doppler block")
    inv_tau = _checked_inv(nf_tau, "delay block")
    c_tau = st * st * _checked_inv(
        nf_tau - nf_cross.T @ inv_nu @ nf_cross, "delay Schur complement")
    c_nu = sn * sn * _checked_inv(
        nf_nu - nf_cross @ inv_tau @ nf_cross.T, "doppler Schur complement")

    if cross_check:
        full_inv = np.linalg.inv(full)
        for got, ref, name in ((c_tau, st * st * full_inv[:k, :k], "delay"),
                               (c_nu, sn * sn * full_inv[k:, k:], "doppler")):
            err = np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)
            if err > CROSS_CHECK_RTOL:
                raise RuntimeError(
                    f"Schur-path {name} CRB disagrees with full FIM inverse "
                    f"(relative error {err:.3e})"
                )
    return CrbReport(f_tau=f_tau, f_nu=f_nu, f_cross=f_cross,
                     c_tau=c_tau, c_nu=c_nu, cond_fim=cond_full)


# ---------------------------------------------------------------------------
# two-target closed form (equal-reflectivity regime)
# ---------------------------------------------------------------------------

@dataclass
class TwoTargetClosedForm:
    """Closed-form two-target Schur entries and CRB diagonals.

    Valid when the two reflectivities have (near-)equal magnitude, which makes
    the self-coupling FIM entries of the two targets coincide.  ``c_tau_diag``
    / ``c_nu_diag`` are the common diagonal values of the 2x2 CRB matrices.
    """

    j_tau_diag: float
    j_tau_off: float
    j_nu_diag: float
    j_nu_off: float
    c_tau_diag: float
    c_nu_diag: float

    @property
    def trace_tau(self) -> float:
        return 2.0 * self.c_tau_diag

    @property
    def trace_nu(self) -> float:
        return 2.0 * self.c_nu_diag


def _closed_schur(t11, t12, b11, b12, g11, g12):
    """Schur-complement entries for one parameter pair.

    t: direct block sums of the parameter of interest, b: direct block sums of
    the nuisance parameter, g: mixed sums.  Returns (J11, J12).
    """
    den = b11 * b11 - b12 * b12
    if abs(den) <= 1e-14 * max(b11 * b11, 1e-300):
        raise CrbSingularError(
            "FIM singular: targets unresolvable under this allocation "
            "(nuisance block degenerate in closed form)"
        )
    j11 = t11 - (g11 * g11 * b11 - 2.0 * g12 * b12 * g11 + g12 * g12 * b11) / den
    j12 = t12 - (2.0 * g11 * g12 * b11 - g11 * g11 * b12 - g12 * g12 * b12) / den
    return j11, j12


def crb_two_target_closed(weights: FisherWeights, e, grid: GridParams) -> TwoTargetClosedForm:
    """Two-target CRB diagonals from the closed-form Schur expressions.

    Exact whenever |beta_1| == |beta_2| (then the two self-coupling FIM
    entries coincide and the generic Schur complement collapses to these
    rational expressions); an approximation otherwise.
    """
    if weights.n_targets != 2:
        raise ValueError("closed form is defined for exactly two targets")
    f_tau, f_nu, f_cross = fisher_blocks(weights, e, grid)
    t11, t12 = f_tau[0, 0], f_tau[0, 1]
    n11, n12 = f_nu[0, 0], f_nu[0, 1]
    g11, g12 = f_cross[0, 0], f_cross[0, 1]

    j_tau_diag, j_tau_off = _closed_schur(t11, t12, n11, n12, g11, g12)
    j_nu_diag, j_nu_off = _closed_schur(n11, n12, t11, t12, g11, g12)

    out = []
    for jd, jo, what in ((j_tau_diag, j_tau_off, "delay"),
                         (j_nu_diag, j_nu_off, "doppler")):
        det = jd * jd - jo * jo
        if det <= 1e-14 * max(jd * jd, 1e-300):
            raise CrbSingularError(
                f"FIM singular: targets unresolvable under this allocation "
                f"({what} closed-form determinant {det:.3e})"
            )
        out.append(jd / det)
    return TwoTargetClosedForm(
        j_tau_diag=j_tau_diag, j_tau_off=j_tau_off,
        j_nu_diag=j_nu_diag, j_nu_off=j_nu_off,
        c_tau_diag=out[0], c_nu_diag=out[1],
    )


# ---------------------------------------------------------------------------
# scalarized design objective
# ---------------------------------------------------------------------------

def weighted_crb_objective(trace_tau: float, trace_nu: float,
                           eps_tau: float, eps_nu: float,
                           grid: GridParams) -> float:
    """Weighted CRB objective, traces normalized by the resolution cells:

        eps_tau * tr(C_tau)/delay_res^2 + eps_nu * tr(C_nu)/doppler_res^2
    """
    if eps_tau < 0 or eps_nu < 0:
        raise ValueError("objective weights must be nonnegative")
    return (eps_tau * trace_tau / grid.delay_res**2
            + eps_nu * trace_nu / grid.doppler_res**2)
