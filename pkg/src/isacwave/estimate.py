"""Delay-Doppler mapping and target parameter extraction.

The time-frequency sensing channel maps to the delay-Doppler domain with a
unitary IDFT over subcarriers and DFT over symbols; targets then show up as
(Dirichlet-kernel) peaks at (tau/delay-resolution, nu/Doppler-resolution).
Peak positions are refined to sub-bin accuracy with separable 3-point
quadratic interpolation on the log-magnitude.

Bin conventions: the DD map is returned in standard DFT order, so delay bins
run 0..M-1 (nonnegative delays) and Doppler bins wrap, with j >= N/2 read as
j - N (negative Doppler).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .grid import GridParams

__all__ = [
    "dd_map", "dd_inverse", "dd_closed_form", "dirichlet_kernel",
    "estimate_targets", "EstimateResult", "pair_estimates",
    "cir_peak_sidelobe",
]


def _as_array(h) -> np.ndarray:
    data = getattr(h, "data", h)
    return np.asarray(data, dtype=np.complex128)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def dd_map(h) -> np.ndarray:
    """Map a time-frequency channel (centered indices) to delay-Doppler.

    Unitary pair: IDFT across subcarriers picks out delays, DFT across
    symbols picks out Dopplers; ifftshift first because the grid uses
    centered index conventions.  Frobenius norm is preserved exactly.
    """
    h = _as_array(h)
    shifted = np.fft.ifftshift(h, axes=(0, 1))
    return math.sqrt(h.shape[0]) * np.fft.ifft(
        np.fft.fft(shifted, axis=1) / math.sqrt(h.shape[1]), axis=0)


def dd_inverse(h_dd) -> np.ndarray:
    """Inverse of :func:`dd_map` (back to centered time-frequency samples)."""
    h_dd = _as_array(h_dd)
    tf = np.fft.ifft(np.fft.fft(h_dd, axis=0) / math.sqrt(h_dd.shape[0]),
                     axis=1) * math.sqrt(h_dd.shape[1])
    return np.fft.fftshift(tf, axes=(0, 1))


def dirichlet_kernel(x: np.ndarray, n: int) -> np.ndarray:
    """Periodic sinc D_n(x) = sin(pi x)/sin(pi x / n), D_n(0) = n.

    Evaluated stably: near the removable singularities (x = 0 mod n) the
    ratio is replaced by its limit n*cos(pi x)/cos(pi x / n).
    """
    x = np.asarray(x, dtype=float)
    num = np.sin(np.pi * x)
    den = np.sin(np.pi * x / n)
    near = np.abs(den) < 1e-9
    safe = np.where(near, 1.0, den)
    out = np.where(near, n * np.cos(np.pi * x) / np.cos(np.pi * x / n),
                   num / safe)
    return out


def dd_closed_form(targets, grid: GridParams) -> np.ndarray:
    """Full-occupancy delay-Doppler channel via Dirichlet kernels.

    Exact transform of the superposed steering structure under the centered
    index convention: per target, separable kernels
        (1/sqrt(MN)) * beta * e^{-j pi x/M} D_M(x) * e^{+j pi y/N} D_N(y)
    with x = i - tau/delay_res, y = j - nu/doppler_res.  The linear phases
    come from the centered-to-standard index shift; an on-grid target reduces
    to sqrt(MN)*beta at its bin.  Oracle for dd_map(sensing_channel(...)).
    """
    M, N = grid.M, grid.N
    i = np.arange(M)[:, None]
    j = np.arange(N)[None, :]
    out = np.zeros((M, N), dtype=np.complex128)
    for t in targets:
        x = i - t.tau / grid.delay_res
        y = j - t.nu / grid.doppler_res
        row = np.exp(-1j * np.pi * x / M) * dirichlet_kernel(x, M)
        col = np.exp(1j * np.pi * y / N) * dirichlet_kernel(y, N)
        out += (t.beta / math.sqrt(M * N)) * row * col
    return out


# ---------------------------------------------------------------------------
# peak search + refinement
# ---------------------------------------------------------------------------

@dataclass
class EstimateResult:
    """Estimated target parameters from a delay-Doppler map."""

    tau: np.ndarray
    nu: np.ndarray
    peaks: np.ndarray          # (n_found, 2) integer bin coordinates
    shortfall: bool = False    # fewer local maxima than requested targets


def _local_maxima(mag: np.ndarray) -> np.ndarray:
    """Bin coordinates of 8-neighbor (periodic) local maxima, strongest first.

    Plateau bins tie with >=, then near-duplicates (periodically adjacent
    bins) collapse onto the strongest representative.
    """
    peak = np.ones_like(mag, dtype=bool)
    for dm in (-1, 0, 1):
        for dn in (-1, 0, 1):
            if dm == 0 and dn == 0:
                continue
            peak &= mag >= np.roll(mag, (dm, dn), axis=(0, 1))
    # ignore numerical dust: bins many orders below the strongest peak are
    # not meaningful maxima (an exactly on-grid target leaves ~1e-14-relative
    # residue everywhere that would otherwise read as thousands of "peaks")
    cand = np.argwhere(peak & (mag > 1e-8 * mag.max()))
    if cand.size == 0:
        return cand.reshape(0, 2)
    order = np.lexsort((cand[:, 1], cand[:, 0], -mag[cand[:, 0], cand[:, 1]]))
    cand = cand[order]
    m, n = mag.shape
    kept = []
    for ij in cand:
        if any(min(abs(ij[0] - k[0]), m - abs(ij[0] - k[0])) <= 1
               and min(abs(ij[1] - k[1]), n - abs(ij[1] - k[1])) <= 1
               for k in kept):
            continue
        kept.append(ij)
    return np.array(kept)


_BIAS_MAPS: dict = {}


def _parabola_bias_map(n: int):
    """Forward map delta -> raw 3-point log-parabola output on a D_n kernel.

    The log-magnitude of the periodic sinc is not a parabola, so the 3-point
    fit is biased toward the bin center (e.g. true offset 0.30 reads as
    ~ 0.13).  The bias is deterministic and monotone-odd with fixed points at
    0 and +-0.5, so it is removed exactly by tabulating the forward map on
    the noiseless kernel and inverting by interpolation.
    """
    cached = _BIAS_MAPS.get(n)
    if cached is not None:
        return cached
    delta = np.linspace(0.0, 0.5, 2049)
    lm = np.log(np.abs(dirichlet_kernel(-1.0 - delta, n)))
    l0 = np.log(np.abs(dirichlet_kernel(-delta, n)))
    lp = np.log(np.abs(dirichlet_kernel(1.0 - delta, n)))
    raw = 0.5 * (lm - lp) / (lm - 2.0 * l0 + lp)
    raw[0] = 0.0
    raw = np.maximum.accumulate(raw)  # guard tiny numeric wiggles
    _BIAS_MAPS[n] = (raw, delta)
    return raw, delta


def _quad_refine(idx: int, axis_len: int, line: np.ndarray) -> float:
    """Sub-bin offset of a peak along one axis.

    3-point quadratic fit on the log-magnitude line, followed by kernel-based
    bias inversion (see _parabola_bias_map).  Falls back to 0 when the three
    samples are not concave (no meaningful vertex).
    """
    if axis_len < 4:
        return 0.0
    lm = line[(idx - 1) % axis_len]
    l0 = line[idx]
    lp = line[(idx + 1) % axis_len]
    den = lm - 2.0 * l0 + lp
    if den >= 0.0:
        return 0.0  # not concave: refinement is meaningless here
    raw = float(np.clip(0.5 * (lm - lp) / den, -0.5, 0.5))
    fwd, delta = _parabola_bias_map(axis_len)
    return float(math.copysign(np.interp(abs(raw), fwd, delta), raw))


def _correlation_terms(h_tf: np.ndarray, grid: GridParams, f_tau: float,
                       f_nu: float):
    """Matched-filter correlation C(f_tau, f_nu) and its first/second
    derivatives in normalized bin units.

    C = sum_{m,n} H[m,n] e^{+j2pi m f_tau/M} e^{-j2pi n f_nu/N} over centered
    indices; for a noiseless single target |C| peaks exactly at the true
    normalized delay/Doppler, so maximizing |C|^2 is the ML refinement of the
    coarse peak.
    """
    m = grid.m_idx.astype(float)
    n = grid.n_idx.astype(float)
    a1 = 2.0 * np.pi / grid.M
    a2 = 2.0 * np.pi / grid.N
    u = np.exp(1j * a1 * m * f_tau)
    v = np.exp(-1j * a2 * n * f_nu)
    y0 = h_tf.T @ u
    y1 = h_tf.T @ (m * u)
    y2 = h_tf.T @ (m * m * u)
    c = y0 @ v
    c_t = 1j * a1 * (y1 @ v)
    c_v = -1j * a2 * (y0 @ (n * v))
    c_tt = -a1 * a1 * (y2 @ v)
    c_vv = -a2 * a2 * (y0 @ (n * n * v))
    c_tv = a1 * a2 * (y1 @ (n * v))
    return c, np.array([c_t, c_v]), np.array([[c_tt, c_tv], [c_tv, c_vv]])


def _ml_polish(h_tf: np.ndarray, grid: GridParams, f_tau: float, f_nu: float,
               max_iter: int = 12) -> tuple:
    """Newton ascent of the correlation power |C|^2 from a sub-bin start.

    Safeguarded: steps are clamped to half a bin per axis, backtracked when
    they do not increase |C|^2, and the total excursion from the starting
    point is capped at one bin so the polish cannot jump to another peak.
    """
    f0 = np.array([f_tau, f_nu])
    f = f0.copy()
    c, g1, h2 = _correlation_terms(h_tf, grid, f[0], f[1])
    power = abs(c) ** 2
    for _ in range(max_iter):
        grad = 2.0 * np.real(np.conj(c) * g1)
        hess = 2.0 * np.real(np.outer(np.conj(g1), g1)
                             + np.conj(c) * h2)
        # Newton direction when the local model is concave, else gradient
        det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
        if hess[0, 0] < 0 and det > 0:
            step = -np.linalg.solve(hess, grad)
        else:
            scale = np.max(np.abs(grad))
            step = 0.1 * grad / scale if scale > 0 else np.zeros(2)
        step = np.clip(step, -0.5, 0.5)
        if np.max(np.abs(step)) < 1e-10:
            break
        accepted = False
        for _ in range(8):
            trial = np.clip(f + step, f0 - 1.0, f0 + 1.0)
            c_n, g1_n, h2_n = _correlation_terms(h_tf, grid, trial[0], trial[1])
            if abs(c_n) ** 2 >= power:
                f, c, g1, h2, power = trial, c_n, g1_n, h2_n, abs(c_n) ** 2
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return float(f[0]), float(f[1])


def estimate_targets(h_dd, n_targets: int, grid: GridParams,
                     polish: bool = True) -> EstimateResult:
    """Extract the n_targets strongest delay-Doppler peaks with refinement.

    Peaks are 8-neighbor periodic local maxima of |H_DD|.  Each peak gets a
    sub-bin offset from a debiased 3-point quadratic fit on log-magnitude,
    then (by default) a local ML polish: Newton ascent of the matched-filter
    correlation power evaluated on the full data, which is what brings the
    high-SNR RMSE down to the CRB instead of the interpolation noise floor.
    Doppler bins j >= N/2 wrap to negative shifts.  When the map has fewer
    local maxima than requested the result carries a shortfall flag and only
    the found peaks.
    """
    if n_targets < 1:
        raise ValueError("need at least one target")
    h_dd = _as_array(h_dd)
    mag = np.abs(h_dd)
    M, N = mag.shape
    peaks = _local_maxima(mag)
    shortfall = peaks.shape[0] < n_targets
    if shortfall:
        warnings.warn(f"found {peaks.shape[0]} local maxima, "
                      f"requested {n_targets}")
    peaks = peaks[:n_targets]
    logmag = np.log(np.maximum(mag, 1e-300))
    h_tf = dd_inverse(h_dd) if polish else None

    taus, nus = [], []
    for i, j in peaks:
        di = _quad_refine(i, M, logmag[:, j])
        dj = _quad_refine(j, N, logmag[i, :])
        j_signed = j - N if j >= N // 2 else j
        f_tau, f_nu = i + di, j_signed + dj
        if polish:
            f_tau, f_nu = _ml_polish(h_tf, grid, f_tau, f_nu)
        taus.append(f_tau * grid.delay_res)
        nus.append(f_nu * grid.doppler_res)
    return EstimateResult(tau=np.array(taus), nu=np.array(nus),
                          peaks=peaks, shortfall=shortfall)


def pair_estimates(tau_true, nu_true, tau_hat, nu_hat, grid: GridParams):
    """Match estimates to ground truth, minimizing total normalized distance.

    Distances live in resolution units (tau/delay_res, nu/doppler_res);
    the assignment is the Hungarian optimum.  Returns (order, distances)
    where order[k] indexes the estimate paired with true target k (-1 when
    there are fewer estimates than targets).
    """
    tt = np.asarray(tau_true, dtype=float) / grid.delay_res
    tn = np.asarray(nu_true, dtype=float) / grid.doppler_res
    et = np.asarray(tau_hat, dtype=float) / grid.delay_res
    en = np.asarray(nu_hat, dtype=float) / grid.doppler_res
    if et.size == 0:
        return np.full(tt.size, -1, dtype=int), np.full(tt.size, np.inf)
    cost = np.hypot(tt[:, None] - et[None, :], tn[:, None] - en[None, :])
    rows, cols = linear_sum_assignment(cost)
    order = np.full(tt.size, -1, dtype=int)
    dist = np.full(tt.size, np.inf)
    order[rows] = cols
    dist[rows] = cost[rows, cols]
    return order, dist


# ---------------------------------------------------------------------------
# sidelobe metric
# ---------------------------------------------------------------------------

def cir_peak_sidelobe(h_dd, guard: int = 1) -> float:
    """Peak sidelobe level (dB) of the delay cut through the strongest peak.

    Takes the |H_DD| column at the peak's Doppler bin, masks out the main
    lobe (peak bin +- guard, periodic), and reports
    20*log10(max sidelobe / peak).  More negative is better.
    """
    mag = np.abs(_as_array(h_dd))
    i0, j0 = np.unravel_index(np.argmax(mag), mag.shape)
    cut = mag[:, j0]
    m = cut.size
    keep = np.ones(m, dtype=bool)
    for d in range(-guard, guard + 1):
        keep[(i0 + d) % m] = False
    side = cut[keep]
    if side.size == 0 or cut[i0] == 0:
        return -math.inf
    ratio = side.max() / cut[i0]
    return float(20.0 * np.log10(max(ratio, 1e-300)))
