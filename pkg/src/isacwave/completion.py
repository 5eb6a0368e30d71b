"""Masked sensing-channel estimation and low-rank matrix completion.

The estimation pipeline observes the sensing channel only on allocated
resource bins; everything downstream (delay-Doppler mapping, peak search)
wants the full grid.  This module provides:

* per-bin least-squares channel estimation on the allocated mask,
* Schatten p-quasi-norm completion via iterative singular value thresholding
  (nonconvex rank surrogate; p = 1 is the nuclear norm),
* the linear time/frequency interpolation baseline,
* recoverability diagnostics (isomeric condition, relative condition number)
  and the spectral-norm completion-error metric.

Conventions: channels are M x N complex arrays (or ChannelMatrix wrappers)
with rows indexed by subcarrier and columns by OFDM symbol; masks are boolean
arrays of the same shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MaskedChannel", "CompletionConfig", "RecoveryDiagnostics",
    "ls_estimate", "schatten_complete", "linear_complete",
    "recovery_diagnostics", "completion_error", "schatten_value",
]

_ERROR_FLOOR_DB = -300.0


def _as_array(h) -> np.ndarray:
    data = getattr(h, "data", h)
    return np.asarray(data, dtype=np.complex128)


def _as_mask(mask, shape) -> np.ndarray:
    a = np.asarray(mask)
    if a.shape != shape:
        raise ValueError(f"mask shape {a.shape} != channel shape {shape}")
    return a.astype(bool)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class MaskedChannel:
    """Channel samples observed on a subset of the resource grid.

    ``estimate`` holds the per-bin values and is forced to zero wherever
    ``mask`` is False, so the zero-filled matrix can be used directly as the
    completion starting point.
    """

    estimate: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.estimate = np.asarray(self.estimate, dtype=np.complex128)
        self.mask = _as_mask(self.mask, self.estimate.shape)
        self.estimate = np.where(self.mask, self.estimate, 0.0)

    @property
    def degenerate(self) -> bool:
        """True when no bin is observed at all."""
        return not self.mask.any()

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass
class CompletionConfig:
    """Knobs of the Schatten-p completion iteration.

    epsilon is the spectral-norm data-fidelity radius; None derives it from
    the expected spectral norm of the masked noise, sqrt(N0 * count/(M N)) *
    (sqrt(M) + sqrt(N)) (Frobenius-based radii are far too loose for a
    spectral ball and let the shrinkage collapse true components).
    threshold_schedule is (initial fraction of sigma_1, geometric decay per
    iteration); the threshold decays to a negligible floor, with epsilon
    acting only through the data-fidelity step.
    """

    p: float = 0.1
    epsilon: float | None = None
    noise_power: float = 0.0
    max_iter: int = 500
    rel_tol: float = 1e-7
    threshold_schedule: tuple = (0.9, 0.95)

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.noise_power < 0:
            raise ValueError("noise_power must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        frac, decay = self.threshold_schedule
        if not 0.0 < frac or not 0.0 < decay <= 1.0:
            raise ValueError("bad threshold schedule")

    def resolve_epsilon(self, mask) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        mask = np.asarray(mask)
        mu = float(np.sum(mask)) / mask.size
        m, n = mask.shape
        return math.sqrt(self.noise_power * mu) * (math.sqrt(m) + math.sqrt(n))


@dataclass
class RecoveryDiagnostics:
    """Recoverability indicators of a (channel, mask) pair.

    kappa is the squared spectral norm of (H o A) H^+, minimized over the
    mask and its transpose (equal to 1 at full observation, where the product
    is the orthogonal projector); kappa_smin is the smallest-relevant-
    singular-value variant ("stays away from zero"), reported alongside since
    the two measure different failure modes.  rank_masked_row/col follow the
    semantics chosen at the recovery_diagnostics call.
    """

    rank_full: int
    rank_masked_row: int
    rank_masked_col: int
    kappa: float
    kappa_smin: float
    isomeric: bool

    def rows(self) -> list:
        """Structured text rows for logs/CSV sidecars."""
        return [
            ("rank_full", str(self.rank_full)),
            ("rank_masked_row", str(self.rank_masked_row)),
            ("rank_masked_col", str(self.rank_masked_col)),
            ("kappa", f"{self.kappa:.6g}"),
            ("kappa_smin", f"{self.kappa_smin:.6g}"),
            ("isomeric", str(self.isomeric)),
        ]


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def ls_estimate(received, waveform, mask) -> MaskedChannel:
    """Per-bin least squares H[m,n] = R[m,n]/X[m,n] on the allocated mask.

    Off-mask bins are zero.  A zero waveform sample on an allocated bin is a
    bookkeeping bug in the caller, not a numerical corner, hence the error.
    """
    r = _as_array(received)
    x = _as_array(waveform)
    if r.shape != x.shape:
        raise ValueError("received/waveform shape mismatch")
    a = _as_mask(mask, r.shape)
    if not a.any():
        warnings.warn("empty mask: degenerate all-zero channel estimate")
        return MaskedChannel(np.zeros_like(r), a)
    if np.any(np.abs(x[a]) == 0.0):
        raise ValueError("unallocated bin marked active")
    est = np.zeros_like(r)
    est[a] = r[a] / x[a]
    return MaskedChannel(est, a)


# ---------------------------------------------------------------------------
# Schatten-p completion (iterative singular value thresholding)
# ---------------------------------------------------------------------------

def schatten_value(h, p: float) -> float:
    """sum_r lambda_r^p over singular values (nuclear norm at p = 1)."""
    s = np.linalg.svd(_as_array(h), compute_uv=False)
    return float(np.sum(s ** p))


def _prox_power(lam: np.ndarray, w: float, p: float) -> np.ndarray:
    """Proximal map of x -> w*x^p applied entrywise to singular values.

    Two-branch generalized thresholding: values below the p-dependent
    threshold snap to zero, values above solve the stationarity condition
    x + w p x^(p-1) = lam (bisection; the equation is monotone on the
    admissible branch x >= x_lb).
    """
    if w <= 0:
        return lam.copy()
    if p == 1.0:
        return np.maximum(lam - w, 0.0)
    x_lb = (w * p * (1.0 - p)) ** (1.0 / (2.0 - p))
    thr = x_lb + w * p * x_lb ** (p - 1.0)
    out = np.zeros_like(lam)
    live = lam > thr
    if not live.any():
        return out
    lo = np.full(live.sum(), x_lb)
    hi = lam[live].copy()
    target = lam[live]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        g = mid + w * p * mid ** (p - 1.0)
        high = g > target
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
    out[live] = 0.5 * (lo + hi)
    return out


def _fidelity_step(z: np.ndarray, anchor: np.ndarray, mask: np.ndarray,
                   eps: float) -> np.ndarray:
    """Project onto the data-fidelity ball {||(Z - anchor) o A||_F <= eps}.

    The residual lives only on the observed samples, so the metric
    projection scales the masked residual radially onto the ball while
    leaving off-mask entries untouched; at eps = 0 it reduces to hard data
    consistency (replace the observed entries with the samples).
    """
    resid = np.where(mask, z - anchor, 0.0)
    norm = float(np.linalg.norm(resid))
    if norm <= eps:
        return z
    scale = 0.0 if eps == 0.0 else eps / norm
    return np.where(mask, anchor + scale * resid, z)


def _ball_gap(z: np.ndarray, anchor: np.ndarray, mask: np.ndarray,
              eps: float) -> float:
    """Distance from z to the data-fidelity ball (0 when inside)."""
    resid = np.where(mask, z - anchor, 0.0)
    return max(0.0, float(np.linalg.norm(resid)) - eps)


def schatten_complete(masked: MaskedChannel, cfg: CompletionConfig | None = None
                      ) -> np.ndarray:
    """Complete a masked channel by Schatten p-quasi-norm minimization.

    Proximal-gradient ISVT with continuation: each iteration first projects
    the iterate onto the data-fidelity ball (masked entries pulled toward
    the observed samples) and then applies the scalar proximal map of
    lambda -> w*lambda^p to the singular values, with the weight w decaying
    geometrically to a floor.  A proximal-gradient step cannot increase the
    merit w*sum(lambda^p) + 0.5*dist(fidelity ball)^2 at the current weight,
    and the weight itself decays, so the recorded merit sequence is
    non-increasing across accepted iterations (asserted before returning);
    a candidate that would raise it through numerical noise is rejected
    while the continuation keeps decaying, so a rejection cannot stall the
    scheme.  Stops once the weight has reached its floor and the relative
    iterate change falls under rel_tol; hitting max_iter first returns the
    best effort with a warning.  The returned matrix is projected exactly
    onto the fidelity ball, so a fully observed channel at eps = 0 comes
    back unchanged.
    """
    cfg = cfg or CompletionConfig()
    if masked.degenerate:
        raise ValueError("cannot complete a fully unobserved channel")
    eps = cfg.resolve_epsilon(masked.mask)
    anchor = masked.estimate
    mask = masked.mask

    z = anchor.copy()
    sigma1 = np.linalg.norm(z, 2)
    if sigma1 == 0.0:
        return z
    frac, decay = cfg.threshold_schedule
    theta = frac * sigma1
    floor = 1e-12 * sigma1
    slack = 1e-12 * sigma1 * sigma1
    merit_hist = []
    converged = False

    for _ in range(cfg.max_iter):
        y = _fidelity_step(z, anchor, mask, eps)
        u, lam, vh = np.linalg.svd(y, full_matrices=False)
        lam_new = _prox_power(lam, theta, cfg.p)
        cand = (u * lam_new) @ vh
        gap = _ball_gap(cand, anchor, mask, eps)
        merit = theta * float(np.sum(lam_new ** cfg.p)) + 0.5 * gap * gap
        at_floor = theta <= floor * (1.0 + 1e-9)
        theta = max(floor, theta * decay)
        if merit_hist and merit > merit_hist[-1] * (1.0 + 1e-9) + slack:
            continue  # roundoff-level increase: keep z, let the weight decay
        step = np.linalg.norm(cand - z) / max(np.linalg.norm(z), 1e-300)
        z = cand
        merit_hist.append(merit)
        if at_floor and step < cfg.rel_tol:
            converged = True
            break

    if not converged:
        warnings.warn("schatten_complete hit max_iter before the iterate "
                      "settled; returning the last accepted iterate")
    assert all(b <= a * (1.0 + 1e-9) + slack
               for a, b in zip(merit_hist, merit_hist[1:])), \
        "merit increased on an accepted iteration"
    return _fidelity_step(z, anchor, mask, eps)


# ---------------------------------------------------------------------------
# linear interpolation baseline
# ---------------------------------------------------------------------------

def _interp_line(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """1-D linear interpolation with nearest-value boundary extrapolation."""
    pos = np.flatnonzero(observed)
    idx = np.arange(values.size)
    re = np.interp(idx, pos, values[pos].real)
    im = np.interp(idx, pos, values[pos].imag)
    return re + 1j * im


def linear_complete(masked: MaskedChannel) -> np.ndarray:
    """Fill unobserved bins by 1-D linear interpolation.

    First pass interpolates along frequency within each OFDM symbol; symbols
    with no observation at all are then filled along time from the
    already-completed symbols.  A grid with no observations anywhere in a
    row's column span falls back to zeros with a warning.
    """
    est, mask = masked.estimate, masked.mask
    out = est.copy()
    filled_cols = np.zeros(est.shape[1], dtype=bool)
    for n in range(est.shape[1]):
        col = mask[:, n]
        if col.any():
            out[:, n] = _interp_line(est[:, n], col)
            filled_cols[n] = True
    if not filled_cols.all():
        if not filled_cols.any():
            warnings.warn("mask observes nothing; zero-filled completion")
            return np.zeros_like(est)
        for m in range(est.shape[0]):
            out[m, ~filled_cols] = _interp_line(out[m], filled_cols)[~filled_cols]
    return out


# ---------------------------------------------------------------------------
# diagnostics and error metric
# ---------------------------------------------------------------------------

def _rank(a: np.ndarray) -> int:
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-8 * s[0]))


def _line_rank_min(h: np.ndarray, mask: np.ndarray, axis: int) -> int:
    """min over lines of rank(submatrix restricted to observed cross-lines).

    axis=1: for each column, rank of the row-subset observed in that column;
    axis=0: for each row, rank of the column-subset observed in that row.
    """
    ranks = []
    n_lines = h.shape[1] if axis == 1 else h.shape[0]
    for i in range(n_lines):
        sel = mask[:, i] if axis == 1 else mask[i, :]
        sub = h[sel, :] if axis == 1 else h[:, sel]
        ranks.append(_rank(sub) if sub.size else 0)
    return min(ranks) if ranks else 0


def recovery_diagnostics(h_true, mask, zeroed_ranks: bool = False
                         ) -> RecoveryDiagnostics:
    """Isomeric condition and relative condition number of a sampling mask.

    The rank tests default to the per-column/per-row submatrix reading from
    the matrix-completion literature (the rows observed in each column must
    span the full row space, and transposed likewise): that is the reading
    under which the condition is satisfiable by partial masks at all.
    zeroed_ranks=True switches to ranks of the entry-zeroed matrix instead,
    which inflate above rank(H) for scattered masks (a rank-2 channel under a
    Bernoulli mask reads as full rank) and are reported for reference only;
    kappa is unaffected by the flag.
    """
    h = _as_array(h_true)
    a = _as_mask(mask, h.shape)
    masked = np.where(a, h, 0.0)
    r_full = _rank(h)

    if zeroed_ranks:
        rank_col = _rank(masked)
        rank_row = _rank(masked.T)
    else:
        rank_col = _line_rank_min(h, a, axis=1)
        rank_row = _line_rank_min(h, a, axis=0)

    pinv = np.linalg.pinv(h)
    pinv_t = np.linalg.pinv(h.T)
    prod_a = masked @ pinv
    prod_at = masked.T @ pinv_t
    s_a = np.linalg.svd(prod_a, compute_uv=False)
    s_at = np.linalg.svd(prod_at, compute_uv=False)
    kappa = float(min(s_a[0], s_at[0]) ** 2) if r_full else 0.0
    # smallest singular value that must stay away from zero for the sampled
    # matrix to retain the full row/column space: the r-th one
    if r_full:
        kappa_smin = float(min(s_a[r_full - 1], s_at[r_full - 1]) ** 2)
    else:
        kappa_smin = 0.0

    isomeric = bool(rank_col >= r_full and rank_row >= r_full and r_full > 0)
    return RecoveryDiagnostics(rank_full=r_full, rank_masked_row=rank_row,
                               rank_masked_col=rank_col, kappa=kappa,
                               kappa_smin=kappa_smin, isomeric=isomeric)


def completion_error(h_true, h_completed) -> float:
    """Normalized spectral-norm completion error in dB (0 dB = total failure).

    20*log10(||H - H_tilde||_2 / ||H||_2), floored at -300 dB so an exact
    reconstruction stays finite.
    """
    h = _as_array(h_true)
    ht = _as_array(h_completed)
    if h.shape != ht.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(h, 2)
    if denom == 0.0:
        raise ValueError("reference channel is identically zero")
    ratio = np.linalg.norm(h - ht, 2) / denom
    if ratio <= 10.0 ** (_ERROR_FLOOR_DB / 20.0):
        return _ERROR_FLOOR_DB
    return float(20.0 * np.log10(ratio))
