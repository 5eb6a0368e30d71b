"""File formats: scenario configs, channel containers, allocation artifacts.

Formats
-------
scenario config
    INI-style key/value text (stdlib ``configparser``) with one section per
    concern: ``[scenario]`` (experiment, trials, seed, ...), ``[grid]``,
    ``[design]``, ``[comm]``, ``[target.k]`` per target, ``[sweep]`` for the
    experiment axes and ``[limits]`` for optional solver limits.  Delays and
    Dopplers are written in resolution cells (``tau_cells``, ``nu_cells``)
    so scenario files stay readable across grid sizes.

channel container
    Binary: an 8-byte header of M then N as little-endian int32, followed by
    the M*N channel samples as little-endian complex64, column-major.
    float64 inputs are truncated to float32 precision on write.

allocation bitmap
    Plain-text PBM (``P1``), one image row per subcarrier; 1 = allocated.

energy grid
    CSV, one row per subcarrier, scientific notation.

design solution
    ``<stem>.txt`` key/value summary + ``<stem>_mask.pbm`` (union mask)
    + ``<stem>_energy.csv`` (union energy grid); per-UE masks are written
    only for multi-user solutions.
"""

from __future__ import annotations

import configparser
import math
import os

import numpy as np

from .grid import GridParams, Target
from .design import BnbLimits, DesignConfig, DesignSolution
from .bench import Scenario

__all__ = [
    "read_channel", "write_channel",
    "read_mask_pbm", "write_mask_pbm",
    "read_energy_csv", "write_energy_csv",
    "write_solution", "dump_program",
    "load_scenario", "save_scenario",
]


# ---------------------------------------------------------------------------
# binary channel container
# ---------------------------------------------------------------------------

_HEADER_DTYPE = np.dtype("<i4")
_SAMPLE_DTYPE = np.dtype("<c8")


def write_channel(path, h) -> None:
    """Write a 2-D complex matrix as header (M, N int32) + complex64 body."""
    a = np.asarray(getattr(h, "data", h))
    if a.ndim != 2:
        raise ValueError("channel container stores 2-D matrices")
    m, n = a.shape
    with open(path, "wb") as fh:
        fh.write(np.array([m, n], dtype=_HEADER_DTYPE).tobytes())
        fh.write(np.asarray(a, dtype=_SAMPLE_DTYPE).ravel(order="F").tobytes())


def read_channel(path) -> np.ndarray:
    """Read a channel container back as a complex128 (M, N) matrix."""
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(8), dtype=_HEADER_DTYPE)
        if header.size != 2:
            raise ValueError(f"truncated channel container: {path}")
        m, n = int(header[0]), int(header[1])
        if m <= 0 or n <= 0:
            raise ValueError(f"bad channel container header ({m}, {n}): {path}")
        body = np.frombuffer(fh.read(), dtype=_SAMPLE_DTYPE)
    if body.size != m * n:
        raise ValueError(
            f"channel container body has {body.size} samples, header says {m * n}")
    return body.astype(np.complex128).reshape(m, n, order="F")


# ---------------------------------------------------------------------------
# PBM allocation bitmaps and CSV energy grids
# ---------------------------------------------------------------------------

def write_mask_pbm(path, mask_grid) -> None:
    """Write a boolean (M, N) mask as plain-text PBM; 1 = allocated bin."""
    g = np.asarray(mask_grid)
    if g.ndim != 2:
        raise ValueError("mask bitmap must be 2-D")
    m, n = g.shape
    lines = ["P1", f"{n} {m}"]
    lines += [" ".join("1" if v else "0" for v in row) for row in g.astype(bool)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mask_pbm(path) -> np.ndarray:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError(f"not a plain PBM file: {path}")
    n, m = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:3 + m * n]], dtype=int)
    if bits.size != m * n:
        raise ValueError(f"PBM bitmap is truncated: {path}")
    return bits.reshape(m, n).astype(bool)


def write_energy_csv(path, energy_grid) -> None:
    np.savetxt(path, np.asarray(energy_grid, dtype=float),
               delimiter=",", fmt="%.12e")


def read_energy_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


# ---------------------------------------------------------------------------
# design solution artifacts
# ---------------------------------------------------------------------------

def write_solution(out_dir, sol: DesignSolution, stem: str = "design") -> list:
    """Write a solution's text summary, mask bitmap(s) and energy CSV.

    Returns the list of file paths written.  Infeasible/timeout solutions
    get the text summary only (there is no allocation to dump).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    txt = os.path.join(out_dir, f"{stem}.txt")
    lines = [f"{k} = {v}" for k, v in sol.to_dict().items()]
    if sol.validation is not None:
        lines.append(f"validation_ok = {sol.validation.ok}")
        for name, margin in sorted(sol.validation.margins.items()):
            m = np.min(margin) if np.ndim(margin) else margin
            lines.append(f"margin.{name} = {float(m):.6e}")
    with open(txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    paths.append(txt)

    if sol.allocation is not None:
        alloc = sol.allocation
        mask_path = os.path.join(out_dir, f"{stem}_mask.pbm")
        write_mask_pbm(mask_path, alloc.union_mask().reshape(
            alloc.M, alloc.N, order="F"))
        paths.append(mask_path)
        energy_path = os.path.join(out_dir, f"{stem}_energy.csv")
        write_energy_csv(energy_path, alloc.energies.sum(axis=0).reshape(
            alloc.M, alloc.N, order="F"))
        paths.append(energy_path)
        if alloc.masks.shape[0] > 1:
            for k in range(alloc.masks.shape[0]):
                p = os.path.join(out_dir, f"{stem}_mask_ue{k}.pbm")
                write_mask_pbm(p, alloc.masks[k].reshape(
                    alloc.M, alloc.N, order="F"))
                paths.append(p)
    return paths


def dump_program(program) -> str:
    """Render a conic program as a plain-text listing for debugging."""
    out = [f"maximize {program.obj!r}",
           f"variables: {program.n_vars} ({len(program.binary_ids())} binary)"]
    for i, name in enumerate(program.names):
        lo, hi = program.lb[i], program.ub[i]
        kind = " binary" if program.binary[i] else ""
        out.append(f"  v{i} = {name}  in [{lo:g}, {hi:g}]{kind}")
    for expr, rhs in program.eqs:
        out.append(f"eq:   {expr!r} == {rhs:g}")
    for expr, rhs in program.ineqs:
        out.append(f"ineq: {expr!r} <= {rhs:g}")
    for bound, vec in program.socs:
        if len(vec) <= 8:
            body = ", ".join(repr(v) for v in vec)
            out.append(f"soc:  ||[{body}]|| <= {bound!r}")
        else:
            out.append(f"soc:  ||vec(dim {len(vec)})|| <= {bound!r}")
    for x, y, z in program.exps:
        out.append(f"exp:  {y!r} * exp(({x!r})/({y!r})) <= {z!r}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _strings(text: str) -> tuple:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def load_scenario(path) -> Scenario:
    """Parse a scenario config file into a Scenario."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        cp.read_file(fh)

    if "grid" not in cp:
        raise ValueError(f"scenario file has no [grid] section: {path}")
    gs = cp["grid"]
    grid = GridParams(
        M=gs.getint("m"), N=gs.getint("n"),
        delta_f=gs.getfloat("delta_f"),
        noise_power=gs.getfloat("noise_power", fallback=1.0),
    )

    targets = []
    for name in sorted(s for s in cp.sections() if s.startswith("target.")):
        ts = cp[name]
        beta = complex(ts.getfloat("beta_re", fallback=1.0),
                       ts.getfloat("beta_im", fallback=0.0))
        targets.append(Target(
            beta=beta,
            tau=ts.getfloat("tau_cells") * grid.delay_res,
            nu=ts.getfloat("nu_cells") * grid.doppler_res,
        ))
    if not targets:
        raise ValueError(f"scenario file defines no [target.k] sections: {path}")

    gains = _floats(cp.get("comm", "gains", fallback="1.0"))

    ds = cp["design"] if "design" in cp else {}

    def dget(key, default):
        if not ds or key not in ds:
            return default
        val = ds[key]
        return math.inf if val.strip().lower() in ("inf", "+inf") else float(val)

    config = DesignConfig(
        grid=grid, targets=tuple(targets), channel_gains=gains,
        eps_tau=dget("eps_tau", 0.5), eps_nu=dget("eps_nu", 0.5),
        mu=dget("mu", 1.0), eta_bar=dget("eta_bar", 0.0),
        e_max=dget("e_max", 1.0), sigma_max_sq=dget("sigma_max_sq", 1.0),
        delta_db=dget("delta_db", math.inf), n_b=int(dget("n_b", 1)),
    )

    sc = cp["scenario"] if "scenario" in cp else {}
    sw = cp["sweep"] if "sweep" in cp else {}
    limits = None
    if "limits" in cp:
        ls = cp["limits"]
        limits = BnbLimits(
            max_nodes=ls.getint("max_nodes", fallback=BnbLimits.max_nodes),
            max_time=ls.getfloat("max_time", fallback=BnbLimits.max_time),
            rel_gap=ls.getfloat("rel_gap", fallback=BnbLimits.rel_gap),
        )

    def sweep(key):
        return _floats(sw[key]) if sw and key in sw else ()

    return Scenario(
        experiment=sc.get("experiment", "crb_gain_sweep") if sc else "crb_gain_sweep",
        config=config,
        trials=int(sc.get("trials", "200")) if sc else 200,
        seed=int(sc.get("seed", "0")) if sc else 0,
        mode=sc.get("mode", "tf") if sc else "tf",
        allocation=sc.get("allocation", "") if sc else "",
        estimator=sc.get("estimator", "schatten") if sc else "schatten",
        benchmarks=_strings(sc.get("benchmarks", "random,contiguous"))
        if sc else ("random", "contiguous"),
        label=sc.get("label", "") if sc else "",
        snr_db=sweep("snr_db"),
        separation_cells=sweep("separation_cells"),
        delta_db_sweep=sweep("delta_db"),
        mu_sweep=sweep("mu"),
        p_sweep=sweep("p"),
        periodic_fraction=float(sw.get("periodic_fraction", "0.0")) if sw else 0.0,
        limits=limits,
    )


def save_scenario(path, scenario: Scenario) -> None:
    """Write a Scenario back to the INI format ``load_scenario`` reads."""
    cp = configparser.ConfigParser()
    cp["scenario"] = {
        "experiment": scenario.experiment,
        "trials": str(scenario.trials),
        "seed": str(scenario.seed),
        "mode": scenario.mode,
        "estimator": scenario.estimator,
        "benchmarks": ",".join(scenario.benchmarks),
    }
    if scenario.allocation:
        cp["scenario"]["allocation"] = scenario.allocation
    if scenario.label:
        cp["scenario"]["label"] = scenario.label
    g = scenario.config.grid
    cp["grid"] = {"m": str(g.M), "n": str(g.N), "delta_f": repr(g.delta_f),
                  "noise_power": repr(g.noise_power)}
    c = scenario.config
    cp["design"] = {
        "mu": repr(c.mu), "n_b": str(c.n_b), "e_max": repr(c.e_max),
        "sigma_max_sq": repr(c.sigma_max_sq), "eta_bar": repr(c.eta_bar),
        "delta_db": "inf" if math.isinf(c.delta_db) else repr(c.delta_db),
        "eps_tau": repr(c.eps_tau), "eps_nu": repr(c.eps_nu),
    }
    cp["comm"] = {"gains": ", ".join(repr(v) for v in c.channel_gains)}
    for i, t in enumerate(c.targets, start=1):
        cp[f"target.{i}"] = {
            "beta_re": repr(t.beta.real), "beta_im": repr(t.beta.imag),
            "tau_cells": repr(t.tau / g.delay_res),
            "nu_cells": repr(t.nu / g.doppler_res),
        }
    sweeps = {}
    for key, values in (("snr_db", scenario.snr_db),
                        ("separation_cells", scenario.separation_cells),
                        ("delta_db", scenario.delta_db_sweep),
                        ("mu", scenario.mu_sweep),
                        ("p", scenario.p_sweep)):
        if values:
            sweeps[key] = ", ".join(repr(v) for v in values)
    if scenario.periodic_fraction:
        sweeps["periodic_fraction"] = repr(scenario.periodic_fraction)
    if sweeps:
        cp["sweep"] = sweeps
    if scenario.limits is not None:
        cp["limits"] = {"max_nodes": str(scenario.limits.max_nodes),
                        "max_time": repr(scenario.limits.max_time),
                        "rel_gap": repr(scenario.limits.rel_gap)}
    with open(path, "w") as fh:
        cp.write(fh)
