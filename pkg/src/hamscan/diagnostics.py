"""Model and kernel diagnostics: gate statistics, region-conditioned
momentum/energy, stability audits, scan benchmarks, and PGM export.

The trained-model reference values attached to each diagnostic row (the
``fullscale_ref`` column) come from a full-size run of this architecture
family on real data. They are printed for orientation only; toy-model
magnitudes differ and nothing is asserted against them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import REGION_BOUNDARY, REGION_EXTERIOR, REGION_INTERIOR, gen_blobs
from .errors import NonFiniteInput
from .oscillator import lyapunov_bound_series
from .scan import BankParams, ScanPlan, scan_parallel, scan_sequential, step_params

__all__ = [
    "FULLSCALE_REF",
    "RegionStats",
    "write_pgm",
    "region_stats",
    "model_diagnostics",
    "scan_bench",
    "stability_audit",
    "StabilityReport",
]

# Reference measurements from the full-scale model (trained, real data);
# reported next to toy values, never asserted.
FULLSCALE_REF = {
    "gate_mean": "0.54",
    "gate_std": "0.043",
    "osc_contribution_block0": "0.796",
    "osc_contribution_block1": "0.588",
    "alpha_min": "0.16",
    "alpha_max": "0.78",
    "alpha_std": "0.136",
    "gamma_d3": "1.18",
    "gamma_d2": "0.87",
    "gamma_d1": "0.91",
    "gate_d3_min": "0.19",
    "gate_d3_max": "0.75",
    "gate_d2_min": "0.26",
    "gate_d2_max": "0.69",
    "gate_d1_min": "0.25",
    "gate_d1_max": "0.70",
    "momentum_interior": "110.2",
    "momentum_boundary": "95.1",
    "momentum_exterior": "83.2",
    "interior_exterior_ratio": "1.33",
    "boundary_exterior_energy_ratio": "1.25",
}


def write_pgm(path, img: np.ndarray) -> None:
    """8-bit binary PGM with per-image min-max normalization."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteInput("PGM export: non-finite pixels")
    lo, hi = float(a.min()), float(a.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    b = np.round((a - lo) * scale).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        f.write(b.tobytes())


@dataclass
class RegionStats:
    momentum_interior: float
    momentum_boundary: float
    momentum_exterior: float
    interior_exterior_ratio: float
    boundary_exterior_energy_ratio: float


def region_stats(p_mag: np.ndarray, energy: np.ndarray, regions: np.ndarray) -> RegionStats:
    """Region-conditioned means of momentum magnitude and energy.

    p_mag, energy: [N, S, S] fields already at image resolution;
    regions: [N, S, S] REGION_* codes.
    """
    means = {}
    e_means = {}
    for code, name in ((REGION_INTERIOR, "interior"), (REGION_BOUNDARY, "boundary"),
                       (REGION_EXTERIOR, "exterior")):
        sel = regions == code
        means[name] = float(p_mag[sel].mean()) if sel.any() else float("nan")
        e_means[name] = float(energy[sel].mean()) if sel.any() else float("nan")
    return RegionStats(
        momentum_interior=means["interior"],
        momentum_boundary=means["boundary"],
        momentum_exterior=means["exterior"],
        interior_exterior_ratio=means["interior"] / means["exterior"],
        boundary_exterior_energy_ratio=e_means["boundary"] / e_means["exterior"],
    )


def _upsample(t: torch.Tensor, size: int) -> torch.Tensor:
    return F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)


def model_diagnostics(model, images: np.ndarray, regions: np.ndarray,
                      batch_size: int = 16) -> dict:
    """Run the segmentation model over images and collect every diagnostic
    field: bottleneck gate stats, per-block oscillator contribution,
    attention alpha stats, per-level energy-gate ranges with learned
    gains, and region-conditioned momentum/energy statistics.

    Returns a flat {field: value} dict plus ``maps`` holding the first
    image's spatial fields for PGM export.
    """
    size = images.shape[-1]
    gate_vals = [[], []]
    alpha_vals = []
    level_gate_vals: dict[str, list] = {"d3": [], "d2": [], "d1": []}
    p_maps, h_maps = [], []
    maps = {}
    model.eval()
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            xb = torch.from_numpy(images[i : i + batch_size])
            logits, internals = model(xb, return_internals=True)
            g0, g1 = internals["gates"]
            gate_vals[0].append(g0.flatten())
            gate_vals[1].append(g1.flatten())

            p = internals["p"][1]
            h_map = internals["H_map"]
            p_mag = p.abs().mean(dim=1, keepdim=True)
            p_maps.append(_upsample(p_mag, size)[:, 0])
            h_maps.append(_upsample(h_map, size)[:, 0])

            # attention alpha at the coarsest level, same centering as in the model
            h3 = internals["level_energy"][0][0]
            alpha = torch.sigmoid(
                model.level3.gamma_ps * (h3 - h3.mean(dim=(-2, -1), keepdim=True))
            )
            alpha_vals.append(alpha.flatten())
            for name, (h_l, gamma) in zip(("d3", "d2", "d1"), internals["level_energy"]):
                gate_l = torch.sigmoid(gamma * (h_l - h_l.mean(dim=(-2, -1), keepdim=True)))
                level_gate_vals[name].append(gate_l.flatten())

            if i == 0:
                maps["input"] = images[0, 0]
                maps["H_map"] = _upsample(h_map, size)[0, 0].numpy()
                maps["momentum"] = _upsample(p_mag, size)[0, 0].numpy()
                maps["pred"] = torch.sigmoid(logits[0, 0]).numpy()
                for name, (h_l, gamma) in zip(("d3", "d2", "d1"), internals["level_energy"]):
                    gate_l = torch.sigmoid(gamma * (h_l - h_l.mean(dim=(-2, -1), keepdim=True)))
                    maps[f"gate_{name}"] = gate_l[0, 0].numpy()

    g_all = torch.cat(gate_vals[0] + gate_vals[1])
    rs = region_stats(
        torch.cat(p_maps).numpy(), torch.cat(h_maps).numpy(), regions[: len(images)]
    )
    alpha_all = torch.cat(alpha_vals)
    out = {
        "gate_mean": float(g_all.mean()),
        "gate_std": float(g_all.std()),
        "osc_contribution_block0": float(1.0 - torch.cat(gate_vals[0]).mean()),
        "osc_contribution_block1": float(1.0 - torch.cat(gate_vals[1]).mean()),
        "alpha_min": float(alpha_all.min()),
        "alpha_max": float(alpha_all.max()),
        "alpha_std": float(alpha_all.std()),
        "gamma_d3": float(model.level3.gamma.detach()),
        "gamma_d2": float(model.level2.gamma.detach()),
        "gamma_d1": float(model.level1.gamma.detach()),
        "momentum_interior": rs.momentum_interior,
        "momentum_boundary": rs.momentum_boundary,
        "momentum_exterior": rs.momentum_exterior,
        "interior_exterior_ratio": rs.interior_exterior_ratio,
        "boundary_exterior_energy_ratio": rs.boundary_exterior_energy_ratio,
    }
    for name in ("d3", "d2", "d1"):
        vals = torch.cat(level_gate_vals[name])
        out[f"gate_{name}_min"] = float(vals.min())
        out[f"gate_{name}_max"] = float(vals.max())
    out["maps"] = maps
    return out


def diagnostics_rows(fields: dict) -> list[tuple[str, str, str]]:
    """(field, toy_value, fullscale_ref) rows in a stable order."""
    rows = []
    for key in FULLSCALE_REF:
        rows.append((key, f"{fields[key]:.6g}", FULLSCALE_REF[key]))
    return rows


# -- scan benchmark ------------------------------------------------------

def scan_bench(L_list, channels: int, threads_list, seed: int = 0,
               dtype=np.complex64) -> list[dict]:
    """Wall time and max-abs error of the segmented parallel scan against
    the sequential oracle for each (L, threads) combination."""
    rows = []
    rng = np.random.default_rng(seed)
    for L in L_list:
        x = rng.standard_normal((channels, L)) * 0.5
        bank = BankParams.default_init(channels, seed=seed)
        step = step_params(x, bank)
        u = (rng.standard_normal((channels, L))
             + 1j * rng.standard_normal((channels, L))).astype(dtype)
        t0 = time.perf_counter_ns()
        ref = scan_sequential(u.astype(np.complex128), step)
        t_seq = time.perf_counter_ns() - t0
        rows.append({"L": L, "D": channels, "mode": "sequential", "threads": 1,
                     "wall_ns": t_seq, "max_abs_err_vs_oracle": 0.0})
        for threads in threads_list:
            t0 = time.perf_counter_ns()
            out = scan_parallel(u, step, plan=ScanPlan(), threads=threads)
            t_par = time.perf_counter_ns() - t0
            err = float(np.abs(out.astype(np.complex128) - ref).max())
            rows.append({"L": L, "D": channels, "mode": "parallel", "threads": threads,
                         "wall_ns": t_par, "max_abs_err_vs_oracle": err})
    return rows


# -- stability audit -----------------------------------------------------

@dataclass
class StabilityReport:
    trials: int
    magnitude_violations: int
    energy_violations: int
    trajectories: int
    max_magnitude: float
    faulty_mode: bool

    @property
    def ok(self) -> bool:
        if self.faulty_mode:
            # the audit must have enough power to catch a broken integrator
            return self.magnitude_violations > 0
        return self.magnitude_violations == 0 and self.energy_violations == 0


def _draw_magnitude_violations(rng, trials: int, faulty: bool):
    """(violation count, max |A|) over `trials` random parameterizations.

    The exponential map satisfies |A| = exp(-nu delta) < 1 iff
    nu delta > 0, so the contract is checked in log space; the linear
    magnitude saturates to exactly 1.0 below one ulp and would report
    rounding, not instability. The faulty forward-Euler mode
    A = 1 + (-nu + i omega) delta is checked in linear space, where its
    violations are macroscopic.
    """
    x = rng.uniform(-10.0, 10.0, trials)
    s_nu, b_nu = rng.normal(0, 1, trials), rng.normal(0, 1, trials)
    s_d, b_d = rng.normal(0, 1, trials), rng.normal(0, 1, trials)
    nu = np.minimum(np.logaddexp(0.0, x * s_nu + b_nu), 5.0)
    delta = np.logaddexp(0.0, x * s_d + b_d)
    if faulty:
        omega = rng.uniform(0.05, 3.0, trials)
        mag = np.abs(1.0 + (-nu + 1j * omega) * delta)
        return int((mag >= 1.0).sum()), float(mag.max()) if trials else 0.0
    decay = nu * delta
    viol = int((decay <= 0.0).sum())
    max_mag = float(np.exp(-decay.min())) if trials else 0.0
    return viol, max_mag


def stability_audit(seed: int = 0, trials: int = 100_000, trajectories: int = 100,
                    faulty_euler: bool = False) -> StabilityReport:
    """Audit the two stability contracts.

    1. |A| < 1 for random input-dependent parameterizations (the damped
       unit circle); under --faulty-euler the first-order integrator is
       audited instead and is expected to violate.
    2. Driven-trajectory energy H(t) = |z_t|^2 / 2 never exceeds the
       running dissipation bound e^{-nu t} H0 + (1/(2 nu^2)) * integral of
       e^{-nu (t-s)} u(s)^2 ds, over `trajectories` random smooth drives
       with nu in [0.1, 0.9].
    """
    rng = np.random.default_rng(seed)
    if trials:
        mag_viol, max_mag = _draw_magnitude_violations(rng, trials, faulty_euler)
    else:
        mag_viol, max_mag = 0, 0.0

    energy_viol = 0
    if not faulty_euler:
        from .oscillator import OscillatorParams, simulate_normal_mode

        dt, steps = 0.01, 2000
        t = np.arange(1, steps + 1) * dt
        for _ in range(trajectories):
            nu = rng.uniform(0.1, 0.9)
            omega = rng.uniform(0.3, 3.0)
            params = OscillatorParams(k=omega * omega, nu=nu)
            z0 = rng.normal() + 1j * rng.normal()
            # smooth bounded drive: random two-tone
            a1, a2 = rng.normal(size=2)
            w1, w2 = rng.uniform(0.1, 2.0, 2)
            u = a1 * np.sin(w1 * t) + a2 * np.cos(w2 * t)
            z = simulate_normal_mode(z0, nu, omega, u, dt)
            H = 0.5 * np.abs(z) ** 2
            bound = lyapunov_bound_series(0.5 * abs(z0) ** 2, params, u, dt)
            energy_viol += int((H > bound * (1 + 1e-9)).any())

    return StabilityReport(
        trials=trials,
        magnitude_violations=mag_viol,
        energy_violations=energy_viol,
        trajectories=0 if faulty_euler else trajectories,
        max_magnitude=max_mag,
        faulty_mode=faulty_euler,
    )
