"""hamscan command line: oscillator sweeps, kernel audits and benchmarks,
toy training, trained-model diagnostics, and tensor file utilities.

Exit codes: 0 success, 1 property violation, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    HamscanError,
    InvalidConfig,
    LogBudgetExceeded,
    MissingCheckpoint,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HAMSCAN_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads (default: HAMSCAN_THREADS or 1)")
    p.add_argument("--deterministic", action="store_true",
                   help="pin math library threading for bit-stable reruns")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamscan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("freqresp", help="frequency-response sweep to CSV")
    p.add_argument("--k", type=float, default=1.0, help="stiffness")
    p.add_argument("--nu", type=float, default=0.1, help="damping")
    p.add_argument("--omega-min", type=float, default=0.01)
    p.add_argument("--omega-max", type=float, default=4.0)
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--out", required=True, help="output CSV path")
    _add_common(p)

    p = sub.add_parser("scan-bench", help="parallel-scan benchmark vs sequential oracle")
    p.add_argument("--lengths", default="64,256,1024", help="comma-separated L values")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--threads-list", default="1,2,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("stability-audit", help="damped-unit-circle and energy-bound audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--faulty-euler", action="store_true",
                   help="audit the first-order integrator instead (expected to violate)")
    _add_common(p)

    p = sub.add_parser("train", help="train a toy model from a JSON config")
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--stop-after", type=int, default=None,
                   help="interrupt after this epoch (schedule still targets config epochs)")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)

    p = sub.add_parser("diagnose", help="trained-model phase-space diagnostics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None,
                   help="config JSON (default: config.json beside the checkpoint)")
    p.add_argument("--dataset-seed", type=int, default=999)
    p.add_argument("--images", type=int, default=32)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("parseval", help="discrete Parseval identity check")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_common(p)

    p = sub.add_parser("tensor", help="HVT1 tensor file utilities")
    tsub = p.add_subparsers(dest="tensor_command", required=True)
    pi = tsub.add_parser("inspect", help="print shape/dtype/stats of an HVT1 file")
    pi.add_argument("path")
    pc = tsub.add_parser("convert", help="convert between .hvt and .npy by extension")
    pc.add_argument("src")
    pc.add_argument("dst")
    return ap


# -- subcommands ---------------------------------------------------------

def cmd_freqresp(args) -> int:
    from .oscillator import OscillatorParams, energy_spectral_weight, transfer_magnitude

    params = OscillatorParams(k=args.k, nu=args.nu)
    grid = np.linspace(args.omega_min, args.omega_max, args.points)
    g_pos, g_mom = transfer_magnitude(params, grid)
    w = energy_spectral_weight(params, grid)
    q = params.quality
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["Omega", "g_pos", "g_mom", "energy_weight", "Q"])
        for row in zip(grid, g_pos, g_mom, w):
            wr.writerow([f"{row[0]:.9g}", f"{row[1]:.9g}", f"{row[2]:.9g}",
                         f"{row[3]:.9g}", f"{q:.9g}"])
    peak = grid[np.argmax(g_mom)]
    print(f"freqresp: {args.points} rows -> {args.out}  "
          f"(Q={q:.4g}, momentum-gain peak at Omega={peak:.6g})")
    return EXIT_OK


def cmd_scan_bench(args) -> int:
    from .diagnostics import scan_bench

    lengths = [int(s) for s in args.lengths.split(",") if s]
    threads = [int(s) for s in args.threads_list.split(",") if s]
    try:
        rows = scan_bench(lengths, args.channels, threads, seed=args.seed)
    except LogBudgetExceeded as e:
        print(f"error: {e}\nhint: reduce the scan segment length so each "
              "segment's summed nu*delta stays within the log budget", file=sys.stderr)
        return EXIT_VIOLATION
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["L", "D", "mode", "threads", "wall_ns", "max_abs_err_vs_oracle"])
        for r in rows:
            wr.writerow([r["L"], r["D"], r["mode"], r["threads"], r["wall_ns"],
                         f"{r['max_abs_err_vs_oracle']:.9g}"])
    worst = max(r["max_abs_err_vs_oracle"] for r in rows)
    print(f"scan-bench: {len(rows)} rows -> {args.out}  (worst error {worst:.3g})")
    return EXIT_OK


def cmd_stability_audit(args) -> int:
    from .diagnostics import stability_audit

    rep = stability_audit(seed=args.seed, trials=args.trials,
                          trajectories=args.trajectories,
                          faulty_euler=args.faulty_euler)
    mode = "faulty forward-Euler" if rep.faulty_mode else "exponential"
    print(f"stability-audit ({mode} map): {rep.trials} step draws, "
          f"{rep.magnitude_violations} magnitude violations, max |A| {rep.max_magnitude:.9g}")
    if not rep.faulty_mode:
        print(f"energy bound: {rep.trajectories} driven trajectories, "
              f"{rep.energy_violations} violations of the dissipation bound")
    if rep.faulty_mode:
        verdict = "detected (audit has power)" if rep.ok else "NOT detected (audit is blind)"
        print(f"faulty-integrator violations: {verdict}")
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_train(args) -> int:
    from .net import ToyConfig
    from .training import train

    try:
        with open(args.config) as fh:
            cfg = ToyConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    progress = None if args.quiet else print
    # toy training is always deterministic; --threads only affects speed
    summary = train(cfg, args.out_dir, resume=args.resume, threads=args.threads,
                    deterministic=True, progress=progress, stop_after=args.stop_after)
    print(f"train: {summary.epochs_run} epochs, final {summary.metric_name} "
          f"{summary.final_metric:.4f}, checkpoint -> {summary.checkpoint_path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    import torch

    from .data import gen_blobs
    from .diagnostics import FULLSCALE_REF, diagnostics_rows, model_diagnostics, write_pgm
    from .net import ToyConfig, build_model
    from .training import load_checkpoint, restore_model

    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.json"
    if not cfg_path.exists():
        raise InvalidConfig(f"no config at {cfg_path}; pass --config")
    cfg = ToyConfig.from_dict(json.loads(cfg_path.read_text()))
    if cfg.task != "segmentation":
        raise InvalidConfig("diagnose requires a segmentation checkpoint")
    torch.set_num_threads(max(1, args.threads))
    model = build_model(cfg)
    restore_model(model, load_checkpoint(ckpt))

    blobs = gen_blobs(args.images, cfg.input_size, seed=args.dataset_seed)
    fields = model_diagnostics(model, blobs.images, blobs.regions)
    maps = fields.pop("maps")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = diagnostics_rows(fields)
    with open(out_dir / "diagnostics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["field", "value", "fullscale_ref"])
        wr.writerows(rows)
    for name, img in maps.items():
        write_pgm(out_dir / f"{name}.pgm", np.asarray(img, dtype=np.float64))

    width = max(len(k) for k in FULLSCALE_REF)
    print(f"{'field':<{width}}  {'toy value':>12}  fullscale_ref")
    for field, value, ref in rows:
        print(f"{field:<{width}}  {value:>12}  {ref}")
    order = (fields["momentum_interior"], fields["momentum_boundary"],
             fields["momentum_exterior"])
    print(f"momentum ordering interior>boundary>exterior: "
          f"{order[0]:.4g} / {order[1]:.4g} / {order[2]:.4g} "
          f"({'holds' if order[0] > order[1] > order[2] else 'does not hold'})")
    print(f"diagnose: wrote diagnostics.csv and {len(maps)} PGM maps -> {out_dir}")
    return EXIT_OK


def cmd_parseval(args) -> int:
    from .oscillator import OscillatorParams
    from .scan import parseval_check

    params = OscillatorParams(k=args.k, nu=args.nu)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        u = rng.standard_normal(args.length)
        res = parseval_check(u, params, args.delta)
        worst = max(worst, res.rel_gap)
        print(f"trial {trial}: lhs={res.lhs:.9g} rhs={res.rhs:.9g} "
              f"rel_gap={res.rel_gap:.3g} "
              f"(continuous-kernel reference gap {res.rel_gap_continuous:.3g})")
    if worst > args.tol:
        print(f"parseval: FAIL worst gap {worst:.3g} > tol {args.tol:.3g}",
              file=sys.stderr)
        return EXIT_VIOLATION
    print(f"parseval: ok, worst discrete gap {worst:.3g} <= tol {args.tol:.3g}")
    return EXIT_OK


def cmd_tensor(args) -> int:
    from . import tensorio

    if args.tensor_command == "inspect":
        arr = tensorio.read_tensor(args.path)
        print(f"{args.path}: shape={tuple(arr.shape)} dtype={arr.dtype} "
              f"min={arr.min():.6g} max={arr.max():.6g} mean={arr.mean():.6g}")
        return EXIT_OK
    src, dst = Path(args.src), Path(args.dst)
    if src.suffix == ".npy" and dst.suffix == ".hvt":
        tensorio.write_tensor(dst, np.load(src))
    elif src.suffix == ".hvt" and dst.suffix == ".npy":
        np.save(dst, tensorio.read_tensor(src))
    else:
        print("convert: expected one .npy and one .hvt path", file=sys.stderr)
        return EXIT_USAGE
    print(f"convert: {src} -> {dst}")
    return EXIT_OK


_DISPATCH = {
    "freqresp": cmd_freqresp,
    "scan-bench": cmd_scan_bench,
    "stability-audit": cmd_stability_audit,
    "train": cmd_train,
    "diagnose": cmd_diagnose,
    "parseval": cmd_parseval,
    "tensor": cmd_tensor,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (InvalidConfig, MissingCheckpoint, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HamscanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
