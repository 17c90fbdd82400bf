"""Command-line entry point: ``fieldkit simulate | estimate | bench``.

Exit codes: 0 success, 2 configuration or container error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_beta, parse_snr
from .initialize import SweepConfig
from .optimizer import NumericalError
from .signal import DegenerateBasisError, FatModel, flatten
from .sparse import FactorizationError
from .volumes import ContainerError, read_array, read_manifest, write_container

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def set_threads(requested=None) -> int:
    """Apply the thread count; ``FIELDKIT_THREADS`` wins over ``requested``."""
    import numba

    env = os.environ.get("FIELDKIT_THREADS")
    n = requested
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"FIELDKIT_THREADS must be an integer, got {env!r}") from exc
    if n is None:
        n = numba.config.NUMBA_NUM_THREADS
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _dims(text):
    parts = [p for p in str(text).lower().replace(",", "x").split("x") if p]
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"cannot parse dims {text!r}; use e.g. 64x64x40") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"dims must be three positive integers, got {text!r}")
    return dims


def _fat_meta(fat: FatModel) -> dict:
    return {"amplitudes": fat.amplitudes.tolist(), "shifts_hz": fat.shifts_hz.tolist()}


def _fat_from_manifest(manifest):
    info = manifest.get("fat_model")
    if info is None:
        from .sim import WATERFAT_FIELD_T

        return FatModel.six_peak(WATERFAT_FIELD_T)
    return FatModel(np.asarray(info["amplitudes"]), np.asarray(info["shifts_hz"]))


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    from .sim import BRAIN_ECHO_TIMES, WATERFAT_ECHO_TIMES, simulate_fieldmap, simulate_waterfat

    snr = parse_snr(args.snr)
    noiseless = snr is None or math.isinf(snr)
    if args.coils < 1:
        raise ConfigError("--coils must be at least 1")
    if args.mode == "fieldmap":
        dims = _dims(args.dims or "64x64x40")
        t = BRAIN_ECHO_TIMES
        data = simulate_fieldmap(dims, args.coils, t, None if noiseless else snr, args.seed, args.scale)
        extra = {}
    else:
        dims = _dims(args.dims or "96x72x1")
        t = WATERFAT_ECHO_TIMES
        fat = FatModel.six_peak(args.field)
        data = simulate_waterfat(dims, args.coils, t, None if noiseless else snr, args.seed, fat)
        extra = {"water": (data["water"], "c64"), "fat": (data["fat"], "c64")}
    arrays = {
        "y": (data["y"], "c64"),
        "s": (data["s"], "c64"),
        "fieldmap_hz": (data["fieldmap_hz"], "f32"),
        "magnitude": (data["magnitude"], "f32"),
        **extra,
    }
    meta = {
        "mode": args.mode,
        "noiseless": noiseless,
        "snr_db": None if noiseless else snr,
        "seed": args.seed,
        "truth": "fieldmap_hz",
    }
    if args.mode == "waterfat":
        meta["fat_model"] = _fat_meta(fat)
    else:
        meta["scale"] = args.scale
    write_container(args.out, arrays, dims, echo_times=t, n_coils=args.coils, **meta)
    print(f"wrote {args.out} ({args.mode}, {dims[0]}x{dims[1]}x{dims[2]}, {args.coils} coils, {len(t)} echoes)")
    return EXIT_OK


# ---------------------------------------------------------------- estimate


def _config_from_args(args, mode) -> RunConfig:
    return RunConfig(
        mode=mode,
        beta=parse_beta(args.beta),
        beta_text=str(args.beta),
        order=args.order,
        method=getattr(args, "method", "ncg-ic"),
        ict_scale=args.ict_scale,
        n_outer=args.outer,
        n_inner=args.inner,
        sweep_size=args.sweep,
        pwls_cg=args.pwls_cg,
        seed=getattr(args, "seed", 0),
        threshold_frac=args.threshold,
        dilation=args.dilation,
        extra={"input": str(args.inp), "output": str(args.out)},
    )


def _load_inputs(path):
    manifest = read_manifest(path)
    for name in ("y", "s"):
        if name not in manifest["arrays"]:
            raise ContainerError(f"{path}: container lacks the {name!r} array")
    if not manifest.get("echo_times_s"):
        raise ContainerError(f"{path}: manifest lacks echo_times_s")
    y = read_array(path, "y", manifest)
    s = read_array(path, "s", manifest)
    t = np.asarray(manifest["echo_times_s"], dtype=np.float64)
    if y.ndim != 5 or y.shape[1] != t.size:
        raise ContainerError(f"{path}: y must be (coils, {t.size} echoes, nx, ny, nz), got {y.shape}")
    if s.shape != (y.shape[0],) + y.shape[2:]:
        raise ContainerError(f"{path}: s has shape {s.shape}, expected {(y.shape[0],) + y.shape[2:]}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
        raise ContainerError(f"{path}: y and s must be finite")
    truth = read_array(path, "fieldmap_hz", manifest) if "fieldmap_hz" in manifest["arrays"] else None
    return manifest, y.astype(np.complex128), s.astype(np.complex128), t, truth


def cmd_estimate(args) -> int:
    from .pipeline import estimate

    manifest, y, s, t, truth = _load_inputs(args.inp)
    mode = args.mode or manifest.get("mode", "fieldmap")
    cfg = _config_from_args(args, mode)
    threads = set_threads(args.threads)
    fat = _fat_from_manifest(manifest) if mode == "waterfat" else None
    est = estimate(y, s, t, mode, fat, cfg.beta, cfg.order, cfg.method, cfg.n_outer, cfg.n_inner, cfg.ict_scale,
                   SweepConfig(cfg.sweep_size, cfg.pwls_cg), truth_hz=truth, threshold_frac=cfg.threshold_frac,
                   dilation=cfg.dilation)
    out = Path(args.out)
    arrays = {
        "fieldmap_hz": (est.fieldmap_hz, "f32"),
        "mask": (est.mask.astype(np.uint8), "u8"),
    }
    if mode == "waterfat":
        from .signal import unflatten

        arrays["water"] = (unflatten(est.water, est.dims), "c64")
        arrays["fat"] = (unflatten(est.fat, est.dims), "c64")
    write_container(out, arrays, est.dims, echo_times=t, n_coils=int(y.shape[0]), mode=mode,
                    run_config=cfg.to_dict(), threads=threads, log="log.csv")
    est.log.to_csv(out / "log.csv")
    last = est.log.rows[-1]
    msg = f"{len(est.log.rows) - 1} iterations, cost {last['cost']:.6g}"
    if last.get("rmse_hz") is not None:
        msg += f", RMSE {last['rmse_hz']:.4g} Hz"
    print(f"wrote {out}: {msg}")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    from .bench import METHODS, reference_solution, run_bench, write_bench_csv
    from .initialize import init_two_echo
    from .pipeline import setup

    manifest, y, s, t, truth = _load_inputs(args.inp)
    mode = manifest.get("mode", "fieldmap")
    if mode != "fieldmap":
        raise ConfigError("bench runs on field-map containers only")
    cfg = _config_from_args(args, mode)
    set_threads(args.threads)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown bench method(s) {bad}; choose from {', '.join(METHODS)}")
    problem, _, _ = setup(y, s, t, mode, None, cfg.beta, cfg.order, None, cfg.threshold_frac, cfg.dilation)
    omega0 = init_two_echo(flatten(y), flatten(s), t, problem.cache.mask)
    ref = reference_solution(problem, omega0, args.ref_iters, cfg.n_inner, cfg.ict_scale)
    truth_om = None if truth is None else 2 * np.pi * flatten(truth)
    rows, logs = run_bench(problem, omega0, ref, methods, cfg.n_outer, args.qm_outer, cfg.n_inner, cfg.ict_scale,
                           args.target, truth_om)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "bench.csv")
    for m, log in logs.items():
        log.to_csv(out / f"log_{m}.csv")
    for r in rows:
        t_hit = "not reached" if r["time_to_target_s"] is None else f"{r['time_to_target_s']:.3f} s"
        print(f"{r['method']:>7}: {t_hit}, final RMSD {r['final_rmsd_hz']:.4g} Hz")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _solver_args(p):
    p.add_argument("--beta", default="2^-4", help="regularization weight; accepts 2^k notation (default 2^-4)")
    p.add_argument("--order", type=int, default=1, choices=(1, 2), help="finite-difference order")
    p.add_argument("--ict-scale", type=float, default=1e-3, help="ICT drop tolerance relative to max|H|")
    p.add_argument("--outer", type=int, default=20, help="outer NCG iterations")
    p.add_argument("--inner", type=int, default=10, help="line-search iterations")
    p.add_argument("--sweep", type=int, default=100, help="water-fat sweep grid size")
    p.add_argument("--pwls-cg", type=int, default=10, help="CG iterations for the PWLS initializer")
    p.add_argument("--threshold", type=float, default=0.1, help="mask threshold, fraction of max magnitude")
    p.add_argument("--dilation", type=int, default=2, help="mask dilation steps")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default all; FIELDKIT_THREADS overrides)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldkit", description="Regularized B0 field-map and water/fat estimation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated phantom container")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=("fieldmap", "waterfat"), default="fieldmap")
    p.add_argument("--dims", default=None, help="nx x ny x nz (default 64x64x40, or 96x72x1 for waterfat)")
    p.add_argument("--coils", type=int, default=None, help="coil count (default 4, or 1 for waterfat)")
    p.add_argument("--snr", default="20", help="SNR in dB, or 'inf' for noiseless data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=None, help="brain phantom magnitude scale")
    p.add_argument("--field", type=float, default=1.5, help="field strength in tesla for the fat spectrum")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a field map (and water/fat images)")
    p.add_argument("--in", dest="inp", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=("fieldmap", "waterfat"), default=None, help="override the container's mode")
    p.add_argument("--method", default="ncg-ic", help="qm, ncg, ncg-d, ncg-ic0 or ncg-ic")
    p.add_argument("--seed", type=int, default=0)
    _solver_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="compare solvers on a field-map container")
    p.add_argument("--in", dest="inp", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--methods", default="qm,ncg,ncg-d,ncg-ic")
    p.add_argument("--qm-outer", type=int, default=200, help="iteration budget for the qm baseline")
    p.add_argument("--ref-iters", type=int, default=60, help="ncg-ic iterations for the reference solution")
    p.add_argument("--target", type=float, default=0.5, help="RMSD target in Hz")
    _solver_args(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        if args.coils is None:
            args.coils = 4 if args.mode == "fieldmap" else 1
        if args.scale is None:
            from .sim import DEFAULT_BRAIN_SCALE

            args.scale = DEFAULT_BRAIN_SCALE
    try:
        return args.func(args)
    except (ConfigError, ContainerError, DegenerateBasisError) as exc:
        print(f"fieldkit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FactorizationError, FloatingPointError) as exc:
        print(f"fieldkit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fieldkit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
