"""Command-line front end: phantom | undersample | recon | eval | compare | ablate.

All tabular output is UTF-8 CSV with a header row.  Ablation sweeps are
fully reproducible: every cell's seed is derived by hashing the master seed
with the cell's axis values, and rows are ordered by axis tuple, so two
runs with the same config produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import (
    ConfigError,
    build_arch,
    get_list,
    get_scalar,
    load_config,
    parse_filter_exponent,
    parse_grappa_kernel,
    parse_layer_spec,
)
from .grappa import KernelGeometry
from .kspace import apply_pattern, load_kspace, make_uniform_pattern, save_kspace, save_pattern
from .metrics import evaluate
from .network import LayerSpec, NetworkArch, OptimizerConfig
from .phantom import make_coil_maps, shepp_logan, simulate_kspace
from .pipelines import (
    DEFAULT_FILTER_EXPONENTS,
    METHODS,
    MultiWeightConfig,
    ReconConfig,
    make_multiweight_config,
    reconstruct,
    reconstruct_image,
)

RECON_COLUMNS = ("method", "R", "acs", "seed", "psnr", "ssim", "rmse", "train_iters", "wall_ms")
ABLATE_COLUMNS = (
    "method", "R", "acs", "P", "L", "depth", "rep", "seed",
    "psnr", "ssim", "rmse", "train_iters", "status",
)
CURVE_COLUMNS = ("method", "R", "acs", "P", "L", "depth", "rep", "seed", "iteration", "loss")
DEFAULT_ABLATION_EXPONENTS = (0.6, 0.2, 0.4, 0.3)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _seed_of(args, entries=None, source: str = "<config>") -> int:
    if args.seed is not None:
        return args.seed
    if entries is not None:
        return get_scalar(entries, "seed", int, 0, source)
    return 0


def _normalize_method(name: str) -> str:
    method = name.strip().lower().replace("-", "_")
    if method not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of "
                          + ", ".join(m.replace("_", "-") for m in METHODS))
    return method


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom(args) -> int:
    ny = args.ny or args.size
    nx = args.nx or args.size
    img = shepp_logan(ny, nx)
    maps = make_coil_maps(args.coils, ny, nx, seed=args.seed)
    ks = simulate_kspace(img, maps, snr_db=args.snr, seed=args.seed)
    save_kspace(args.out, ks)
    _say(args, f"wrote {args.coils}-coil {ny}x{nx} phantom k-space to {args.out}")
    return 0


def cmd_undersample(args) -> int:
    ks = load_kspace(args.input)
    pattern = make_uniform_pattern(ks.ny, args.R, args.acs)
    save_kspace(args.out, apply_pattern(ks, pattern))
    if args.pattern_out:
        save_pattern(args.pattern_out, pattern)
    _say(args, f"kept {int(pattern.mask.sum())}/{ks.ny} rows (R={args.R}, acs={args.acs})")
    return 0


def _optimizer_from(entries, args, source) -> OptimizerConfig:
    kind = args.optimizer or get_scalar(entries, "optimizer", str, "adam", source)
    kind = {"adam": "adam", "sgd": "sgd_momentum", "sgd_momentum": "sgd_momentum"}.get(kind)
    if kind is None:
        raise ConfigError(f"unknown optimizer {args.optimizer!r}")
    return OptimizerConfig(
        kind=kind,
        lr=args.lr if args.lr is not None else get_scalar(entries, "lr", float, 0.001, source),
        momentum=get_scalar(entries, "momentum", float, 0.9, source),
        iters=args.iters if args.iters is not None else get_scalar(entries, "iters", int, 1000, source),
    )


def _arch_from(entries, n_coils, R, source) -> NetworkArch | None:
    layer_values = get_list(entries, "layers", parse_layer_spec, source)
    if not layer_values:
        return None
    skip_value = get_scalar(entries, "skip", parse_layer_spec, None, source)
    return build_arch(layer_values, 2 * n_coils, 2 * (R - 1), skip_value)


def _multiweight_from(entries, args, ny, nx, source) -> MultiWeightConfig | None:
    if args.filters is not None:
        # `--filters ""` selects the bare all-pass bank (L = 0)
        exponents = [parse_filter_exponent(p) for p in args.filters.split(",") if p.strip()]
    elif "filter" in entries:
        exponents = get_list(entries, "filter", parse_filter_exponent, source)
    else:
        exponents = None
    eps = args.filter_eps if args.filter_eps is not None else get_scalar(
        entries, "filter_eps", float, None, source
    )
    if exponents is None and eps is None:
        return None
    if exponents is None:
        exponents = DEFAULT_FILTER_EXPONENTS
    return make_multiweight_config(ny, nx, exponents, eps=eps)


def _build_recon_config(args, measured, method, pattern) -> ReconConfig:
    source = str(args.config) if args.config else "<cli>"
    entries = load_config(args.config) if args.config else {}
    optimizer = _optimizer_from(entries, args, source)
    arch = _arch_from(entries, measured.n_coils, pattern.R, source)
    multiweight = None
    if method in ("mw_raki", "mw_rraki"):
        multiweight = _multiweight_from(entries, args, measured.ny, measured.nx, source)
    geometry = None
    if args.grappa_kernel:
        bx, by = parse_grappa_kernel(args.grappa_kernel)
        geometry = KernelGeometry(R=pattern.R, bx_half=bx, by_taps=by)
    return ReconConfig(
        method=method,
        pattern=pattern,
        seed=args.seed,
        arch=arch,
        optimizer=optimizer,
        multiweight=multiweight,
        grappa_geometry=geometry,
        ridge=args.ridge,
    )


def _metrics_row(method, pattern, seed, result, ref_sos, wall_ms):
    row = {
        "method": method.replace("_", "-"),
        "R": pattern.R,
        "acs": pattern.acs_count,
        "seed": seed,
        "train_iters": result.config["iters"],
        "wall_ms": wall_ms,
    }
    if ref_sos is not None:
        report = evaluate(result.sos, ref_sos)
        row.update(psnr=report.psnr_db, ssim=report.ssim, rmse=report.rmse_pct)
    return row


def cmd_recon(args) -> int:
    method = _normalize_method(args.method)
    measured = load_kspace(args.input)
    pattern = make_uniform_pattern(measured.ny, args.R, args.acs)
    cfg = _build_recon_config(args, measured, method, pattern)
    ref_sos = reconstruct_image(load_kspace(args.ref)) if args.ref else None
    t0 = time.perf_counter()
    result = reconstruct(measured, cfg)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    save_kspace(args.out, result.kspace)
    if args.report:
        row = _metrics_row(method, pattern, args.seed, result, ref_sos, wall_ms)
        _write_csv(args.report, RECON_COLUMNS, [row])
    _say(args, f"{method.replace('_', '-')} reconstruction written to {args.out} ({wall_ms:.0f} ms)")
    return 0


def cmd_eval(args) -> int:
    recon_sos = reconstruct_image(load_kspace(args.recon))
    ref_sos = reconstruct_image(load_kspace(args.ref))
    report = evaluate(recon_sos, ref_sos)
    _write_csv(args.report, ("psnr", "ssim", "rmse"),
               [{"psnr": report.psnr_db, "ssim": report.ssim, "rmse": report.rmse_pct}])
    _say(args, f"psnr={report.psnr_db:.2f} dB  ssim={report.ssim:.4f}  rmse={report.rmse_pct:.2f}%")
    return 0


def cmd_compare(args) -> int:
    full = load_kspace(args.input)
    pattern = make_uniform_pattern(full.ny, args.R, args.acs)
    measured = apply_pattern(full, pattern)
    ref_sos = reconstruct_image(full)
    rows = []
    for name in args.methods.split(","):
        method = _normalize_method(name)
        cfg = _build_recon_config(args, measured, method, pattern)
        t0 = time.perf_counter()
        result = reconstruct(measured, cfg)
        wall_ms = 1e3 * (time.perf_counter() - t0)
        rows.append(_metrics_row(method, pattern, args.seed, result, ref_sos, wall_ms))
        _say(args, f"{method}: psnr={rows[-1]['psnr']:.2f}")
    _write_csv(args.report, RECON_COLUMNS, rows)
    return 0


# ---------------------------------------------------------------------------
# ablation runner

def _cell_seed(master: int, *parts) -> int:
    text = "|".join(["mwrecon", str(master), *(str(p) for p in parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _depth_arch(method: str, depth: int, n_coils: int, R: int) -> NetworkArch:
    out = 2 * (R - 1)
    wide = LayerSpec(32, 5, 2, "relu")
    bottleneck = LayerSpec(8, 1, 1, "relu")
    final = LayerSpec(out, 3, 2, "identity")
    presets = {
        1: (final,),
        2: (wide, final),
        3: (wide, bottleneck, final),
        5: (wide, bottleneck, LayerSpec(8, 1, 1, "relu"), LayerSpec(8, 1, 1, "relu"), final),
    }
    if depth not in presets:
        raise ConfigError(f"unsupported depth {depth}; choose from {sorted(presets)}")
    layers = presets[depth]
    skip = None
    if method in ("rraki", "mw_rraki"):
        rf_cols = sum(s.kx_width - 1 for s in layers) + 1
        skip = LayerSpec(out, min(5, rf_cols), 2, "identity")
    return NetworkArch(in_channels=2 * n_coils, layers=layers, dilation=1, skip=skip)


def _load_ablation_scene(entries, source):
    input_path = get_scalar(entries, "input", str, None, source)
    if input_path:
        return load_kspace(input_path)
    size = get_scalar(entries, "size", int, None, source)
    if size is None:
        raise ConfigError(f"{source}: ablation config needs `input = file.mwks` or `size = N`")
    coils = get_scalar(entries, "coils", int, 8, source)
    snr = get_scalar(entries, "snr_db", float, None, source)
    scene_seed = get_scalar(entries, "scene_seed", int, 7, source)
    img = shepp_logan(size, size)
    maps = make_coil_maps(coils, size, size, seed=scene_seed)
    return simulate_kspace(img, maps, snr_db=snr, seed=scene_seed)


def _run_ablation_cell(full, ref_sos, cell, base_exponents, optimizer):
    method, R, acs, p_value, n_filters, depth, rep, seed = cell
    pattern = make_uniform_pattern(full.ny, R, acs)
    measured = apply_pattern(full, pattern)
    arch = None
    if depth is not None and method != "grappa":
        arch = _depth_arch(method, depth, full.n_coils, R)
    multiweight = None
    if method in ("mw_raki", "mw_rraki"):
        if p_value is not None:
            exponents = (p_value,)
        elif n_filters is not None:
            if n_filters > len(base_exponents):
                raise ConfigError(
                    f"L={n_filters} exceeds the configured filter list ({len(base_exponents)})"
                )
            exponents = tuple(base_exponents[:n_filters])
        else:
            exponents = DEFAULT_ABLATION_EXPONENTS[:2]
        multiweight = make_multiweight_config(full.ny, full.nx, exponents)
    cfg = ReconConfig(
        method=method,
        pattern=pattern,
        seed=seed,
        arch=arch,
        optimizer=optimizer,
        multiweight=multiweight,
    )
    result = reconstruct(measured, cfg)
    report = evaluate(result.sos, ref_sos)
    row = {
        "method": method.replace("_", "-"),
        "R": R, "acs": acs, "P": p_value, "L": n_filters, "depth": depth,
        "rep": rep, "seed": seed,
        "psnr": report.psnr_db, "ssim": report.ssim, "rmse": report.rmse_pct,
        "train_iters": result.config["iters"], "status": "ok",
    }
    curves = []
    if result.loss_histories:
        mean_curve = np.mean(np.stack(result.loss_histories), axis=0)
        for it, value in enumerate(mean_curve, start=1):
            curves.append({
                "method": row["method"], "R": R, "acs": acs, "P": p_value, "L": n_filters,
                "depth": depth, "rep": rep, "seed": seed,
                "iteration": it, "loss": float(value),
            })
    return row, curves


def cmd_ablate(args) -> int:
    if not args.config:
        raise ConfigError("ablate needs --config FILE")
    source = str(args.config)
    entries = load_config(args.config)
    full = _load_ablation_scene(entries, source)
    ref_sos = reconstruct_image(full)

    methods = [_normalize_method(m) for m in get_list(entries, "method", str, source)]
    if not methods:
        raise ConfigError(f"{source}: ablation config needs at least one `method = ...` line")
    r_values = get_list(entries, "R", int, source) or [4]
    acs_values = get_list(entries, "acs", int, source) or [full.ny // 4]
    p_values = get_list(entries, "P", float, source) or [None]
    l_values = get_list(entries, "L", int, source) or [None]
    depth_values = get_list(entries, "depth", int, source) or [None]
    reps = get_scalar(entries, "reps", int, 1, source)
    if p_values != [None] and l_values != [None]:
        raise ConfigError(f"{source}: sweep either P or L, not both")
    axes = [methods, r_values, acs_values, p_values, l_values, depth_values, list(range(reps))]
    if all(len(axis) < 2 for axis in axes):
        raise ConfigError(f"{source}: ablation needs at least one axis with two or more values")

    master = args.seed if args.seed is not None else get_scalar(entries, "master_seed", int, 0, source)
    base_exponents = tuple(get_list(entries, "filter", parse_filter_exponent, source)) or DEFAULT_ABLATION_EXPONENTS
    optimizer = _optimizer_from(entries, args, source)

    cells = []
    for method in methods:
        for R in r_values:
            for acs in acs_values:
                for p in p_values:
                    for l_count in l_values:
                        for depth in depth_values:
                            for rep in range(reps):
                                seed = _cell_seed(master, method, R, acs, p, l_count, depth, rep)
                                cells.append((method, R, acs, p, l_count, depth, rep, seed))
    cells.sort(key=lambda c: tuple(str(v) for v in c))

    def run(cell):
        try:
            return _run_ablation_cell(full, ref_sos, cell, base_exponents, optimizer)
        except Exception as exc:  # cell failures must not stop the sweep
            method, R, acs, p, l_count, depth, rep, seed = cell
            row = {
                "method": method.replace("_", "-"), "R": R, "acs": acs, "P": p, "L": l_count,
                "depth": depth, "rep": rep, "seed": seed, "train_iters": optimizer.iters,
                "status": f"error: {exc}",
            }
            return row, []

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run, cells))
    else:
        outcomes = [run(cell) for cell in cells]

    rows = [row for row, _ in outcomes]
    _write_csv(args.out, ABLATE_COLUMNS, rows)
    if args.curves:
        curve_rows = [c for _, curves in outcomes for c in curves]
        _write_csv(args.curves, CURVE_COLUMNS, curve_rows)
    failures = [r for r in rows if r["status"] != "ok"]
    _say(args, f"{len(rows)} cells -> {args.out} ({len(failures)} failed)")
    if failures:
        print(f"error: {failures[0]['status'][7:]}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwrecon",
        description="Scan-specific parallel MRI reconstruction in k-space.",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel ablation cells (default 1)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="synthesize multi-coil phantom k-space")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--ny", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--coils", type=int, default=8)
    p.add_argument("--snr", type=float, default=None, help="SNR in dB (omit for noise-free)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("undersample", help="apply a uniform sampling pattern")
    p.add_argument("--input", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--acs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pattern-out")
    p.set_defaults(func=cmd_undersample)

    def add_recon_options(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--iters", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--optimizer", choices=("adam", "sgd", "sgd_momentum"))
        p.add_argument("--filters", help="high-pass exponents, e.g. 0.6,0.2")
        p.add_argument("--filter-eps", type=float, dest="filter_eps")
        p.add_argument("--ridge", type=float, default=0.0)
        p.add_argument("--grappa-kernel", dest="grappa_kernel", help="e.g. bx:1,by:2")

    p = sub.add_parser("recon", help="reconstruct undersampled k-space")
    p.add_argument("--method", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--acs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="CSV report path")
    p.add_argument("--ref", help="fully sampled reference .mwks for metrics")
    add_recon_options(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="compare two k-space files on their SOS images")
    p.add_argument("--recon", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run several methods on one scan")
    p.add_argument("--input", required=True, help="fully sampled .mwks reference")
    p.add_argument("--methods", required=True, help="comma-separated method list")
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--acs", type=int, required=True)
    p.add_argument("--report", required=True)
    add_recon_options(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="run a reproducible parameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="per-iteration loss curve CSV")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd", "sgd_momentum"))
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
