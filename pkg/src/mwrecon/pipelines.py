"""End-to-end reconstruction flows for every supported method.

Scan-specific methods train one network per target coil on training pairs
cut from the ACS block, slide it over the acquired-line lattice of the full
grid, write the predicted missing rows, and finally overwrite every
acquired row with the measured data (data consistency).

Multi-weight variants run the same flow on a batch of weighted copies of
the measurement (one per weighting matrix, plus the untouched original).
The batch shares one network per coil; at inference each weighted estimate
is divided by its weighting matrix where that is safely invertible, and
the final value of each missing sample is the mean over the valid branches
(the all-pass branch is always valid).

Networks ride the acquired-line lattice: a ky tap spacing of ``R`` rows on
the full grid is realized by extracting every ``R``-th row and running the
convolutions with unit ky spacing on the compacted array, which computes
exactly the sums an ``R``-dilated convolution evaluated at lattice offsets
would.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .filters import WeightFilter, all_pass_filter, make_filter, FilterParams, remove_filter
from .grappa import KernelGeometry, calibrate, interpolate
from .kspace import CoilImage, MultiCoilKSpace, SamplingPattern, extract_acs, ifft2c, sos_combine
from .network import (
    LayerSpec,
    NetworkArch,
    OptimizerConfig,
    ScanNetwork,
    TrainGeometry,
    TrainingDivergedError,
    TrainingSet,
    forward,
    init_network,
    train,
)

METHODS = ("grappa", "raki", "rraki", "mw_raki", "mw_rraki")

DEFAULT_FILTER_EXPONENTS = (0.6, 0.2)


@dataclass(frozen=True)
class MultiWeightConfig:
    """An ordered weighting bank: the all-pass identity plus L high-pass filters."""

    filters: tuple[WeightFilter, ...]
    eps: float | None = None

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise ValueError("multi-weight bank needs at least the all-pass filter")
        n_all_pass = sum(f.is_all_pass for f in filters)
        if n_all_pass != 1:
            raise ValueError(f"multi-weight bank needs exactly one all-pass filter, got {n_all_pass}")
        dims = {(f.ny, f.nx) for f in filters}
        if len(dims) != 1:
            raise ValueError(f"filters disagree on grid dims: {sorted(dims)}")
        # canonical order: all-pass first
        filters = tuple(sorted(filters, key=lambda f: not f.is_all_pass))
        object.__setattr__(self, "filters", filters)
        if self.eps is not None and self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def n_highpass(self) -> int:
        return len(self.filters) - 1


def make_multiweight_config(
    ny: int,
    nx: int,
    exponents=DEFAULT_FILTER_EXPONENTS,
    M: float = 1.0,
    D0: float = 1.0,
    eps: float | None = None,
) -> MultiWeightConfig:
    """Bank with one high-pass filter per exponent plus the all-pass branch."""
    filters = [all_pass_filter(ny, nx)]
    filters += [make_filter(FilterParams(M=M, D0=D0, P=p), ny, nx) for p in exponents]
    return MultiWeightConfig(filters=tuple(filters), eps=eps)


@dataclass(frozen=True)
class ReconConfig:
    method: str
    pattern: SamplingPattern
    seed: int = 0
    arch: NetworkArch | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    multiweight: MultiWeightConfig | None = None
    grappa_geometry: KernelGeometry | None = None
    ridge: float = 0.0
    normalize: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if self.multiweight is not None and self.method not in ("mw_raki", "mw_rraki"):
            raise ValueError(f"multiweight config does not apply to method {self.method!r}")


@dataclass
class ReconResult:
    kspace: MultiCoilKSpace
    coil_images: CoilImage
    sos: np.ndarray
    loss_histories: tuple
    timings_ms: dict
    config: dict


def default_arch(method: str, n_coils: int, R: int) -> NetworkArch:
    """Per-method network layout (unit ky spacing; lattice-compacted inputs)."""
    out = 2 * (R - 1)
    wide = LayerSpec(32, 5, 2, "relu")
    bottleneck = LayerSpec(8, 1, 1, "relu")
    final = LayerSpec(out, 3, 2, "identity")
    skip = LayerSpec(out, 5, 2, "identity")
    if method == "raki":
        layers, skip_spec = (wide, bottleneck, final), None
    elif method == "rraki":
        layers, skip_spec = (wide, bottleneck, final), skip
    elif method == "mw_raki":
        layers, skip_spec = (wide, final), None
    elif method == "mw_rraki":
        layers, skip_spec = (wide, bottleneck, final), skip
    else:
        raise ValueError(f"no network architecture for method {method!r}")
    return NetworkArch(in_channels=2 * n_coils, layers=layers, dilation=1, skip=skip_spec)


def build_training_pairs(
    acs: MultiCoilKSpace,
    R: int,
    arch: NetworkArch,
    target_coil: int,
    acs_row0: int = 0,
) -> TrainingSet:
    """Cut (source window, missing-row targets) pairs from a fully sampled block.

    Sources are the ACS rows on the acquisition lattice (``acs_row0`` is the
    absolute grid row of the first ACS row), real/imag split into channels.
    Targets are the R-1 rows between acquired lines at every valid window
    position; every value is a raw ACS sample.
    """
    if arch.dilation != 1:
        raise ValueError("training pairs use lattice-compacted rows; arch must have dilation 1")
    if not 0 <= target_coil < acs.n_coils:
        raise ValueError(f"target_coil {target_coil} out of range for {acs.n_coils} coils")
    if arch.in_channels != 2 * acs.n_coils:
        raise ValueError(
            f"arch expects {arch.in_channels} input channels, data provides {2 * acs.n_coils}"
        )
    if arch.out_channels != 2 * (R - 1):
        raise ValueError(
            f"arch emits {arch.out_channels} channels but R={R} needs {2 * (R - 1)}"
        )
    lat = np.arange(acs.ny)[(acs_row0 + np.arange(acs.ny)) % R == 0]
    taps = arch.ky_taps_excess
    gap = arch.target_row_gap
    min_rows = taps * R + 1
    n_win = lat.size - taps
    while n_win > 0 and lat[n_win - 1 + gap] + (R - 1) > acs.ny - 1:
        n_win -= 1
    if n_win < 1:
        raise ValueError(
            f"ACS too small: {acs.ny} rows; this architecture needs at least "
            f"{min_rows} fully sampled rows (plus shift room for the R-1 targets)"
        )
    used = lat[: n_win + taps]
    compact = acs.data[:, used, :]
    sources = np.concatenate([compact.real, compact.imag], axis=0)[None]
    ow = acs.nx - (arch.rf_cols - 1)
    tx = arch.target_col_offset
    targets = np.empty((1, 2 * (R - 1), n_win, ow))
    anchor_rows = lat[gap : gap + n_win]
    for m in range(1, R):
        block = acs.data[target_coil, anchor_rows + m, tx : tx + ow]
        targets[0, m - 1] = block.real
        targets[0, (R - 1) + m - 1] = block.imag
    geometry = TrainGeometry(R=R, row_gap=gap, col_offset=tx)
    return TrainingSet(sources=sources, targets=targets, geometry=geometry)


def build_mw_batch(kspace: MultiCoilKSpace, mw: MultiWeightConfig) -> np.ndarray:
    """Stack weighted copies along a leading batch axis; entry 0 is the original."""
    if (mw.filters[0].ny, mw.filters[0].nx) != (kspace.ny, kspace.nx):
        raise ValueError(
            f"grid is {kspace.ny}x{kspace.nx} but filters are "
            f"{mw.filters[0].ny}x{mw.filters[0].nx}"
        )
    return np.stack([kspace.data * f.h for f in mw.filters])


def reconstruct_image(kspace: MultiCoilKSpace) -> np.ndarray:
    """Per-coil inverse FFT followed by root-sum-of-squares combination."""
    return sos_combine(ifft2c(kspace))


def _require_consistent(measured: MultiCoilKSpace, pattern: SamplingPattern) -> None:
    if measured.ny != pattern.ny:
        raise ValueError(f"grid has {measured.ny} rows but pattern expects {pattern.ny}")
    if pattern.mask.all():
        raise ValueError("nothing to reconstruct: the pattern acquires every row")
    if np.any(measured.data[:, ~pattern.mask, :] != 0):
        raise ValueError("measured data has nonzero samples on rows the pattern marks missing")


def _resolve_arch(cfg: ReconConfig, n_coils: int, R: int) -> NetworkArch:
    arch = cfg.arch if cfg.arch is not None else default_arch(cfg.method, n_coils, R)
    if arch.dilation != 1:
        raise ValueError("reconstruction realizes R-spaced taps by row compaction; use dilation 1")
    if arch.in_channels != 2 * n_coils:
        raise ValueError(f"arch expects {arch.in_channels} channels, data provides {2 * n_coils}")
    if arch.out_channels != 2 * (R - 1):
        raise ValueError(f"arch emits {arch.out_channels} channels but R={R} needs {2 * (R - 1)}")
    return arch


def _predict_full_grid(net: ScanNetwork, x_padded: np.ndarray, R: int, ny: int):
    """Network outputs as complex row predictions, one [ny?, nx] grid per offset m.

    ``x_padded`` holds the lattice-compacted, zero-padded inputs; output row
    ``o`` of the network predicts original rows ``o*R + m``.
    """
    out = forward(net, x_padded)
    n_half = out.shape[1] // 2
    return out[:, :n_half], out[:, n_half:]


def _scan_specific_reconstruct(
    measured: MultiCoilKSpace,
    cfg: ReconConfig,
    filters: tuple[WeightFilter, ...],
    eps: float | None,
) -> ReconResult:
    pattern = cfg.pattern
    _require_consistent(measured, pattern)
    R = pattern.R
    n_coils, ny, nx = measured.n_coils, measured.ny, measured.nx
    arch = _resolve_arch(cfg, n_coils, R)

    scale = float(np.max(np.abs(measured.data))) if cfg.normalize else 1.0
    if scale == 0:
        raise ValueError("measured k-space is identically zero")
    base = measured.data / scale
    weighted = [base * f.h for f in filters]

    t0 = time.perf_counter()
    acs_sl = slice(pattern.acs_start, pattern.acs_start + pattern.acs_count)
    training_sets = []
    for coil in range(n_coils):
        per_filter = [
            build_training_pairs(
                MultiCoilKSpace(w[:, acs_sl, :]), R, arch, coil, acs_row0=pattern.acs_start
            )
            for w in weighted
        ]
        training_sets.append(
            TrainingSet(
                sources=np.concatenate([ts.sources for ts in per_filter]),
                targets=np.concatenate([ts.targets for ts in per_filter]),
                geometry=per_filter[0].geometry,
            )
        )
    nets, histories = [], []
    for coil in range(n_coils):
        net0 = init_network(arch, cfg.seed + coil)
        try:
            net, losses = train(net0, training_sets[coil], cfg.optimizer)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"coil {coil}: {exc}") from exc
        nets.append(net)
        histories.append(losses)
    t_train = time.perf_counter()

    # inference: slide over the acquired-line lattice of the full grid
    lat = np.arange(0, ny, R)
    compact = np.stack([w[:, lat, :] for w in weighted])  # [n_f, n_c, n_lat, nx]
    x = np.concatenate([compact.real, compact.imag], axis=1)
    gap = arch.target_row_gap
    taps = arch.ky_taps_excess
    tx = arch.target_col_offset
    x = np.pad(x, ((0, 0), (0, 0), (gap, taps - gap), (tx, arch.rf_cols - 1 - tx)))
    estimates = [w.copy() for w in weighted]
    n_lat = lat.size
    for coil, net in enumerate(nets):
        re_part, im_part = _predict_full_grid(net, x, R, ny)
        for m in range(1, R):
            rows = lat + m
            keep = rows < ny
            vals = re_part[:, m - 1][:, keep, :] + 1j * im_part[:, m - 1][:, keep, :]
            for j in range(len(filters)):
                estimates[j][coil, rows[keep], :] = vals[j]
    t_infer = time.perf_counter()

    # de-weight each branch and average the valid ones per location
    acc = np.zeros((n_coils, ny, nx), dtype=np.complex128)
    count = np.zeros((ny, nx))
    for est, f in zip(estimates, filters):
        deweighted, valid = remove_filter(MultiCoilKSpace(est), f, eps)
        acc += deweighted.data * valid
        count += valid
    combined = acc / count  # all-pass branch keeps count >= 1 everywhere

    final = combined * scale
    final[:, pattern.mask, :] = measured.data[:, pattern.mask, :]
    result_kspace = MultiCoilKSpace(final)
    images = ifft2c(result_kspace)
    t_end = time.perf_counter()
    return ReconResult(
        kspace=result_kspace,
        coil_images=images,
        sos=sos_combine(images),
        loss_histories=tuple(histories),
        timings_ms={
            "train": 1e3 * (t_train - t0),
            "infer": 1e3 * (t_infer - t_train),
            "total": 1e3 * (t_end - t0),
        },
        config={
            "method": cfg.method,
            "R": R,
            "acs_count": pattern.acs_count,
            "seed": cfg.seed,
            "iters": cfg.optimizer.iters,
            "n_highpass": len(filters) - 1,
            "normalization_scale": scale,
        },
    )


def raki_reconstruct(measured: MultiCoilKSpace, cfg: ReconConfig) -> ReconResult:
    """Scan-specific reconstruction without weighting (methods raki / rraki)."""
    if cfg.method not in ("raki", "rraki"):
        raise ValueError(f"raki_reconstruct got method {cfg.method!r}")
    filters = (all_pass_filter(measured.ny, measured.nx),)
    return _scan_specific_reconstruct(measured, cfg, filters, eps=None)


def mw_reconstruct(measured: MultiCoilKSpace, cfg: ReconConfig) -> ReconResult:
    """Multi-weight scan-specific reconstruction (methods mw_raki / mw_rraki)."""
    if cfg.method not in ("mw_raki", "mw_rraki"):
        raise ValueError(f"mw_reconstruct got method {cfg.method!r}")
    mw = cfg.multiweight
    if mw is None:
        mw = make_multiweight_config(measured.ny, measured.nx)
    if (mw.filters[0].ny, mw.filters[0].nx) != (measured.ny, measured.nx):
        raise ValueError("multiweight filters do not match the measurement grid")
    return _scan_specific_reconstruct(measured, cfg, mw.filters, eps=mw.eps)


def grappa_reconstruct(measured: MultiCoilKSpace, cfg: ReconConfig) -> ReconResult:
    """Linear kernel calibration and interpolation."""
    if cfg.method != "grappa":
        raise ValueError(f"grappa_reconstruct got method {cfg.method!r}")
    pattern = cfg.pattern
    if measured.ny != pattern.ny:
        raise ValueError(f"grid has {measured.ny} rows but pattern expects {pattern.ny}")
    geom = cfg.grappa_geometry or KernelGeometry(R=pattern.R)
    if geom.R != pattern.R:
        raise ValueError(f"kernel geometry R={geom.R} does not match pattern R={pattern.R}")
    t0 = time.perf_counter()
    acs = extract_acs(measured, pattern)
    kernel = calibrate(acs, geom, ridge=cfg.ridge, row0=pattern.acs_start)
    t_cal = time.perf_counter()
    filled = interpolate(kernel, measured, pattern)
    images = ifft2c(filled)
    t_end = time.perf_counter()
    return ReconResult(
        kspace=filled,
        coil_images=images,
        sos=sos_combine(images),
        loss_histories=(),
        timings_ms={
            "train": 1e3 * (t_cal - t0),
            "infer": 1e3 * (t_end - t_cal),
            "total": 1e3 * (t_end - t0),
        },
        config={
            "method": cfg.method,
            "R": pattern.R,
            "acs_count": pattern.acs_count,
            "seed": cfg.seed,
            "iters": 0,
            "n_highpass": 0,
            "normalization_scale": 1.0,
        },
    )


def reconstruct(measured: MultiCoilKSpace, cfg: ReconConfig) -> ReconResult:
    """Dispatch to the configured method."""
    if cfg.method == "grappa":
        return grappa_reconstruct(measured, cfg)
    if cfg.method in ("raki", "rraki"):
        return raki_reconstruct(measured, cfg)
    return mw_reconstruct(measured, cfg)
