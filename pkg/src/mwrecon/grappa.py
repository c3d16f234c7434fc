"""Linear k-space interpolation: least-squares kernel calibration and fill-in.

Each missing sample is a shift-invariant linear combination of acquired
samples across all coils.  For a target row ``t`` with offset
``m = t % R`` from its governing acquired line ``g = t - m``, the source
rows are ``g + k*R`` for ``by_taps`` values of ``k`` centered on ``g``, and
the source columns span ``2*bx_half + 1`` readout positions centered on the
target column.  Kernels are calibrated from the fully sampled ACS block by
sliding the footprint along the readout axis densely and along ky on the
acquisition lattice, so calibration equations match inference exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .kspace import MultiCoilKSpace, SamplingPattern


@dataclass(frozen=True)
class KernelGeometry:
    """Footprint of the interpolation kernel.

    ``bx_half`` readout neighbors on each side (kernel spans
    ``2*bx_half + 1`` columns) and ``by_taps`` acquired-line taps spaced
    ``R`` rows apart.
    """

    R: int
    bx_half: int = 1
    by_taps: int = 2

    def __post_init__(self):
        if self.R < 2:
            raise ValueError(f"acceleration must be >= 2, got R={self.R}")
        if self.bx_half < 0:
            raise ValueError(f"bx_half must be >= 0, got {self.bx_half}")
        if self.by_taps < 2:
            raise ValueError(f"by_taps must be >= 2, got {self.by_taps}")

    @property
    def kx_width(self) -> int:
        return 2 * self.bx_half + 1

    @property
    def footprint_rows(self) -> int:
        return (self.by_taps - 1) * self.R + 1

    @property
    def gap_index(self) -> int:
        # which inter-tap gap holds the targets (centered convention)
        return (self.by_taps - 1) // 2

    def n_sources(self, n_coils: int) -> int:
        return n_coils * self.by_taps * self.kx_width


@dataclass(frozen=True)
class GrappaKernel:
    """Calibrated weights, indexed [target_coil, m-1, source_coil, by, bx]."""

    geometry: KernelGeometry
    n_coils: int
    weights: np.ndarray

    def __post_init__(self):
        expected = (
            self.n_coils,
            self.geometry.R - 1,
            self.n_coils,
            self.geometry.by_taps,
            self.geometry.kx_width,
        )
        w = np.array(self.weights, dtype=np.complex128, copy=True)
        if w.shape != expected:
            raise ValueError(f"weights shape {w.shape} does not match geometry {expected}")
        if not np.isfinite(w).all():
            raise ValueError("kernel weights contain non-finite values")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def _window_anchor_rows(acs_rows: int, geom: KernelGeometry, row0: int) -> np.ndarray:
    """ACS-internal rows where a footprint can anchor on the acquisition lattice.

    ``row0`` is the absolute grid row of the first ACS row; anchors must sit
    on the stride-R lattice of the full grid so that calibration sees the
    same relative positions the interpolation step will.
    """
    anchors = np.arange(acs_rows - geom.footprint_rows + 1)
    if anchors.size == 0:
        return anchors
    return anchors[(row0 + anchors) % geom.R == 0]


def _source_matrix(acs: np.ndarray, anchors: np.ndarray, geom: KernelGeometry) -> np.ndarray:
    """Flattened source patches, one row per (anchor, column) position.

    Column order is coil-major, then by tap, then bx tap.
    """
    n_coils, _, nx = acs.shape
    cols = sliding_window_view(acs, geom.kx_width, axis=2)  # [c, ky, x0, kx]
    tap_rows = anchors[:, None] + np.arange(geom.by_taps) * geom.R  # [n_anchor, by]
    patches = cols[:, tap_rows, :, :]  # [c, n_anchor, by, x0, kx]
    patches = patches.transpose(1, 3, 0, 2, 4)  # [n_anchor, x0, c, by, kx]
    n_pos = patches.shape[0] * patches.shape[1]
    return patches.reshape(n_pos, geom.n_sources(n_coils))


def build_calibration_system(
    acs: MultiCoilKSpace,
    geom: KernelGeometry,
    target_coil: int,
    offset_m: int,
    row0: int = 0,
):
    """Assemble the least-squares system (A, b) for one (coil, offset) pair.

    Each row of ``A`` is one flattened source patch; the matching entry of
    ``b`` is the ACS value ``m`` rows below the patch's governing acquired
    line.  ``row0`` is the absolute row index of the first ACS row.
    """
    if not 0 <= target_coil < acs.n_coils:
        raise ValueError(f"target_coil {target_coil} out of range for {acs.n_coils} coils")
    if not 1 <= offset_m <= geom.R - 1:
        raise ValueError(f"offset m must be in [1, R-1], got {offset_m}")
    anchors = _window_anchor_rows(acs.ny, geom, row0)
    if anchors.size == 0:
        raise ValueError(
            f"ACS too small for geometry: {acs.ny} rows, footprint needs "
            f"{geom.footprint_rows} rows on the acquisition lattice"
        )
    A = _source_matrix(acs.data, anchors, geom)
    target_rows = anchors + geom.gap_index * geom.R + offset_m
    b = acs.data[target_coil, target_rows, geom.bx_half : acs.nx - geom.bx_half]
    return A, b.reshape(-1)


def calibrate(
    acs: MultiCoilKSpace,
    geom: KernelGeometry,
    ridge: float = 0.0,
    row0: int = 0,
) -> GrappaKernel:
    """Fit kernels for every (target coil, offset) pair from the ACS block.

    ``ridge`` adds Tikhonov damping; with ``ridge == 0`` a rank-deficient
    system raises ``numpy.linalg.LinAlgError``.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    anchors = _window_anchor_rows(acs.ny, geom, row0)
    if anchors.size == 0:
        raise ValueError(
            f"ACS too small for geometry: {acs.ny} rows, footprint needs "
            f"{geom.footprint_rows} rows on the acquisition lattice"
        )
    A = _source_matrix(acs.data, anchors, geom)
    n_unknowns = A.shape[1]
    if A.shape[0] < n_unknowns:
        warnings.warn(
            f"calibration system is underdetermined ({A.shape[0]} rows, "
            f"{n_unknowns} unknowns)",
            stacklevel=2,
        )
    # all (coil, offset) pairs share the source matrix; stack the targets
    B = np.empty((A.shape[0], acs.n_coils * (geom.R - 1)), dtype=np.complex128)
    valid_cols = slice(geom.bx_half, acs.nx - geom.bx_half)
    for i in range(acs.n_coils):
        for m in range(1, geom.R):
            rows = anchors + geom.gap_index * geom.R + m
            B[:, i * (geom.R - 1) + m - 1] = acs.data[i, rows, valid_cols].reshape(-1)
    if ridge == 0.0:
        W, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
        if rank < n_unknowns:
            raise np.linalg.LinAlgError(
                f"singular calibration system (rank {rank} < {n_unknowns}); use ridge > 0"
            )
    else:
        G = A.conj().T @ A + ridge * np.eye(n_unknowns)
        W = np.linalg.solve(G, A.conj().T @ B)
    weights = W.T.reshape(acs.n_coils, geom.R - 1, acs.n_coils, geom.by_taps, geom.kx_width)
    return GrappaKernel(geometry=geom, n_coils=acs.n_coils, weights=weights)


def interpolate(
    kernel: GrappaKernel,
    undersampled: MultiCoilKSpace,
    pattern: SamplingPattern,
) -> MultiCoilKSpace:
    """Fill every missing ky row; acquired rows pass through bit-exactly.

    Footprints that exit the grid read zero-padded sources.
    """
    geom = kernel.geometry
    if geom.R != pattern.R:
        raise ValueError(f"kernel was calibrated for R={geom.R} but pattern has R={pattern.R}")
    if undersampled.n_coils != kernel.n_coils:
        raise ValueError(
            f"kernel expects {kernel.n_coils} coils, data has {undersampled.n_coils}"
        )
    if undersampled.ny != pattern.ny:
        raise ValueError(f"grid has {undersampled.ny} rows but pattern expects {pattern.ny}")
    ny, nx = undersampled.ny, undersampled.nx
    pad_top = geom.gap_index * geom.R
    pad_bottom = (geom.by_taps - 1 - geom.gap_index) * geom.R
    padded = np.pad(
        undersampled.data,
        ((0, 0), (pad_top, pad_bottom), (geom.bx_half, geom.bx_half)),
    )
    cols = sliding_window_view(padded, geom.kx_width, axis=2)  # [c, ky, x, kx]
    out = undersampled.data.copy()
    w_flat = kernel.weights.reshape(kernel.n_coils, geom.R - 1, -1)
    tap_offsets = np.arange(geom.by_taps) * geom.R
    for m in range(1, geom.R):
        targets = pattern.missing_rows[pattern.missing_rows % geom.R == m]
        if targets.size == 0:
            continue
        # anchor (topmost source row) in padded coordinates
        anchors = targets - m - geom.gap_index * geom.R + pad_top
        patches = cols[:, anchors[:, None] + tap_offsets, :, :]  # [c, t, by, x, kx]
        src = patches.transpose(1, 3, 0, 2, 4).reshape(targets.size * nx, -1)
        vals = src @ w_flat[:, m - 1, :].T  # [t*nx, n_coils]
        out[:, targets, :] = vals.reshape(targets.size, nx, kernel.n_coils).transpose(2, 0, 1)
    return MultiCoilKSpace(out)
