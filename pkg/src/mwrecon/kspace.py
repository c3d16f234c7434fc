"""Multi-coil k-space data model, centered FFTs, sampling patterns, and file I/O.

Conventions used throughout the package:

* arrays are indexed ``[coil, ky, kx]``; ``ky`` is the phase-encode axis
  (the only undersampled one), ``kx`` is the fully sampled readout axis,
* Fourier transforms are centered (DC at ``(ny // 2, nx // 2)``) and
  orthonormal, so ``ifft2c(fft2c(x)) == x`` and Parseval holds,
* containers are immutable after construction; every operation returns a
  new object and is safe to call concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MWKS_MAGIC = b"MWKS"
MWKS_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class KSpaceFormatError(ValueError):
    """Raised for malformed .mwks files (bad magic, truncation, bad dims)."""


def _frozen_complex_stack(data, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.complex128, copy=True, order="C")
    if arr.ndim != 3:
        raise ValueError(f"{what} must be a [coil, ky, kx] array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{what} dimensions must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MultiCoilKSpace:
    """Complex k-space samples for all receive coils, shape [n_coils, ny, nx]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_complex_stack(self.data, "k-space"))

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nx(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class CoilImage:
    """Complex image-domain counterpart of :class:`MultiCoilKSpace`."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_complex_stack(self.data, "coil image"))

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nx(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Uniform ky undersampling with a centered, fully sampled ACS block.

    A row is acquired when it lies on the stride-``R`` lattice
    (``ky % R == 0``) or inside the ACS block of ``acs_count`` contiguous
    rows starting at ``acs_start = (ny - acs_count) // 2``.
    """

    ny: int
    R: int
    acs_count: int
    acs_start: int
    mask: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SamplingPattern):
            return NotImplemented
        # the mask is fully determined by these three fields
        return (self.ny, self.R, self.acs_count) == (other.ny, other.R, other.acs_count)

    def __hash__(self):
        return hash((self.ny, self.R, self.acs_count))

    def __post_init__(self):
        if self.R < 2:
            raise ValueError(f"acceleration must be >= 2, got R={self.R}")
        if not 1 <= self.acs_count <= self.ny:
            raise ValueError(f"acs_count must be in [1, ny], got {self.acs_count} for ny={self.ny}")
        if self.acs_start != (self.ny - self.acs_count) // 2:
            raise ValueError("ACS block is not centered")
        expected = _uniform_mask(self.ny, self.R, self.acs_start, self.acs_count)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.shape != (self.ny,) or not np.array_equal(mask, expected):
            raise ValueError("mask does not match the stride/ACS predicate")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def acquired_rows(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def missing_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


def _uniform_mask(ny: int, R: int, acs_start: int, acs_count: int) -> np.ndarray:
    ky = np.arange(ny)
    return (ky % R == 0) | ((ky >= acs_start) & (ky < acs_start + acs_count))


def make_uniform_pattern(ny: int, R: int, acs_count: int) -> SamplingPattern:
    """Build the uniform-undersampling pattern for an ``ny``-row grid."""
    if ny < 1:
        raise ValueError(f"ny must be positive, got {ny}")
    if R < 2:
        raise ValueError(f"acceleration must be >= 2, got R={R}")
    if not 1 <= acs_count <= ny:
        raise ValueError(f"acs_count must be in [1, ny], got {acs_count} for ny={ny}")
    acs_start = (ny - acs_count) // 2
    mask = _uniform_mask(ny, R, acs_start, acs_count)
    return SamplingPattern(ny=ny, R=R, acs_count=acs_count, acs_start=acs_start, mask=mask)


def fft2c(image: CoilImage) -> MultiCoilKSpace:
    """Centered orthonormal 2-D FFT of each coil image."""
    d = np.fft.ifftshift(image.data, axes=(-2, -1))
    d = np.fft.fft2(d, axes=(-2, -1), norm="ortho")
    return MultiCoilKSpace(np.fft.fftshift(d, axes=(-2, -1)))


def ifft2c(kspace: MultiCoilKSpace) -> CoilImage:
    """Centered orthonormal 2-D inverse FFT of each coil's k-space."""
    d = np.fft.ifftshift(kspace.data, axes=(-2, -1))
    d = np.fft.ifft2(d, axes=(-2, -1), norm="ortho")
    return CoilImage(np.fft.fftshift(d, axes=(-2, -1)))


def apply_pattern(full: MultiCoilKSpace, pattern: SamplingPattern) -> MultiCoilKSpace:
    """Zero every non-acquired ky row; acquired rows are copied bit-exactly."""
    if full.ny != pattern.ny:
        raise ValueError(f"grid has {full.ny} rows but pattern expects {pattern.ny}")
    out = np.zeros_like(full.data)
    out[:, pattern.mask, :] = full.data[:, pattern.mask, :]
    return MultiCoilKSpace(out)


def extract_acs(kspace: MultiCoilKSpace, pattern: SamplingPattern) -> MultiCoilKSpace:
    """Return the contiguous fully sampled ACS block (acs_count x nx rows)."""
    if kspace.ny != pattern.ny:
        raise ValueError(f"grid has {kspace.ny} rows but pattern expects {pattern.ny}")
    if pattern.acs_count < 1:
        raise ValueError("pattern has an empty ACS block")
    block = kspace.data[:, pattern.acs_start : pattern.acs_start + pattern.acs_count, :]
    return MultiCoilKSpace(block)


def sos_combine(images: CoilImage) -> np.ndarray:
    """Root-sum-of-squares coil combination; returns a real [ny, nx] image."""
    return np.sqrt(np.sum(np.abs(images.data) ** 2, axis=0))


def save_kspace(path, kspace: MultiCoilKSpace) -> None:
    """Write an .mwks file (header + interleaved float32 re/im pairs)."""
    header = _HEADER.pack(MWKS_MAGIC, MWKS_VERSION, kspace.n_coils, kspace.ny, kspace.nx)
    payload = np.empty(kspace.data.shape + (2,), dtype="<f4")
    payload[..., 0] = kspace.data.real
    payload[..., 1] = kspace.data.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_kspace(path) -> MultiCoilKSpace:
    """Read an .mwks file written by :func:`save_kspace`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise KSpaceFormatError(f"{path}: file shorter than header")
    magic, version, n_coils, ny, nx = _HEADER.unpack_from(raw)
    if magic != MWKS_MAGIC:
        raise KSpaceFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != MWKS_VERSION:
        raise KSpaceFormatError(f"{path}: unsupported format version {version}")
    if min(n_coils, ny, nx) == 0 or n_coils * ny * nx > 2**40:
        raise KSpaceFormatError(f"{path}: bad dimensions {n_coils}x{ny}x{nx}")
    expected = n_coils * ny * nx * 8
    got = len(raw) - _HEADER.size
    if got != expected:
        raise KSpaceFormatError(f"{path}: payload has {got} bytes, header implies {expected}")
    pairs = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_coils, ny, nx, 2)
    return MultiCoilKSpace(pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64))


def save_pattern(path, pattern: SamplingPattern) -> None:
    """Write a sampling pattern as `key = value` text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ny = {pattern.ny}\n")
        fh.write(f"R = {pattern.R}\n")
        fh.write(f"acs_count = {pattern.acs_count}\n")


def load_pattern(path) -> SamplingPattern:
    """Read a sampling pattern written by :func:`save_pattern`."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            try:
                values[key] = int(value.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad integer for key {key!r}") from exc
    missing = {"ny", "R", "acs_count"} - values.keys()
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    return make_uniform_pattern(values["ny"], values["R"], values["acs_count"])
