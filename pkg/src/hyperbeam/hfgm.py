"""HFGM portable binary grid files.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"HFGM"
    4       4     format version (u32, currently 1)
    8       4     nx (u32)
    12      4     ny (u32)
    16      8     dx in meters (f64)
    24      8     dy in meters (f64)
    32      2     channels per cell (u16): 6 for media maps, 1 for planes
    34      2     immersion label (u16, media maps only)
    36      4     PML thickness in cells (u32)
    40      8     boundary_h W/(m^2 C) (f64, media maps only)
    48      8     ambient temperature C (f64, media maps only)
    56      8     Courant factor (f64)
    64      ...   nx*ny records of ``channels`` f64, record index = i*ny + j

Media records hold ``eps_inf, delta_eps, sigma_s, tau, label, reserved``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DomainError, ParseError
from .grid import GridSpec, MediaMap, Tissue

MAGIC = b"HFGM"
VERSION = 1
HEADER = struct.Struct("<4sIIIddHHIddd")
HEADER_SIZE = 64
MEDIA_CHANNELS = 6
assert HEADER.size == HEADER_SIZE


def _header(grid: GridSpec, channels: int, immersion=0, h=0.0, ambient=0.0) -> bytes:
    return HEADER.pack(MAGIC, VERSION, grid.nx, grid.ny, grid.dx, grid.dy, channels,
                       int(immersion), grid.pml_thickness, float(h), float(ambient),
                       grid.courant_factor)


def _write(path, header: bytes, body: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def write_media(media: MediaMap, path: str | os.PathLike) -> None:
    g = media.grid
    body = np.stack(
        [media.eps_inf, media.delta_eps, media.sigma_s, media.tau,
         media.labels.astype(np.float64), np.zeros(g.shape)],
        axis=-1,
    )
    _write(path, _header(g, MEDIA_CHANNELS, media.immersion, media.boundary_h,
                         media.ambient_temp), body)


def write_plane(plane: np.ndarray, grid: GridSpec, path: str | os.PathLike) -> None:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.shape != grid.shape:
        raise DomainError(f"plane shape {plane.shape} does not match grid {grid.shape}")
    _write(path, _header(grid, 1), plane)


def _read(path, expect_channels: int | None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise ParseError("file shorter than the 64-byte header", len(raw))
    magic, version, nx, ny, dx, dy, channels, imm, pml, h, amb, s = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ParseError(f"unsupported format version {version}", 4)
    if expect_channels is not None and channels != expect_channels:
        raise ParseError(f"expected {expect_channels} channels per cell, found {channels}", 32)
    expected = HEADER_SIZE + nx * ny * channels * 8
    if len(raw) != expected:
        raise ParseError(
            f"dimension mismatch: header implies {expected} bytes, file has {len(raw)}",
            min(len(raw), expected),
        )
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE).reshape(nx, ny, channels)
    return (nx, ny, dx, dy, pml, s, channels, imm, h, amb), body


def _grid_from_header(nx, ny, dx, dy, pml, s, grid: GridSpec | None) -> GridSpec:
    if grid is None:
        try:
            return GridSpec(nx=nx, ny=ny, dx=dx, dy=dy, courant_factor=s, pml_thickness=pml)
        except DomainError as exc:
            raise ParseError(f"invalid grid in header: {exc}", 8) from exc
    if (grid.nx, grid.ny, grid.dx, grid.dy) != (nx, ny, dx, dy):
        raise ParseError("grid in file does not match the requested grid", 8)
    return grid


def read_media(path: str | os.PathLike, grid: GridSpec | None = None) -> MediaMap:
    """Load a media map; ``grid``, when given, must match the stored geometry."""
    (nx, ny, dx, dy, pml, s, _, imm, h, amb), body = _read(path, MEDIA_CHANNELS)
    g = _grid_from_header(nx, ny, dx, dy, pml, s, grid)
    labels = body[..., 4]
    bad = ~np.isin(labels, [float(t) for t in Tissue])
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ParseError("invalid tissue label", HEADER_SIZE + (i * ny + j) * 48 + 32)
    eps_inf, delta_eps, sigma_s, tau = (body[..., k] for k in range(4))
    bad = ~((eps_inf >= 1) & (delta_eps >= 0) & (sigma_s >= 0) & (tau > 0))
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ParseError("Debye parameters violate invariants", HEADER_SIZE + (i * ny + j) * 48)
    try:
        return MediaMap(
            grid=g,
            eps_inf=eps_inf.copy(), delta_eps=delta_eps.copy(),
            sigma_s=sigma_s.copy(), tau=tau.copy(),
            labels=labels.astype(np.int8),
            immersion=Tissue(imm), boundary_h=h, ambient_temp=amb,
        )
    except (DomainError, ValueError) as exc:
        raise ParseError(f"media map invalid: {exc}", 36) from exc


def read_plane(path: str | os.PathLike) -> tuple[np.ndarray, tuple[int, int, float, float]]:
    (nx, ny, dx, dy, *_), body = _read(path, 1)
    return body[..., 0].copy(), (nx, ny, dx, dy)
