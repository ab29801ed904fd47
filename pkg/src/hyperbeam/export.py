"""CSV tables and portable-pixmap previews."""

from __future__ import annotations

import csv
import os
import re

import numpy as np

from .errors import ParseError

# Fixed preview colormap: (position, r, g, b), linearly interpolated.
COLORMAP_STOPS = (
    (0.00, 0, 0, 0),
    (0.25, 48, 18, 140),
    (0.50, 190, 40, 90),
    (0.75, 250, 150, 30),
    (1.00, 255, 255, 220),
)


def colorize(values: np.ndarray, vmin: float | None = None, vmax: float | None = None,
             log_db: float | None = None) -> np.ndarray:
    """Map a 2D array to uint8 RGB through :data:`COLORMAP_STOPS`.

    With ``log_db`` set, values are shown in dB relative to the maximum and
    clipped at ``-log_db``. Non-finite cells render black.
    """
    v = np.asarray(values, dtype=float)
    if log_db is not None:
        peak = np.nanmax(v) if v.size else 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            v = 10 * np.log10(np.where(v > 0, v / peak, 0.0)) if peak > 0 else np.zeros_like(v)
        vmin, vmax = -float(log_db), 0.0
    finite = np.isfinite(v)
    if vmin is None:
        vmin = float(np.min(v[finite])) if finite.any() else 0.0
    if vmax is None:
        vmax = float(np.max(v[finite])) if finite.any() else 1.0
    lo, hi = float(vmin), float(vmax)
    span = hi - lo if hi > lo else 1.0
    s = np.clip((np.where(finite, v, lo) - lo) / span, 0.0, 1.0)
    pos = np.array([p[0] for p in COLORMAP_STOPS])
    rgb = np.stack(
        [np.interp(s, pos, [p[k] for p in COLORMAP_STOPS]) for k in (1, 2, 3)], axis=-1
    )
    rgb[~finite] = 0
    return np.rint(rgb).astype(np.uint8)


def write_ppm(path: str | os.PathLike, values: np.ndarray, **kwargs) -> None:
    """Binary P6 preview with +x to the right and +y up."""
    rgb = colorize(values, **kwargs)
    img = np.ascontiguousarray(np.flipud(np.transpose(rgb, (1, 0, 2))))
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary P6 file back as an (h, w, 3) uint8 array (no comments)."""
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ParseError(f"{path}: not a binary PPM file", 0)
    w, h, maxval = (int(x) for x in m.groups())
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit PPM files are supported", m.start(3))
    body = data[m.end():]
    if len(body) < w * h * 3:
        raise ParseError(f"{path}: pixel data truncated", len(data))
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def _num(x) -> str:
    return repr(float(x))


def _csv_rows(path, columns) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not a text CSV file") from exc
    if not rows or any(c not in rows[0] for c in columns):
        raise ParseError(f"{path}: expected CSV columns {list(columns)}")
    return rows


def write_weights_csv(path: str | os.PathLike, w: np.ndarray) -> None:
    """Columns: antenna, real, imag, phase (radians)."""
    w = np.asarray(w, dtype=complex).ravel()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["antenna", "real", "imag", "phase"])
        for k, z in enumerate(w):
            out.writerow([k, _num(z.real), _num(z.imag), _num(np.angle(z))])


def read_weights_csv(path: str | os.PathLike) -> np.ndarray:
    rows = _csv_rows(path, ("antenna", "real", "imag"))
    try:
        idx = [int(r["antenna"]) for r in rows]
        w = np.array([complex(float(r["real"]), float(r["imag"])) for r in rows])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if idx != list(range(len(rows))):
        raise ParseError(f"{path}: antenna indices must run 0..N-1 in order")
    return w


def write_channel_csv(path: str | os.PathLike, entries: np.ndarray) -> None:
    """Columns: objective, antenna, real, imag, phase."""
    entries = np.atleast_2d(np.asarray(entries, dtype=complex))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["objective", "antenna", "real", "imag", "phase"])
        for m in range(entries.shape[1]):
            for k in range(entries.shape[0]):
                z = entries[k, m]
                out.writerow([m, k, _num(z.real), _num(z.imag), _num(np.angle(z))])


def read_channel_csv(path: str | os.PathLike) -> np.ndarray:
    rows = _csv_rows(path, ("objective", "antenna", "real", "imag"))
    try:
        cells = [(int(r["antenna"]), int(r["objective"]),
                  complex(float(r["real"]), float(r["imag"]))) for r in rows]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    n_ant = max(c[0] for c in cells) + 1
    n_obj = max(c[1] for c in cells) + 1
    if len(cells) != n_ant * n_obj or min(min(c[0], c[1]) for c in cells) < 0:
        raise ParseError(f"{path}: channel table is not a complete antenna x objective grid")
    out = np.zeros((n_ant, n_obj), dtype=complex)
    for k, m, z in cells:
        out[k, m] = z
    return out


def write_series_csv(path: str | os.PathLike, times, values, header=("time_s", "temp_c")) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for t, v in zip(times, values):
            out.writerow([_num(t), _num(v)])


def read_series_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ParseError(f"{path}: expected two columns")
    return data[:, 0], data[:, 1]


def write_grid_csv(path: str | os.PathLike, values: np.ndarray) -> None:
    """Dense dump (rows = x index, columns = y index); meant for small grids."""
    np.savetxt(path, np.asarray(values, dtype=float), delimiter=",", fmt="%.17g")
