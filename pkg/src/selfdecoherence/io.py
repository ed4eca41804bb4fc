"""Self-describing binary container and CSV exports.

Container layout: magic bytes, a little-endian uint32 version, a uint64 header
length, a JSON header (sorted keys), then the raw little-endian arrays in the
order listed in the header. Nothing time-dependent is written, so identical
inputs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .spectral import DecayCurve, EnergyGrid, PointerBasisResult, SpectralKernel
from .wigner import PhaseGrid, PhaseSpaceField

__all__ = [
    "MAGIC",
    "VERSION",
    "ContainerError",
    "write_container",
    "read_container",
    "save_kernel",
    "load_kernel",
    "save_field",
    "load_field",
    "save_pointer_basis",
    "load_pointer_basis",
    "write_decay_csv",
    "read_decay_csv",
    "write_field_csv",
    "read_field_csv",
    "write_trajectory_csv",
    "trajectory_header",
    "sha256_file",
]

MAGIC = b"SDCNTNR\x00"
VERSION = 1
DECAY_HEADER = ["t", "total", "regular_re", "regular_im"]
FIELD_HEADER = ["q", "p", "re", "im"]


class ContainerError(ValueError):
    """File is not a readable container of the expected kind."""


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        dtype = a.dtype.newbyteorder("<")
        blob = np.ascontiguousarray(a, dtype=dtype).tobytes(order="C")
        entries.append({"name": name, "dtype": dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = _dumps({"kind": kind, "meta": meta, "arrays": entries})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def read_container(path, kind: str | None = None):
    """Return (kind, meta, arrays)."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ContainerError(f"{path}: not a container (bad magic)")
    pos = len(MAGIC)
    version, n_header = struct.unpack_from("<IQ", data, pos)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(data[pos: pos + n_header])
    pos += n_header
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: holds a {header['kind']!r}, expected {kind!r}")
    arrays = {}
    for e in header["arrays"]:
        start = pos + e["offset"]
        buf = data[start: start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ContainerError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["kind"], header["meta"], arrays


def _energy_meta(grid: EnergyGrid) -> dict:
    return {"omega_min": grid.omega_min, "omega_max": grid.omega_max, "n_points": grid.n_points}


def save_kernel(path, kernel: SpectralKernel, hbar: float = 1.0, role: str = "state") -> Path:
    meta = {"energy_grid": _energy_meta(kernel.grid), "n_channels": kernel.n_channels, "hbar": hbar, "role": role,
            "index_order": "omega,omega_prime,m,m_prime"}
    return write_container(path, "spectral-kernel", meta, {"singular": kernel.singular, "regular": kernel.regular})


def load_kernel(path):
    """Return (SpectralKernel, meta)."""
    _, meta, arrays = read_container(path, "spectral-kernel")
    grid = EnergyGrid(**meta["energy_grid"])
    return SpectralKernel(grid, meta["n_channels"], arrays["singular"], arrays["regular"]), meta


def _phase_meta(grid: PhaseGrid) -> dict:
    return {k: getattr(grid, k) for k in ("q_min", "q_max", "n_q", "p_min", "p_max", "n_p", "dof")}


def save_field(path, field: PhaseSpaceField, extra: dict | None = None) -> Path:
    meta = {"phase_grid": _phase_meta(field.grid), "hbar": field.hbar, "scheme": field.scheme,
            "truncation": field.truncation}
    if extra:
        meta["extra"] = extra
    return write_container(path, "phase-field", meta, {"values": field.values})


def load_field(path) -> PhaseSpaceField:
    _, meta, arrays = read_container(path, "phase-field")
    return PhaseSpaceField(PhaseGrid(**meta["phase_grid"]), arrays["values"], meta["hbar"], meta["scheme"],
                           meta["truncation"])


def save_pointer_basis(path, basis: PointerBasisResult, grid: EnergyGrid) -> Path:
    meta = {"energy_grid": _energy_meta(grid), "reconstruction_error": basis.reconstruction_error}
    return write_container(path, "pointer-basis", meta, {"unitary": basis.unitary, "eigenvalues": basis.eigenvalues})


def load_pointer_basis(path):
    _, meta, arrays = read_container(path, "pointer-basis")
    return PointerBasisResult(arrays["unitary"], arrays["eigenvalues"], meta["reconstruction_error"]), meta


# -- CSV -------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _read_rows(path, header):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r)
        if got != header:
            raise ContainerError(f"{path}: header {got} != {header}")
        rows = [[float(v) for v in row] for row in r]
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_decay_csv(path, curve: DecayCurve) -> Path:
    return _write_rows(path, DECAY_HEADER, curve.rows())


def read_decay_csv(path) -> np.ndarray:
    return _read_rows(path, DECAY_HEADER)


def write_field_csv(path, field: PhaseSpaceField) -> Path:
    if field.grid.dof != 1:
        raise ValueError("CSV export covers single-degree-of-freedom fields")
    Q, P = field.grid.mesh()
    v = field.values
    return _write_rows(path, FIELD_HEADER, zip(Q.ravel(), P.ravel(), v.real.ravel(), v.imag.ravel()))


def read_field_csv(path) -> np.ndarray:
    return _read_rows(path, FIELD_HEADER)


def trajectory_header(dof: int, n_constants: int) -> list[str]:
    if dof == 1:
        coords = ["q", "p"]
    else:
        coords = [f"q{i + 1}" for i in range(dof)] + [f"p{i + 1}" for i in range(dof)]
    return ["t", *coords, "H", *[f"P{i + 1}" for i in range(n_constants)]]


def write_trajectory_csv(path, times, q, p, energy, constants=()) -> Path:
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    cols = [np.asarray(times, float), *q.T, *p.T, np.asarray(energy, float), *[np.asarray(c, float) for c in constants]]
    return _write_rows(path, trajectory_header(q.shape[1], len(constants)), zip(*cols))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
