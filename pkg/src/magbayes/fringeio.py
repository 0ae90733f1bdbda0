"""Fringe dataset container and file formats.

A fringe records photon counts of repeated Ramsey sequences (sweeps) over
a uniform grid of evolution times.  Two interchangeable encodings exist:

Text (UTF-8), header lines then one row per evolution time::

    #gamma_rad_per_s_per_T=<float>
    #dtau_ns=<float>
    #M_total=<int>
    #n_bar=<float>
    #n_max=<float>
    <tau_ns><TAB><c1>,<c2>,...,<cM>

Binary, all little-endian::

    bytes 0-3    magic "MFLD"
    bytes 4-5    u16 format version (1)
    bytes 6-13   f64 gamma_rad_per_s_per_T
    bytes 14-21  f64 dtau_ns
    bytes 22-25  u32 M_total
    bytes 26-33  f64 n_bar
    bytes 34-41  f64 n_max
    bytes 42-45  u32 record count
    then per record: f64 tau_ns followed by M_total u32 counts

Evolution times are nanoseconds on disk and seconds in memory.  Header
n_bar and n_max are per-sequence characterisation values; operational
thresholds at a chosen bunching factor come from calibration.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GAMMA_E

__all__ = [
    "FringeFormatError",
    "FringeDataset",
    "read_fringe_text",
    "write_fringe_text",
    "read_fringe_binary",
    "write_fringe_binary",
    "load_fringe",
    "save_fringe",
]

_MAGIC = b"MFLD"
_VERSION = 1
_HEADER_KEYS = ("gamma_rad_per_s_per_T", "dtau_ns", "M_total", "n_bar", "n_max")
_GRID_TOLERANCE = 0.01


class FringeFormatError(ValueError):
    """A fringe file violates the documented layout or its invariants."""


@dataclass
class FringeDataset:
    """In-memory fringe, either raw sweep counts or a mean-PL curve.

    Attributes:
        taus: Evolution times in seconds, strictly increasing.
        sweeps: Photon counts, shape (n_tau, m_total), or None.
        mean_pl: Mean normalised photoluminescence per tau in [0, 1], or
            None; exactly one of sweeps/mean_pl must be present.
        gamma: Gyromagnetic ratio the data was taken with, rad s^-1 T^-1.
        n_bar: Per-sequence mean photon count from characterisation.
        n_max: Per-sequence reference maximum photon count.
        taus_ns: Exact on-disk nanosecond grid, set by the readers.  Kept
            because the ns<->s unit conversion is not a bitwise identity;
            writers prefer it so re-serialising a loaded file is
            byte-identical.
        dtau_ns: Exact on-disk header step, same purpose.
    """

    taus: np.ndarray
    sweeps: np.ndarray | None = None
    mean_pl: np.ndarray | None = None
    gamma: float = GAMMA_E
    n_bar: float | None = None
    n_max: float | None = None
    taus_ns: np.ndarray | None = field(default=None, repr=False)
    dtau_ns: float | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=float)
        if self.taus.ndim != 1 or self.taus.size < 1:
            raise ValueError("taus must be a non-empty one-dimensional array")
        if not np.isfinite(self.taus).all():
            raise ValueError("taus must be finite")
        if np.any(np.diff(self.taus) <= 0.0):
            raise ValueError("taus must be strictly increasing")
        if (self.sweeps is None) == (self.mean_pl is None):
            raise ValueError("exactly one of sweeps or mean_pl must be given")
        if self.sweeps is not None:
            self.sweeps = np.asarray(self.sweeps)
            if self.sweeps.ndim != 2 or self.sweeps.shape[0] != self.taus.size:
                raise ValueError(
                    f"sweeps must have shape (n_tau, m_total), got {self.sweeps.shape}"
                )
            if not np.issubdtype(self.sweeps.dtype, np.integer):
                raise ValueError("sweep counts must be integers")
            if np.any(self.sweeps.astype(np.int64) < 0):
                raise ValueError("sweep counts must be nonnegative")
            self.sweeps = self.sweeps.astype(np.uint32)
        else:
            self.mean_pl = np.asarray(self.mean_pl, dtype=float)
            if self.mean_pl.shape != self.taus.shape:
                raise ValueError("mean_pl must match taus in shape")
            if not np.isfinite(self.mean_pl).all():
                raise ValueError("mean_pl must be finite")
        if self.gamma <= 0.0 or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")
        if self.taus_ns is not None:
            self.taus_ns = np.asarray(self.taus_ns, dtype=float)
            if self.taus_ns.shape != self.taus.shape:
                raise ValueError("taus_ns must match taus in shape")

    @property
    def n_tau(self) -> int:
        return self.taus.size

    @property
    def m_total(self) -> int:
        return 0 if self.sweeps is None else self.sweeps.shape[1]

    @property
    def dtau(self) -> float:
        """Grid step in seconds (median of the observed differences)."""
        if self.taus.size < 2:
            return float(self.taus[0])
        return float(np.median(np.diff(self.taus)))

    def mean_normalized(self) -> np.ndarray:
        """Fringe signal per evolution time: mean counts per sweep, or mean_pl."""
        if self.mean_pl is not None:
            return self.mean_pl.copy()
        return self.sweeps.mean(axis=1)

    def header_values(self) -> tuple[float, float]:
        """(n_bar, n_max) for serialisation, measured from counts if unset."""
        n_bar = self.n_bar
        n_max = self.n_max
        if self.sweeps is not None:
            if n_bar is None:
                n_bar = float(self.sweeps.mean())
            if n_max is None:
                n_max = float(self.sweeps.max())
        if n_bar is None or n_max is None:
            raise FringeFormatError("mean-PL datasets need explicit n_bar and n_max to serialise")
        return float(n_bar), float(n_max)


def _ns_grid(dataset: FringeDataset) -> tuple[np.ndarray, float]:
    """(taus_ns, dtau_ns) for serialisation, exact when loaded from a file."""
    taus_ns = dataset.taus_ns if dataset.taus_ns is not None else dataset.taus * 1e9
    if dataset.dtau_ns is not None:
        dtau_ns = dataset.dtau_ns
    elif taus_ns.size < 2:
        dtau_ns = float(taus_ns[0])
    else:
        dtau_ns = float(np.median(np.diff(taus_ns)))
    return taus_ns, dtau_ns


def _check_uniform_grid(taus_ns: np.ndarray, dtau_ns: float, origin: str) -> None:
    if taus_ns.size < 2:
        return
    steps = np.diff(taus_ns)
    if np.any(steps <= 0.0):
        raise FringeFormatError(f"{origin}: evolution times must be strictly increasing")
    deviation = np.max(np.abs(steps - dtau_ns)) / dtau_ns
    if deviation > _GRID_TOLERANCE:
        raise FringeFormatError(
            f"{origin}: tau grid deviates {deviation:.1%} from dtau_ns={dtau_ns}, "
            f"more than the {_GRID_TOLERANCE:.0%} tolerance"
        )


def read_fringe_text(path: str | Path) -> FringeDataset:
    """Parse the text fringe format, validating the grid and counts."""
    path = Path(path)
    header: dict[str, str] = {}
    taus_ns: list[float] = []
    rows: list[list[int]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if "=" not in line:
                    raise FringeFormatError(f"{path}:{lineno}: malformed header line {line!r}")
                key, value = line[1:].split("=", 1)
                header[key.strip()] = value.strip()
                continue
            try:
                tau_part, counts_part = line.split("\t")
            except ValueError as exc:
                raise FringeFormatError(
                    f"{path}:{lineno}: expected 'tau_ns<TAB>counts', got {line!r}"
                ) from exc
            tau_ns = float(tau_part)
            if not math.isfinite(tau_ns):
                raise FringeFormatError(f"{path}:{lineno}: non-finite tau")
            counts = []
            for token in counts_part.split(","):
                value = int(token)
                if value < 0:
                    raise FringeFormatError(f"{path}:{lineno}: negative count {value}")
                counts.append(value)
            taus_ns.append(tau_ns)
            rows.append(counts)

    missing = [key for key in _HEADER_KEYS if key not in header]
    if missing:
        raise FringeFormatError(f"{path}: missing header keys {missing}")
    if not rows:
        raise FringeFormatError(f"{path}: no data rows")
    m_total = int(header["M_total"])
    for i, counts in enumerate(rows):
        if len(counts) != m_total:
            raise FringeFormatError(
                f"{path}: row {i + 1} has {len(counts)} counts, header says M_total={m_total}"
            )
    taus_arr = np.asarray(taus_ns, dtype=float)
    dtau_ns = float(header["dtau_ns"])
    if dtau_ns <= 0.0:
        raise FringeFormatError(f"{path}: dtau_ns must be > 0, got {dtau_ns}")
    _check_uniform_grid(taus_arr, dtau_ns, str(path))
    return FringeDataset(
        taus=taus_arr * 1e-9,
        sweeps=np.asarray(rows, dtype=np.uint32),
        gamma=float(header["gamma_rad_per_s_per_T"]),
        n_bar=float(header["n_bar"]),
        n_max=float(header["n_max"]),
        taus_ns=taus_arr,
        dtau_ns=dtau_ns,
    )


def write_fringe_text(dataset: FringeDataset, path: str | Path) -> None:
    """Serialise counts to the text format (repr floats round-trip exactly)."""
    if dataset.sweeps is None:
        raise FringeFormatError("only sweep-count datasets can be serialised")
    path = Path(path)
    n_bar, n_max = dataset.header_values()
    taus_ns, dtau_ns = _ns_grid(dataset)
    _check_uniform_grid(taus_ns, dtau_ns, str(path))
    lines = [
        f"#gamma_rad_per_s_per_T={dataset.gamma!r}",
        f"#dtau_ns={dtau_ns!r}",
        f"#M_total={dataset.m_total}",
        f"#n_bar={n_bar!r}",
        f"#n_max={n_max!r}",
    ]
    for tau_ns, row in zip(taus_ns, dataset.sweeps):
        lines.append(f"{float(tau_ns)!r}\t{','.join(str(int(c)) for c in row)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_fringe_binary(path: str | Path) -> FringeDataset:
    """Parse the binary fringe format, rejecting truncated payloads."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 46:
        raise FringeFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != _MAGIC:
        raise FringeFormatError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _VERSION:
        raise FringeFormatError(f"{path}: unsupported format version {version}")
    gamma, dtau_ns = struct.unpack_from("<dd", blob, 6)
    (m_total,) = struct.unpack_from("<I", blob, 22)
    n_bar, n_max = struct.unpack_from("<dd", blob, 26)
    (n_records,) = struct.unpack_from("<I", blob, 42)
    if m_total < 1:
        raise FringeFormatError(f"{path}: M_total must be >= 1, got {m_total}")
    record_size = 8 + 4 * m_total
    expected = 46 + n_records * record_size
    if len(blob) != expected:
        raise FringeFormatError(
            f"{path}: payload is {len(blob)} bytes, layout implies {expected} "
            f"({n_records} records of {record_size} bytes)"
        )
    taus_ns = np.empty(n_records, dtype=float)
    sweeps = np.empty((n_records, m_total), dtype=np.uint32)
    offset = 46
    for i in range(n_records):
        (taus_ns[i],) = struct.unpack_from("<d", blob, offset)
        offset += 8
        sweeps[i] = np.frombuffer(blob, dtype="<u4", count=m_total, offset=offset)
        offset += 4 * m_total
    if not np.isfinite(taus_ns).all():
        raise FringeFormatError(f"{path}: non-finite tau")
    if dtau_ns <= 0.0:
        raise FringeFormatError(f"{path}: dtau_ns must be > 0, got {dtau_ns}")
    _check_uniform_grid(taus_ns, dtau_ns, str(path))
    return FringeDataset(
        taus=taus_ns * 1e-9,
        sweeps=sweeps,
        gamma=gamma,
        n_bar=n_bar,
        n_max=n_max,
        taus_ns=taus_ns,
        dtau_ns=dtau_ns,
    )


def write_fringe_binary(dataset: FringeDataset, path: str | Path) -> None:
    if dataset.sweeps is None:
        raise FringeFormatError("only sweep-count datasets can be serialised")
    path = Path(path)
    n_bar, n_max = dataset.header_values()
    taus_ns, dtau_ns = _ns_grid(dataset)
    _check_uniform_grid(taus_ns, dtau_ns, str(path))
    parts = [
        _MAGIC,
        struct.pack("<H", _VERSION),
        struct.pack("<dd", dataset.gamma, dtau_ns),
        struct.pack("<I", dataset.m_total),
        struct.pack("<dd", n_bar, n_max),
        struct.pack("<I", dataset.n_tau),
    ]
    for tau_ns, row in zip(taus_ns, dataset.sweeps):
        parts.append(struct.pack("<d", tau_ns))
        parts.append(row.astype("<u4").tobytes())
    path.write_bytes(b"".join(parts))


def load_fringe(path: str | Path) -> FringeDataset:
    """Load either format, sniffing the binary magic."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return read_fringe_binary(path)
    return read_fringe_text(path)


def save_fringe(dataset: FringeDataset, path: str | Path, fmt: str = "auto") -> None:
    """Write a dataset; fmt is 'text', 'binary', or 'auto' (by suffix)."""
    path = Path(path)
    if fmt == "auto":
        fmt = "binary" if path.suffix in {".mfd", ".bin"} else "text"
    if fmt == "text":
        write_fringe_text(dataset, path)
    elif fmt == "binary":
        write_fringe_binary(dataset, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
