"""File formats and run configuration: PSTM1 streams, CSV tables, manifests.

PSTM1 is the binary timestamp format: 4-byte magic "PSTM", version byte
0x01, little-endian u64 record count, then records of (u64 timestamp in ps,
u8 channel).  CSV numbers are written with 9 significant digits and parsed
locale-independently (dot decimal, comma separator).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .fit import DataSeries
from .mc import DetectionConfig, PhotonStream
from .rates import Excitation, TransitionRates

MAGIC = b"PSTM"
VERSION = 1
_HEADER = struct.Struct("<4sBQ")
_RECORD_DTYPE = np.dtype([("t", "<u8"), ("ch", "u1")])


class BadMagic(ValueError):
    """File does not start with the PSTM magic or has a wrong version."""


class TruncatedFile(ValueError):
    """File ends before the declared record count."""


class NonMonotoneTimestamps(ValueError):
    """Per-channel timestamps decrease somewhere in the stream."""


class SchemaMismatch(ValueError):
    """CSV header does not match the expected column names."""


class UnparseableNumber(ValueError):
    """CSV cell could not be parsed as a number."""


class ConfigError(ValueError):
    """Run configuration is invalid (unknown keys, bad values)."""


def write_pstm(stream: PhotonStream, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, stream.t_ps.size))
        rec = np.empty(stream.t_ps.size, dtype=_RECORD_DTYPE)
        rec["t"] = stream.t_ps.astype(np.uint64)
        rec["ch"] = stream.channel
        fh.write(rec.tobytes())


def write_pstm_chunks(
    chunks: Iterable[tuple[np.ndarray, np.ndarray]], path: str | Path
) -> int:
    """Streaming writer: emits chunks, then patches the header record count."""
    n_total = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0))
        for t_ps, ch in chunks:
            rec = np.empty(t_ps.size, dtype=_RECORD_DTYPE)
            rec["t"] = t_ps.astype(np.uint64)
            rec["ch"] = ch
            fh.write(rec.tobytes())
            n_total += t_ps.size
        fh.seek(0)
        fh.write(_HEADER.pack(MAGIC, VERSION, n_total))
    return n_total


def read_pstm(path: str | Path, duration_s: float | None = None) -> PhotonStream:
    """Read a PSTM1 file; never consumes bytes past the declared count.

    duration_s defaults to the last timestamp (the format itself does not
    store the acquisition time).
    """
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedFile(f"{path}: header truncated")
        magic, version, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise BadMagic(f"{path}: unsupported version {version}")
        payload = fh.read(count * _RECORD_DTYPE.itemsize)
    if len(payload) < count * _RECORD_DTYPE.itemsize:
        raise TruncatedFile(
            f"{path}: {len(payload)} payload bytes for {count} declared records"
        )
    rec = np.frombuffer(payload, dtype=_RECORD_DTYPE, count=count)
    t_ps = rec["t"].astype(np.int64)
    ch = rec["ch"].astype(np.uint8)
    if np.any(ch > 1):
        raise NonMonotoneTimestamps(f"{path}: channel byte out of range")
    for c in (0, 1):
        tc = t_ps[ch == c]
        if tc.size > 1 and np.any(np.diff(tc) < 0):
            raise NonMonotoneTimestamps(f"{path}: channel {c} timestamps decrease")
    if duration_s is None:
        duration_s = float(t_ps[-1]) * 1e-12 if t_ps.size else 0.0
    return PhotonStream(t_ps=t_ps, channel=ch, duration_s=duration_s)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _format_number(x: float) -> str:
    return f"{float(x):.9g}"


def write_table_csv(path: str | Path, columns: dict[str, np.ndarray]) -> None:
    """Write named columns as CSV with 9-significant-digit numbers."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n_rows = arrays[0].shape[0]
    for a in arrays:
        if a.shape[0] != n_rows:
            raise ValueError("all columns must have equal length")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n_rows):
            fh.write(",".join(_format_number(a[i]) for a in arrays) + "\n")


def read_table_csv(path: str | Path, schema: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read a CSV whose header matches schema exactly (names and order)."""
    with open(path, "r", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        names = header.split(",")
        if tuple(names) != tuple(schema):
            raise SchemaMismatch(f"{path}: header {names} != expected {list(schema)}")
        cols: list[list[float]] = [[] for _ in schema]
        for row_idx, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(schema):
                raise SchemaMismatch(f"{path}: row {row_idx} has {len(cells)} cells")
            for j, cell in enumerate(cells):
                try:
                    cols[j].append(float(cell))
                except ValueError:
                    raise UnparseableNumber(
                        f"{path}: row {row_idx}, column {schema[j]}: {cell!r}"
                    ) from None
    return {name: np.asarray(col) for name, col in zip(schema, cols)}


def read_series_csv(path: str | Path, schema: tuple[str, ...]) -> DataSeries:
    """Read a 2- or 3-column CSV as (x, y[, sigma])."""
    if len(schema) not in (2, 3):
        raise ValueError("series schema must name 2 or 3 columns")
    cols = read_table_csv(path, schema)
    sigma = cols[schema[2]] if len(schema) == 3 else None
    return DataSeries(cols[schema[0]], cols[schema[1]], sigma)


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

_RATE_KEYS = ("k21", "k23_0", "k31", "sigma_re", "sigma_ge", "p_ns0", "p_re_star")
_DETECTION_KEYS = (
    "efficiency", "background_rate", "split_ratio", "jitter_sigma_ps", "dead_time_ps"
)
_COMMAND_KEYS = {
    "simulate": ("p_re", "p_ge", "duration_s"),
    "trace": ("p_re", "p_ge", "segment_s", "n_cycles", "bins_per_segment"),
    "g2": ("input", "bin_width_ns", "max_tau_ns"),
    "fit-sat": ("input",),
    "fit-g2": ("input", "form"),
    "fit-decay": ("input", "t_start_ns", "t_end_ns"),
    "sweep-ge": ("p_re_levels", "p_ge_min", "p_ge_max", "n_points"),
    "sweep-conc": ("c_min_ppm", "c_max_ppm", "n_points", "p_re", "p_ge", "kappa", "p0"),
    "nn-dist": ("ppm", "k_max", "n_samples"),
    "calibrate": ("psat_re", "psat_ge", "crge_gain", "ge_halfway_power", "free"),
}
_TOP_KEYS = ("rates", "detection", "n_emitters", "seed") + tuple(_COMMAND_KEYS)


class RunConfig:
    """Validated run configuration: rates, detection, seed, command sections."""

    def __init__(self, raw: dict):
        _reject_unknown(raw, _TOP_KEYS, "top level")
        rates_raw = raw.get("rates", {})
        _reject_unknown(rates_raw, _RATE_KEYS, "rates")
        det_raw = raw.get("detection", {})
        _reject_unknown(det_raw, _DETECTION_KEYS, "detection")
        from .defaults import DEFAULT_DETECTION, DEFAULT_RATES

        try:
            rk = {k: float(getattr(DEFAULT_RATES, k)) for k in _RATE_KEYS}
            rk.update({k: float(v) for k, v in rates_raw.items()})
            self.rates = TransitionRates(**rk)
            dk = {k: float(getattr(DEFAULT_DETECTION, k)) for k in _DETECTION_KEYS}
            dk.update({k: float(v) for k, v in det_raw.items()})
            self.detection = DetectionConfig(**dk)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        self.n_emitters = int(raw.get("n_emitters", 1))
        if self.n_emitters < 1:
            raise ConfigError("n_emitters must be >= 1")
        self.seed = int(raw.get("seed", 12345))
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in u64")
        self.sections = {}
        for cmd, keys in _COMMAND_KEYS.items():
            if cmd in raw:
                section = raw[cmd]
                _reject_unknown(section, keys, cmd)
                self.sections[cmd] = dict(section)

    def section(self, command: str) -> dict:
        return dict(self.sections.get(command, {}))

    def resolved(self) -> dict:
        out = {
            "rates": {k: getattr(self.rates, k) for k in _RATE_KEYS},
            "detection": {k: getattr(self.detection, k) for k in _DETECTION_KEYS},
            "n_emitters": self.n_emitters,
            "seed": self.seed,
        }
        out.update({cmd: dict(sec) for cmd, sec in self.sections.items()})
        return out


def _reject_unknown(raw: dict, allowed: tuple[str, ...], where: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def load_config(path: str | Path) -> tuple[RunConfig, dict | None]:
    """Load a config or a manifest.

    A manifest (a previous run's manifest.json) is recognized by its
    "command" key; its resolved config, seed, and label are reused so the
    rerun reproduces the original outputs byte for byte.
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "command" in raw:
        manifest_meta = {
            "command": raw.get("command"),
            "label": raw.get("label"),
        }
        return RunConfig(raw.get("config", {})), manifest_meta
    return RunConfig(raw), None


def dump_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(
    out_dir: Path, command: str, label: str, config: RunConfig, outputs: list[str]
) -> None:
    from . import __version__

    dump_json(
        out_dir / "manifest.json",
        {
            "tool": "sivsim",
            "version": __version__,
            "command": command,
            "label": label,
            "config": config.resolved(),
            "outputs": sorted(outputs),
        },
    )


def excitation_from(section: dict, p_re_key: str = "p_re", p_ge_key: str = "p_ge") -> Excitation:
    try:
        return Excitation(float(section.get(p_re_key, 0.0)), float(section.get(p_ge_key, 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
