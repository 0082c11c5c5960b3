"""
Binary map / coefficient files, scene directories and solver checkpoints.

File layouts (little-endian):

* map: ``b"SMAP"``, u32 version, u32 nlat, u32 nlon, then nlat*nlon float64
  in row-major (latitude-major) order;
* coefficients: ``b"SALM"``, u32 version, u32 lmax, then
  (lmax+1)(lmax+2)/2 complex128 in m-major order.
"""

import csv
import json
from pathlib import Path
import struct

import numpy as np

from .errors import ConfigurationError
from .simulate import Scene, SceneConfig
from .solver import Phase, SolverState
from .sphere import alm_size, lmax_from_size

VERSION = 1
_MAP_HEADER = struct.Struct("<4sIII")
_ALM_HEADER = struct.Struct("<4sII")

HISTORY_COLUMNS = ("iter", "phase", "objective", "rel_change", "c_effective", "mean_epsilon")


class FormatError(ValueError):
    """Malformed or unsupported file."""


def _check_header(magic, version, expected):
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def write_map(path, values):
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ConfigurationError("a map is a 2-d array (nlat, nlon)")
    with open(path, "wb") as fh:
        fh.write(_MAP_HEADER.pack(b"SMAP", VERSION, *values.shape))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_map(path):
    data = Path(path).read_bytes()
    if len(data) < _MAP_HEADER.size:
        raise FormatError("truncated map header")
    magic, version, nlat, nlon = _MAP_HEADER.unpack_from(data)
    _check_header(magic, version, b"SMAP")
    offset = _MAP_HEADER.size
    count = nlat * nlon
    if len(data) != offset + 8 * count:
        raise FormatError("map payload size does not match header")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(nlat, nlon).copy()


def write_alm(path, alm, lmax=None):
    alm = np.asarray(alm, dtype="<c16")
    if alm.ndim != 1:
        raise ConfigurationError("write_alm expects one coefficient set")
    if lmax is None:
        lmax = lmax_from_size(alm.size)
    if alm.size != alm_size(lmax):
        raise ConfigurationError(f"{alm.size} coefficients do not match lmax={lmax}")
    with open(path, "wb") as fh:
        fh.write(_ALM_HEADER.pack(b"SALM", VERSION, lmax))
        fh.write(alm.tobytes())


def read_alm(path):
    data = Path(path).read_bytes()
    if len(data) < _ALM_HEADER.size:
        raise FormatError("truncated coefficient header")
    magic, version, lmax = _ALM_HEADER.unpack_from(data)
    _check_header(magic, version, b"SALM")
    count = alm_size(lmax)
    if len(data) != _ALM_HEADER.size + 16 * count:
        raise FormatError("coefficient payload size does not match header")
    return np.frombuffer(data, dtype="<c16", count=count, offset=_ALM_HEADER.size).copy()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_scene(scene, directory):
    """Write ``scene.json``, ``source_<n>.salm``, ``channel_<nu>.salm`` and
    ``beam_<nu>.csv`` into ``directory`` (created if needed)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": scene.config.to_dict(),
        "noise_sigma": scene.noise_sigma,
        "resolutions": [float(r) for r in scene.resolutions],
        "mixing": scene.mixing.tolist(),
        "mixing_converged": bool(scene.mixing_converged),
    }
    _write_json(out / "scene.json", meta)
    lmax = scene.config.lmax
    for n, src in enumerate(scene.sources):
        write_alm(out / f"source_{n}.salm", src, lmax)
    for nu, (chan, beam) in enumerate(zip(scene.channels, scene.beams)):
        write_alm(out / f"channel_{nu}.salm", chan, lmax)
        with open(out / f"beam_{nu}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["l", "h"])
            for l, h in enumerate(beam):
                w.writerow([l, repr(float(h))])
    return out


def load_scene(directory):
    src = Path(directory)
    if not (src / "scene.json").is_file():
        raise FormatError(f"{src} has no scene.json")
    meta = json.loads((src / "scene.json").read_text())
    cfg = SceneConfig(**meta["config"])
    sources = np.stack([read_alm(src / f"source_{n}.salm") for n in range(cfg.n_sources)])
    channels = np.stack([read_alm(src / f"channel_{nu}.salm") for nu in range(cfg.n_channels)])
    beams = np.stack([read_beam(src / f"beam_{nu}.csv") for nu in range(cfg.n_channels)])
    return Scene(cfg, sources, np.array(meta["mixing"]), beams,
                 np.array(meta["resolutions"]), channels, float(meta["noise_sigma"]),
                 mixing_converged=meta.get("mixing_converged", True))


def read_beam(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"l", "h"}:
        raise FormatError(f"{path}: expected columns l, h")
    ell = np.array([int(r["l"]) for r in rows])
    if not np.array_equal(ell, np.arange(ell.size)):
        raise FormatError(f"{path}: degrees must run 0..lmax")
    return np.array([float(r["h"]) for r in rows])


SCHEMAS = {
    "history": HISTORY_COLUMNS,
    "metrics": ("seed", "strategy", "c_wu", "c_ref", "nmse_best_db", "nmse_worse_db",
                "ca_db", "iters", "wallclock_s"),
    "bench": ("axis", "axis_value", "strategy", "mean_nmse_db", "degradation_db"),
    "grid": ("c_wu_start_factor", "c_wu_end_factor", "c_ref_factor", "c_wu_start",
             "c_wu_end", "c_ref", "mean_nmse_db", "mean_ca_db", "n_seeds"),
}
SCHEMA_VERSION = 1
_SCHEMA_PREFIX = "# schema: "


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, kind, rows):
    """CSV with a ``# schema: <kind>/<version>`` first line and the fixed
    column order of ``SCHEMAS[kind]``. Floats are written with ``repr`` so
    values round-trip exactly."""
    columns = SCHEMAS[kind]
    with open(path, "w", newline="") as fh:
        fh.write(f"{_SCHEMA_PREFIX}{kind}/{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[k]) for k in columns])


def read_table(path, kind=None):
    """Validate a table written by ``write_table``.

    Returns ``(kind, rows)`` with rows as dicts of strings. Raises
    FormatError on a missing or unknown schema line, a version mismatch,
    wrong columns or ragged rows.
    """
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(_SCHEMA_PREFIX):
            raise FormatError(f"{path}: missing schema line")
        name, _, version = first[len(_SCHEMA_PREFIX):].partition("/")
        if name not in SCHEMAS:
            raise FormatError(f"{path}: unknown schema {name!r}")
        if kind is not None and name != kind:
            raise FormatError(f"{path}: expected schema {kind!r}, found {name!r}")
        if version != str(SCHEMA_VERSION):
            raise FormatError(f"{path}: unsupported schema version {version!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != SCHEMAS[name]:
            raise FormatError(f"{path}: columns {header} do not match schema {name!r}")
        rows = []
        for i, r in enumerate(reader, start=3):
            if len(r) != len(header):
                raise FormatError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
            rows.append(dict(zip(header, r)))
    return name, rows


def write_history(path, history):
    write_table(path, "history", history)


def read_history(path):
    _, rows = read_table(path, "history")
    return [{"iter": int(r["iter"]), "phase": r["phase"],
             **{k: float(r[k]) for k in HISTORY_COLUMNS[2:]}} for r in rows]


def save_checkpoint(state, directory):
    """Write ``state.json`` (mixing matrix, phase, iteration, history) and
    one SALM file per source estimate."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "a": state.a.tolist(),
        "phase": state.phase.value,
        "iter": state.iter,
        "converged": bool(state.converged),
        "notes": list(state.notes),
        "history": state.history,
    }
    _write_json(out / "state.json", meta)
    for n, src in enumerate(state.s):
        write_alm(out / f"estimate_{n}.salm", src)
    write_history(out / "history.csv", state.history)
    return out


def load_checkpoint(directory):
    src = Path(directory)
    meta = json.loads((src / "state.json").read_text())
    a = np.array(meta["a"])
    s = np.stack([read_alm(src / f"estimate_{n}.salm") for n in range(a.shape[1])])
    return SolverState(a=a, s=s, phase=Phase(meta["phase"]), iter=meta["iter"],
                       history=meta["history"], notes=meta.get("notes", []),
                       converged=meta.get("converged", False))
