"""File formats: ensemble/interferogram CSV with JSON sidecars, scan tables.

Every data file ``X.csv`` is accompanied by ``X.meta.json`` holding the grid,
units, provenance, the schema name and version, the hash of the run
configuration and a build id derived from the package sources.  Numbers are
written with 17 significant digits so float64 values round-trip exactly.
Output is deterministic (no timestamps) so re-running a stored configuration
reproduces file checksums.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from functools import lru_cache
from pathlib import Path

import numpy as np

from .ensemble import PhaseEnsemble
from .errors import SchemaError
from .fringe import Interferogram

SCHEMA_VERSION = 1
SCHEMAS = ("ensemble", "interferogram", "table", "estimate", "scan")
FLOAT_FMT = "%.17g"


@lru_cache(maxsize=1)
def build_id() -> str:
    """Short SHA-1 over the package's source files (stable across installs of the same code)."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(jsonable(config), sort_keys=True).encode()).hexdigest()[:16]


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name[: -len(p.suffix)] + ".meta.json") if p.suffix else p.with_name(p.name + ".meta.json")


def _header(schema: str, config: dict = None) -> dict:
    return {
        "schema": schema,
        "schema_version": SCHEMA_VERSION,
        "build_id": build_id(),
        "config": config,
        "config_hash": config_hash(config) if config is not None else None,
    }


def check_schema(doc: dict, schema: str) -> dict:
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        raise SchemaError(f"expected a {schema!r} document, found {doc.get('schema') if isinstance(doc, dict) else doc!r}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported {schema} schema version {doc.get('schema_version')!r}; this build reads version {SCHEMA_VERSION}"
        )
    return doc


def write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    return path


def read_json(path, schema: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return check_schema(doc, schema)


def _write_matrix(path, x: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, x, fmt=FLOAT_FMT, delimiter=",")


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed numeric CSV ({exc})") from None


# --- ensembles ------------------------------------------------------------------------

def save_ensemble(ensemble: PhaseEnsemble, path, config: dict = None) -> Path:
    path = Path(path)
    _write_matrix(path, ensemble.samples)
    doc = _header("ensemble", config)
    doc.update(grid=ensemble.grid, dz=ensemble.dz, units="rad", n_shots=ensemble.n_shots,
               n_pixels=ensemble.n_pixels, meta=ensemble.meta)
    write_json(sidecar_path(path), doc)
    return path


def load_ensemble(path) -> PhaseEnsemble:
    path = Path(path)
    doc = read_json(sidecar_path(path), "ensemble")
    x = _read_matrix(path)
    if x.shape != (doc["n_shots"], doc["n_pixels"]):
        raise SchemaError(f"{path}: shape {x.shape} disagrees with sidecar ({doc['n_shots']}, {doc['n_pixels']})")
    return PhaseEnsemble(x, np.asarray(doc["grid"], dtype=np.float64), float(doc["dz"]), doc.get("meta") or {})


# --- interferograms -------------------------------------------------------------------

def save_interferogram(image: Interferogram, path, config: dict = None) -> Path:
    path = Path(path)
    _write_matrix(path, image.image)
    doc = _header("interferogram", config)
    doc.update(x_grid=image.x_grid, z_grid=image.z_grid, truth=image.truth, meta=image.meta, units="counts")
    write_json(sidecar_path(path), doc)
    return path


def load_interferogram(path) -> Interferogram:
    path = Path(path)
    doc = read_json(sidecar_path(path), "interferogram")
    truth = doc.get("truth")
    if truth is not None:
        truth = {k: np.asarray(v, dtype=np.float64) for k, v in truth.items()}
    return Interferogram(_read_matrix(path), doc["x_grid"], doc["z_grid"], truth, doc.get("meta") or {})


# --- tables and documents -------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_table(path, rows: list, meta: dict = None, config: dict = None) -> Path:
    """Long-format CSV with a header line; provenance goes to the sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    doc = _header("table", config)
    doc.update(columns=columns, n_rows=len(rows), meta=meta or {})
    write_json(sidecar_path(path), doc)
    return path


def read_table(path) -> list:
    path = Path(path)
    read_json(sidecar_path(path), "table")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_document(path, schema: str, body: dict, config: dict = None) -> Path:
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    doc = _header(schema, config)
    doc.update(body)
    return write_json(path, doc)
