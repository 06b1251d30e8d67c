"""CSV and JSON files read and written by the command-line tool.

Every output file starts with a metadata block: ``#``-prefixed ``key: value``
lines in CSV files and a ``metadata`` object in JSON files. Floats are
written in their shortest round-trip form so reruns are byte-identical.
"""

import csv
import hashlib
import json
import math
import re

import numpy as np

from . import __version__
from .demand import CHARACTERISTICS, DemandData
from .exceptions import IoFailure, SchemaError
from .market import VehicleEvent

DEMAND_COLUMNS = (
    ("market", "period", "firm", "product")
    + CHARACTERISTICS
    + ("price", "mc", "quantity", "market_size")
)
EVENT_COLUMNS = ("firm", "period", "product", "kind")
_INSTRUMENT = re.compile(r"^instrument_([1-9][0-9]*)$")


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def metadata(seed=None, config=None, **extra):
    meta = {"tool": "momineq", "version": __version__}
    if seed is not None:
        meta["seed"] = seed
    if config is not None:
        meta["config_hash"] = config_hash(config)
    meta.update(extra)
    return meta


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _label(v):
    try:
        return int(v)
    except ValueError:
        return v


def _open(path, mode):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from exc


def _write_meta(fh, meta):
    for key, value in (meta or {}).items():
        fh.write(f"# {key}: {value}\n")


def _read_rows(path):
    with _open(path, "r") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    return header, [row for row in reader if row]


def write_demand_csv(data, path, meta=None):
    m = data.instruments.shape[1]
    header = list(DEMAND_COLUMNS) + [f"instrument_{i + 1}" for i in range(m)]
    with _open(path, "w") as fh:
        _write_meta(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(data.n_rows):
            w.writerow(
                [fmt(data.market[r]), fmt(data.period[r]), fmt(data.firm[r]), fmt(data.product[r])]
                + [fmt(v) for v in data.x[r]]
                + [fmt(data.price[r]), fmt(data.mc[r]), fmt(data.quantity[r]), fmt(data.market_size[r])]
                + [fmt(v) for v in data.instruments[r]]
            )


def read_demand_csv(path):
    """Load demand rows; the header must hold the fixed columns and ``instrument_1..m``."""
    header, rows = _read_rows(path)
    missing = [c for c in DEMAND_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    inst = sorted((int(_INSTRUMENT.match(h).group(1)), h) for h in header if _INSTRUMENT.match(h))
    extra = [h for h in header if h not in DEMAND_COLUMNS and not _INSTRUMENT.match(h)]
    if extra:
        raise SchemaError(f"{path}: unknown columns {extra}")
    if not inst or [i for i, _ in inst] != list(range(1, len(inst) + 1)):
        raise SchemaError(f"{path}: instruments must be numbered instrument_1..instrument_m")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate columns")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    col = {h: i for i, h in enumerate(header)}
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {k + 1} has {len(row)} fields, expected {len(header)}")

    def labels(name):
        return np.array([_label(r[col[name]]) for r in rows])

    def floats(names):
        try:
            return np.array([[float(r[col[n]]) for n in names] for r in rows])
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None

    try:
        return DemandData(
            market=labels("market"),
            period=floats(["period"])[:, 0].astype(int),
            firm=labels("firm"),
            product=labels("product"),
            x=floats(CHARACTERISTICS),
            price=floats(["price"])[:, 0],
            mc=floats(["mc"])[:, 0],
            quantity=floats(["quantity"])[:, 0],
            market_size=floats(["market_size"])[:, 0],
            instruments=floats([h for _, h in inst]),
        )
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


def write_events_csv(events, path, meta=None):
    with _open(path, "w") as fh:
        _write_meta(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for ev in events:
            w.writerow([fmt(ev.firm), fmt(ev.period), fmt(ev.product), ev.kind])


def read_events_csv(path):
    header, rows = _read_rows(path)
    if tuple(header) != EVENT_COLUMNS:
        raise SchemaError(f"{path}: header must be {','.join(EVENT_COLUMNS)}")
    events = []
    for k, row in enumerate(rows):
        if len(row) != 4:
            raise SchemaError(f"{path}: row {k + 1} has {len(row)} fields, expected 4")
        try:
            events.append(VehicleEvent(firm=_label(row[0]), period=int(row[1]),
                                       product=_label(row[2]), kind=row[3].strip()))
        except ValueError as exc:
            raise SchemaError(f"{path}: row {k + 1}: {exc}") from None
    return events


def read_matrix_csv(path):
    """Plain numeric matrix, one row per line, ``#`` comments allowed."""
    with _open(path, "r") as fh:
        lines = [line for line in fh if line.strip() and not line.startswith("#")]
    try:
        rows = [[float(v) for v in row] for row in csv.reader(lines)]
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise SchemaError(f"{path}: rows have different lengths")
    return np.array(rows, dtype=float)


def write_matrix_csv(M, path, meta=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with _open(path, "w") as fh:
        _write_meta(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(obj, path):
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(dumps_json(obj))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
