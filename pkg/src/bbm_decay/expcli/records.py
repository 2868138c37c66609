"""CSV records with a JSON header sidecar, and bit-exact population snapshots."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import warnings
from pathlib import Path

import numpy as np

from ..curves import CurveSpec, curve_from_dict
from ..engine import PopulationState

SCHEMA_VERSION = 1
SNAPSHOT_SCHEMA = "bbm-decay-snapshot/2"


class SnapshotError(ValueError):
    pass


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class RecordWriter:
    """Append-only CSV writer; every row is flushed whole so a killed run leaves a valid file."""

    def __init__(self, path, columns, header: dict):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        meta = {"schema_version": SCHEMA_VERSION, "columns": self.columns, **header}
        self.header_path = self.path.with_suffix(".header.json")
        self.header_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
        self._fh = open(self.path, "w", newline="")
        self._fh.write(",".join(self.columns) + "\n")
        self._fh.flush()

    def write(self, row: dict):
        extra = set(row) - set(self.columns)
        if extra:
            raise KeyError(f"row has columns outside the schema: {sorted(extra)}")
        self._fh.write(",".join(_cell(row.get(c)) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_records(path) -> list[dict]:
    """Rows of a records CSV; a trailing partial line (interrupted write) is ignored."""
    text = Path(path).read_text()
    if text and not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        return []
    cols = rows[0]
    return [{c: _parse_cell(v) for c, v in zip(cols, r)} for r in rows[1:] if len(r) == len(cols)]


def read_header(path) -> dict:
    return json.loads(Path(path).with_suffix(".header.json").read_text())


def records_bytes(records: list[dict]) -> bytes:
    """Canonical byte encoding of in-memory records (for determinism hashes)."""
    buf = io.StringIO()
    for r in records:
        buf.write(",".join(f"{k}={_cell(v)}" for k, v in r.items()) + "\n")
    return buf.getvalue().encode()


# ---------------------------------------------------------------- snapshots

def state_hash(state: PopulationState) -> str:
    h = hashlib.sha256()
    h.update(repr((float(state.time).hex(), state.step_count, float(state.dt).hex())).encode())
    for name in ("position", "mass", "mass0", "zeta_integral", "last_zeta", "pid", "parent", "replica",
                 "time_below", "sup_deficit", "tube_ok", "min_position", "keys", "next_id",
                 "replica_index", "active"):
        a = np.ascontiguousarray(getattr(state, name))
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    h.update(json.dumps([c.to_dict() for c in state.curves], sort_keys=True).encode())
    h.update(repr(state.tubes).encode())
    return h.hexdigest()


def _hexs(a) -> list[str]:
    return [float(x).hex() for x in np.ravel(a)]


def snapshot(state: PopulationState, path, config_hash: str = "") -> None:
    """Write ``state`` as line-delimited JSON: a header, then one line per particle."""
    for c in state.curves:
        if not isinstance(c, CurveSpec):
            raise SnapshotError("only CurveSpec curves can be snapshotted")
    header = {
        "schema": SNAPSHOT_SCHEMA, "config_hash": config_hash,
        "time": float(state.time).hex(), "step_count": int(state.step_count),
        "dt": float(state.dt).hex(), "n": int(state.n),
        "rng": {"keys": [int(k) for k in state.keys], "next_id": [int(v) for v in state.next_id]},
        "replica_index": [int(v) for v in state.replica_index],
        "active": [bool(v) for v in state.active],
        "curves": [c.to_dict() for c in state.curves], "tubes": list(state.tubes),
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(state.n):
            rec = [int(state.pid[i]), int(state.parent[i]), int(state.replica[i]),
                   float(state.position[i]).hex(), float(state.mass[i]).hex(),
                   float(state.zeta_integral[i]).hex(), float(state.last_zeta[i]).hex(),
                   float(state.min_position[i]).hex(),
                   _hexs(state.time_below[i]), _hexs(state.sup_deficit[i]),
                   [int(b) for b in state.tube_ok[i]], float(state.mass0[i]).hex()]
            fh.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def restore(path, config_hash: str | None = None) -> PopulationState:
    lines = Path(path).read_text().split("\n")
    if not lines or not lines[0]:
        raise SnapshotError(f"{path}: line 1: empty snapshot")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise SnapshotError(f"{path}: line 1: header is not valid JSON") from None
    if header.get("schema") != SNAPSHOT_SCHEMA:
        raise SnapshotError(f"{path}: line 1: schema {header.get('schema')!r} != {SNAPSHOT_SCHEMA!r}")
    if config_hash is not None and header.get("config_hash") != config_hash:
        warnings.warn(f"{path}: snapshot config hash {header.get('config_hash')!r} differs "
                      f"from {config_hash!r}", stacklevel=2)
    n = int(header["n"])
    K, J = len(header["curves"]), len(header["tubes"])
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    if len(body) < n:
        raise SnapshotError(f"{path}: line {len(body) + 2}: truncated, expected {n} particle lines")
    pid = np.empty(n, dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)
    rep = np.empty(n, dtype=np.int64)
    fl = np.empty((n, 6))
    tb = np.empty((n, K))
    sd = np.empty((n, K))
    tube = np.empty((n, J), dtype=bool)
    for i in range(n):
        try:
            rec = json.loads(body[i])
            pid[i], parent[i], rep[i] = rec[0], rec[1], rec[2]
            fl[i, :5] = [float.fromhex(x) for x in rec[3:8]]
            tb[i] = [float.fromhex(x) for x in rec[8]]
            sd[i] = [float.fromhex(x) for x in rec[9]]
            tube[i] = [bool(x) for x in rec[10]]
            fl[i, 5] = float.fromhex(rec[11])
        except (json.JSONDecodeError, ValueError, IndexError, TypeError):
            raise SnapshotError(f"{path}: line {i + 2}: malformed particle record") from None
    return PopulationState(
        time=float.fromhex(header["time"]), step_count=int(header["step_count"]),
        dt=float.fromhex(header["dt"]),
        position=fl[:, 0].copy(), mass=fl[:, 1].copy(), mass0=fl[:, 5].copy(),
        zeta_integral=fl[:, 2].copy(),
        last_zeta=fl[:, 3].copy(), pid=pid, parent=parent, replica=rep,
        time_below=tb, sup_deficit=sd, tube_ok=tube, min_position=fl[:, 4].copy(),
        keys=np.array(header["rng"]["keys"], dtype=np.uint64),
        next_id=np.array(header["rng"]["next_id"], dtype=np.int64),
        replica_index=np.array(header["replica_index"], dtype=np.int64),
        active=np.array(header["active"], dtype=bool),
        curves=tuple(curve_from_dict(c) for c in header["curves"]),
        tubes=tuple(float(c) for c in header["tubes"]),
    )
