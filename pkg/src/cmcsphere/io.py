"""File formats: binary PLY for meshes and maps, COO text dumps, JSON records, CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import mesh as _mesh
from .energy import MapField
from .metric import RoundS3

MAP_PROPS = ("dx", "dy", "dz", "u0", "u1", "u2", "u3")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2", "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


class PlyParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_ply(path, columns: dict, faces=None, comments=()) -> None:
    """Binary little-endian PLY; every vertex property is float64, faces are uchar/int32 lists."""
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    head = ["ply", "format binary_little_endian 1.0"]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {n}")
    head += [f"property double {k}" for k in names]
    if faces is not None:
        head.append(f"element face {len(faces)}")
        head.append("property list uchar int vertex_indices")
    head.append("end_header")
    data = np.stack([np.asarray(columns[k], dtype="<f8") for k in names], axis=1) if names else np.zeros((0, 0))
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        if faces is not None:
            f = np.asarray(faces)
            rec = np.zeros(len(f), dtype=[("n", "u1"), ("v", "<i4", (3,))])
            rec["n"] = 3
            rec["v"] = f
            fh.write(rec.tobytes())


def read_ply(path):
    """Parse a binary little-endian PLY with triangle faces.

    Returns ``(columns, faces, comments)``; malformed input raises ``PlyParseError``
    naming the byte offset where parsing failed.
    """
    raw = Path(path).read_bytes()
    pos = 0
    lines = []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("unterminated header", pos)
        try:
            line = raw[pos:nl].decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyParseError("non-ascii header line", pos) from None
        lines.append((pos, line))
        pos = nl + 1
        if line == "end_header":
            break
    if not lines or lines[0][1] != "ply":
        raise PlyParseError("missing 'ply' magic", 0)
    elements, comments, fmt = [], [], None
    for off, line in lines[1:-1]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
            if fmt != "binary_little_endian":
                raise PlyParseError(f"unsupported format {fmt!r}", off)
        elif tok[0] == "comment":
            comments.append(line[len("comment"):].strip())
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyParseError(f"bad element line {line!r}", off)
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", off)
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise PlyParseError(f"bad list property {line!r}", off)
                elements[-1]["props"].append(("list", tok[4], tok[2], tok[3]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise PlyParseError(f"bad property {line!r}", off)
                elements[-1]["props"].append(("scalar", tok[2], tok[1]))
        elif tok[0] != "obj_info":
            raise PlyParseError(f"unknown header keyword {tok[0]!r}", off)
    if fmt is None:
        raise PlyParseError("missing format line", lines[-1][0])
    columns, faces = {}, None
    for el in elements:
        if any(p[0] == "list" for p in el["props"]):
            if el["name"] != "face" or len(el["props"]) != 1:
                raise PlyParseError(f"unsupported list element {el['name']!r}", pos)
            _, _, ct, it = el["props"][0]
            cdt, idt = np.dtype(_PLY_TYPES[ct]), np.dtype(_PLY_TYPES[it])
            rec = np.dtype([("n", cdt), ("v", idt, (3,))])
            need = rec.itemsize * el["count"]
            if pos + need > len(raw):
                raise PlyParseError("truncated face data", len(raw))
            arr = np.frombuffer(raw, dtype=rec, count=el["count"], offset=pos)
            bad = np.flatnonzero(arr["n"] != 3)
            if len(bad):
                raise PlyParseError("only triangle faces are supported", pos + int(bad[0]) * rec.itemsize)
            faces = arr["v"].astype(np.int64)
            pos += need
        else:
            dt = np.dtype([(p[1], _PLY_TYPES[p[2]]) for p in el["props"]])
            need = dt.itemsize * el["count"]
            if pos + need > len(raw):
                raise PlyParseError(f"truncated {el['name']} data", len(raw))
            arr = np.frombuffer(raw, dtype=dt, count=el["count"], offset=pos)
            if el["name"] == "vertex":
                columns = {p[1]: arr[p[1]].astype(float) for p in el["props"]}
            pos += need
    if pos != len(raw):
        raise PlyParseError("trailing bytes after last element", pos)
    if faces is not None and len(faces) and columns:
        n = len(next(iter(columns.values())))
        if faces.min() < 0 or faces.max() >= n:
            raise PlyParseError("face index out of range", pos)
    return columns, faces, comments


def _meta_comments(meta: dict):
    return [f"meta {k} {json.dumps(v)}" for k, v in sorted(meta.items())]


def _parse_meta(comments):
    meta = {}
    for c in comments:
        if c.startswith("meta "):
            _, key, val = c.split(" ", 2)
            meta[key] = json.loads(val)
    return meta


def save_mesh(path, mesh) -> None:
    v = mesh.vertices
    write_ply(path, {"x": v[:, 0], "y": v[:, 1], "z": v[:, 2]}, mesh.faces,
              _meta_comments({"subdivision_level": mesh.subdivision_level}))


def load_mesh(path):
    cols, faces, comments = read_ply(path)
    meta = _parse_meta(comments)
    v = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    return _mesh.assemble_operators(_mesh.SphereMesh(v, faces, int(meta.get("subdivision_level", -1))))


def save_map(path, u: MapField, meta: dict | None = None, extra: dict | None = None) -> None:
    """Domain positions plus the four map coordinates; ``meta`` goes into header comments."""
    m = dict(meta or {})
    m.setdefault("subdivision_level", u.mesh.subdivision_level)
    m.setdefault("metric", u.metric.name)
    cols = {"dx": u.mesh.vertices[:, 0], "dy": u.mesh.vertices[:, 1], "dz": u.mesh.vertices[:, 2]}
    for i in range(u.values.shape[1]):
        cols[f"u{i}"] = u.values[:, i]
    for k, v in (extra or {}).items():
        cols[k] = v
    write_ply(path, cols, u.mesh.faces, _meta_comments(m))


_MESH_CACHE: dict = {}


def load_map(path, metric=None):
    """Returns ``(MapField, meta)``; the domain mesh is rebuilt from the stored vertices and faces."""
    cols, faces, comments = read_ply(path)
    missing = [p for p in MAP_PROPS if p not in cols]
    if missing:
        raise PlyParseError(f"map file lacks properties {missing}", 0)
    if faces is None:
        raise PlyParseError("map file has no faces", 0)
    meta = _parse_meta(comments)
    verts = np.stack([cols["dx"], cols["dy"], cols["dz"]], axis=1)
    level = int(meta.get("subdivision_level", -1))
    if 0 <= level <= _mesh.MAX_LEVEL:
        ref = _MESH_CACHE.get(level) or _MESH_CACHE.setdefault(level, _mesh.build_icosphere(level))
        if ref.n_vertices == len(verts) and np.array_equal(ref.vertices, verts) and np.array_equal(ref.faces, faces):
            mesh = ref
        else:
            mesh = _mesh.assemble_operators(_mesh.SphereMesh(verts, faces, level))
    else:
        mesh = _mesh.assemble_operators(_mesh.SphereMesh(verts, faces, level))
    vals = np.stack([cols[f"u{i}"] for i in range(4)], axis=1)
    return MapField(mesh, vals, metric or RoundS3()), meta


def dump_coo(path, matrix) -> None:
    """Coordinate-list text: a ``% rows cols nnz`` header then ``i j value`` lines."""
    A = matrix.tocoo()
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"% {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def load_coo(path):
    with open(path) as fh:
        head = fh.readline().split()
        rows, cols, nnz = (int(x) for x in head[1:4])
        if nnz == 0:
            return sp.coo_matrix((rows, cols))
        data = np.loadtxt(fh, ndmin=2)
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
