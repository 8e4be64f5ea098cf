"""Mesh ingestion: ASCII/binary PLY and OBJ, positions and faces only.

Meshes may be authored in millimeters; pass units="mm" to convert to
meters at load. Parse failures raise MeshParseError with the offending
line (ASCII) or byte offset (binary).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MeshParseError
from .geom import TriangleMesh

_UNIT_SCALE = {"m": 1.0, "mm": 1e-3}

_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def load_mesh(path, units: str = "m") -> TriangleMesh:
    """Load a PLY or OBJ mesh; the format is chosen by file content."""
    if units not in _UNIT_SCALE:
        raise ValueError(f"units must be one of {sorted(_UNIT_SCALE)}")
    path = Path(path)
    data = path.read_bytes()
    if data[:3] == b"ply":
        verts, faces = _parse_ply(data, str(path))
    else:
        verts, faces = _parse_obj(data, str(path))
    return TriangleMesh(verts * _UNIT_SCALE[units], faces)


def _parse_obj(data: bytes, name: str):
    verts, faces = [], []
    try:
        text = data.decode("utf-8", errors="strict")
    except UnicodeDecodeError as e:
        raise MeshParseError(f"{name}: not valid OBJ text (byte {e.start})") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshParseError(f"{name}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            except ValueError:
                raise MeshParseError(f"{name}:{lineno}: bad vertex coordinate") from None
        elif tok[0] == "f":
            if len(tok) < 4:
                raise MeshParseError(f"{name}:{lineno}: face needs >= 3 indices")
            idx = []
            for t in tok[1:]:
                s = t.split("/", 1)[0]
                try:
                    i = int(s)
                except ValueError:
                    raise MeshParseError(f"{name}:{lineno}: bad face index {t!r}") from None
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
        # other directives (vn, vt, usemtl, ...) are ignored
    if not verts:
        raise MeshParseError(f"{name}: no vertices found")
    v = np.asarray(verts, dtype=float)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(verts)):
        raise MeshParseError(f"{name}: face index out of range")
    return v, f


def _parse_ply(data: bytes, name: str):
    # header is ASCII lines terminated by end_header
    end = data.find(b"end_header")
    if end < 0:
        raise MeshParseError(f"{name}: missing end_header")
    body_start = data.index(b"\n", end) + 1
    header = data[:body_start].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    for lineno, line in enumerate(header, start=1):
        tok = line.strip().split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MeshParseError(f"{name}:{lineno}: bad element line")
            try:
                elements.append((tok[1], int(tok[2]), []))
            except ValueError:
                raise MeshParseError(f"{name}:{lineno}: bad element count") from None
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError(f"{name}:{lineno}: property before element")
            if tok[1] == "list":
                if len(tok) != 5:
                    raise MeshParseError(f"{name}:{lineno}: bad list property")
                elements[-1][2].append((tok[4], tok[3], tok[2]))
            else:
                if len(tok) != 3:
                    raise MeshParseError(f"{name}:{lineno}: bad property line")
                elements[-1][2].append((tok[2], tok[1], None))
        else:
            raise MeshParseError(f"{name}:{lineno}: unknown header keyword {tok[0]!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshParseError(f"{name}: unsupported format {fmt!r}")

    if fmt == "ascii":
        return _ply_ascii_body(data[body_start:], elements, name)
    return _ply_binary_body(data[body_start:], elements, name, body_start)


def _extract_vertex_faces(per_element, name):
    verts = per_element.get("vertex")
    faces = per_element.get("face", [])
    if verts is None or not len(verts):
        raise MeshParseError(f"{name}: no vertex element")
    v = np.asarray(verts, dtype=float)
    tri = []
    for poly in faces:
        if len(poly) < 3:
            raise MeshParseError(f"{name}: face with fewer than 3 indices")
        for k in range(1, len(poly) - 1):
            tri.append([poly[0], poly[k], poly[k + 1]])
    f = np.asarray(tri, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshParseError(f"{name}: face index out of range")
    return v, f


def _ply_ascii_body(body: bytes, elements, name):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    per_element = {}
    for el_name, count, props in elements:
        rows = []
        for _ in range(count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise MeshParseError(f"{name}: unexpected end of data in {el_name}")
            tok = lines[pos].split()
            pos += 1
            if el_name == "vertex":
                vals = {}
                if len(tok) < len(props):
                    raise MeshParseError(f"{name}: short vertex row {pos}")
                for (pname, _, _), s in zip(props, tok):
                    vals[pname] = float(s)
                try:
                    rows.append([vals["x"], vals["y"], vals["z"]])
                except KeyError:
                    raise MeshParseError(f"{name}: vertex missing x/y/z") from None
            elif el_name == "face":
                n = int(tok[0])
                rows.append([int(s) for s in tok[1 : 1 + n]])
        per_element[el_name] = rows
    return _extract_vertex_faces(per_element, name)


def _ply_binary_body(body: bytes, elements, name, base_offset):
    off = 0
    per_element = {}
    for el_name, count, props in elements:
        rows = []
        for _ in range(count):
            vals = {}
            for pname, ptype, list_count_type in props:
                if list_count_type is not None:
                    cfmt, csize = _PLY_TYPES[list_count_type]
                    ifmt, isize = _PLY_TYPES[ptype]
                    try:
                        (n,) = struct.unpack_from("<" + cfmt, body, off)
                    except struct.error:
                        raise MeshParseError(
                            f"{name}: truncated at byte {base_offset + off}"
                        ) from None
                    off += csize
                    try:
                        items = struct.unpack_from(f"<{n}{ifmt}", body, off)
                    except struct.error:
                        raise MeshParseError(
                            f"{name}: truncated at byte {base_offset + off}"
                        ) from None
                    off += n * isize
                    vals[pname] = list(items)
                else:
                    pfmt, psize = _PLY_TYPES[ptype]
                    try:
                        (x,) = struct.unpack_from("<" + pfmt, body, off)
                    except struct.error:
                        raise MeshParseError(
                            f"{name}: truncated at byte {base_offset + off}"
                        ) from None
                    off += psize
                    vals[pname] = x
            if el_name == "vertex":
                try:
                    rows.append([vals["x"], vals["y"], vals["z"]])
                except KeyError:
                    raise MeshParseError(f"{name}: vertex missing x/y/z") from None
            elif el_name == "face":
                key = next(iter(vals))
                rows.append(vals[key])
        per_element[el_name] = rows
    return _extract_vertex_faces(per_element, name)
