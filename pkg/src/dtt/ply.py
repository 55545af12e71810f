"""Minimal PLY reader/writer: vertices, optional uchar colors, triangle faces.

Handles ascii and binary_little_endian files, which covers the scene model
and cloud-export formats this toolkit emits plus typical scanner output.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InputError

_SCALARS = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _parse_header(f):
    magic = f.readline().strip()
    if magic != b"ply":
        raise InputError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, kind)]) kind: scalar code or ('list', count_code, item_code)
    while True:
        line = f.readline()
        if not line:
            raise InputError("unterminated PLY header")
        parts = line.decode("ascii", "replace").strip().split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise InputError("PLY property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", _SCALARS[parts[2]], _SCALARS[parts[3]])))
            else:
                elements[-1][2].append((parts[2], _SCALARS[parts[1]]))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise InputError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_binary_element(f, count, props):
    scalar_props = all(not isinstance(k, tuple) for _, k in props)
    if scalar_props:
        fmt = "<" + "".join(k for _, k in props)
        size = struct.calcsize(fmt)
        buf = f.read(size * count)
        if len(buf) != size * count:
            raise InputError("truncated PLY payload")
        rows = [struct.unpack_from(fmt, buf, i * size) for i in range(count)]
        return [dict(zip([n for n, _ in props], row)) for row in rows]
    rows = []
    for _ in range(count):
        row = {}
        for name, kind in props:
            if isinstance(kind, tuple):
                _, ccode, icode = kind
                n = struct.unpack("<" + ccode, f.read(struct.calcsize(ccode)))[0]
                isz = struct.calcsize(icode)
                row[name] = struct.unpack("<" + icode * n, f.read(isz * n))
            else:
                row[name] = struct.unpack("<" + kind, f.read(struct.calcsize(kind)))[0]
        rows.append(row)
    return rows


def _read_ascii_element(f, count, props):
    rows = []
    for _ in range(count):
        tokens = f.readline().split()
        row = {}
        i = 0
        for name, kind in props:
            if isinstance(kind, tuple):
                n = int(tokens[i]); i += 1
                conv = float if kind[2] in "fd" else int
                row[name] = tuple(conv(t) for t in tokens[i:i + n]); i += n
            else:
                conv = float if kind in "fd" else int
                row[name] = conv(tokens[i]); i += 1
        rows.append(row)
    return rows


def read_ply(path):
    """Read a PLY mesh/cloud.

    Returns dict with 'vertices' (V,3) float64, 'faces' (T,3) int64 or None,
    'colors' (V,3) float64 in [0,1] or None.
    """
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f)
        data = {}
        for name, count, props in elements:
            if fmt == "ascii":
                data[name] = _read_ascii_element(f, count, props)
            else:
                data[name] = _read_binary_element(f, count, props)
    if "vertex" not in data:
        raise InputError("PLY file has no vertex element")
    verts = data["vertex"]
    vertices = np.array([[v["x"], v["y"], v["z"]] for v in verts], dtype=np.float64)
    if vertices.size == 0:
        vertices = vertices.reshape(0, 3)
    colors = None
    if verts and all(k in verts[0] for k in ("red", "green", "blue")):
        colors = np.array([[v["red"], v["green"], v["blue"]] for v in verts],
                          dtype=np.float64) / 255.0
    faces = None
    if "face" in data:
        tri = []
        for row in data["face"]:
            idx = row.get("vertex_indices", row.get("vertex_index"))
            if idx is None:
                raise InputError("PLY face element lacks vertex_indices")
            if len(idx) == 3:
                tri.append(idx)
            elif len(idx) > 3:  # fan-triangulate convex polygons
                tri.extend((idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1))
        faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    return {"vertices": vertices, "faces": faces, "colors": colors}


def write_ply(path, vertices, faces=None, colors=None, binary=True):
    """Write vertices (N,3), optional faces (T,3) and colors (N,3 in [0,1])."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = vertices.shape[0]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if colors.shape[0] != n:
            raise InputError("colors length does not match vertices")
        rgb = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        header += [f"element face {faces.shape[0]}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            v32 = vertices.astype("<f4")
            if colors is not None:
                for i in range(n):
                    f.write(v32[i].tobytes())
                    f.write(rgb[i].tobytes())
            else:
                f.write(v32.tobytes())
            if faces is not None:
                f32 = faces.astype("<i4")
                for i in range(faces.shape[0]):
                    f.write(b"\x03" + f32[i].tobytes())
        else:
            for i in range(n):
                v32 = vertices[i].astype(np.float32)
                row = f"{v32[0]:.9g} {v32[1]:.9g} {v32[2]:.9g}"
                if colors is not None:
                    row += f" {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}"
                f.write((row + "\n").encode("ascii"))
            if faces is not None:
                for t in faces:
                    f.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode("ascii"))
