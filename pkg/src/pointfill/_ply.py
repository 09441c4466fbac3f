"""Minimal PLY reader/writer: ASCII and binary (little/big endian),
vertex positions plus optional triangular faces. Raises FormatError with
line or byte-offset diagnostics on malformed input."""

from __future__ import annotations

import numpy as np

from .errors import FormatError

_SCALAR_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


class _Property:
    def __init__(self, name, dtype, is_list=False, count_dtype=None):
        self.name = name
        self.dtype = dtype
        self.is_list = is_list
        self.count_dtype = count_dtype


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties = []


def _parse_header(fh):
    line = fh.readline()
    if line.strip() != b"ply":
        raise FormatError("line 1: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise FormatError(f"line {line_no}: header ended prematurely")
        tokens = raw.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in (
                "ascii",
                "binary_little_endian",
                "binary_big_endian",
            ):
                raise FormatError(f"line {line_no}: unknown format {tokens[1:]}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise FormatError(f"line {line_no}: malformed element line")
            try:
                elements.append(_Element(tokens[1], int(tokens[2])))
            except ValueError:
                raise FormatError(
                    f"line {line_no}: bad element count {tokens[2]!r}"
                ) from None
        elif tokens[0] == "property":
            if not elements:
                raise FormatError(
                    f"line {line_no}: property before any element"
                )
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise FormatError(
                        f"line {line_no}: malformed list property"
                    )
                count_t = _SCALAR_TYPES.get(tokens[2])
                item_t = _SCALAR_TYPES.get(tokens[3])
                if count_t is None or item_t is None:
                    raise FormatError(
                        f"line {line_no}: unknown list types {tokens[2:4]}"
                    )
                elements[-1].properties.append(
                    _Property(tokens[4], item_t, True, count_t)
                )
            else:
                if len(tokens) != 3:
                    raise FormatError(f"line {line_no}: malformed property")
                t = _SCALAR_TYPES.get(tokens[1])
                if t is None:
                    raise FormatError(
                        f"line {line_no}: unknown property type {tokens[1]!r}"
                    )
                elements[-1].properties.append(_Property(tokens[2], t))
        elif tokens[0] == "end_header":
            break
        else:
            # Unknown directives (obj_info etc.) are skipped.
            continue
    if fmt is None:
        raise FormatError("header has no format line")
    return fmt, elements, line_no


def read_ply(path):
    """Returns {'vertices': (N, 3) float64, 'faces': (F, 3) int64 or None}."""
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        if fmt == "ascii":
            data = _read_ascii(fh, elements, header_lines)
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            data = _read_binary(fh, elements, endian)

    vert = next((e for e in elements if e.name == "vertex"), None)
    if vert is None:
        raise FormatError("file has no vertex element")
    names = [p.name for p in vert.properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"vertex element lacks property {axis!r}")
    cols = data["vertex"]
    vertices = np.stack(
        [cols["x"], cols["y"], cols["z"]], axis=1
    ).astype(np.float64)

    faces = None
    if "face" in data and data["face"]:
        lists = data["face"].get("vertex_indices") or data["face"].get(
            "vertex_index"
        )
        if lists is not None:
            tris = []
            for row in lists:
                if len(row) == 3:
                    tris.append(row)
                elif len(row) > 3:  # fan-triangulate polygons
                    for i in range(1, len(row) - 1):
                        tris.append([row[0], row[i], row[i + 1]])
            faces = (
                np.asarray(tris, dtype=np.int64)
                if tris
                else np.zeros((0, 3), dtype=np.int64)
            )
    return {"vertices": vertices, "faces": faces}


def _read_ascii(fh, elements, header_lines):
    data = {}
    line_no = header_lines
    for el in elements:
        cols = {p.name: [] for p in el.properties}
        for _ in range(el.count):
            raw = fh.readline()
            line_no += 1
            if not raw:
                raise FormatError(
                    f"line {line_no}: file truncated inside element "
                    f"{el.name!r}"
                )
            tokens = raw.split()
            pos = 0
            try:
                for p in el.properties:
                    if p.is_list:
                        n = int(tokens[pos])
                        pos += 1
                        vals = [int(float(t)) for t in tokens[pos : pos + n]]
                        if len(vals) != n:
                            raise IndexError
                        pos += n
                        cols[p.name].append(vals)
                    else:
                        cols[p.name].append(float(tokens[pos]))
                        pos += 1
            except (ValueError, IndexError):
                raise FormatError(
                    f"line {line_no}: cannot parse element {el.name!r} row"
                ) from None
        for p in el.properties:
            if not p.is_list:
                cols[p.name] = np.asarray(cols[p.name], dtype=np.float64)
        data[el.name] = cols
    return data


def _read_binary(fh, elements, endian):
    data = {}
    body = fh.read()
    offset = 0
    for el in elements:
        has_list = any(p.is_list for p in el.properties)
        if not has_list:
            dtype = np.dtype(
                [(p.name, endian + p.dtype) for p in el.properties]
            )
            nbytes = dtype.itemsize * el.count
            if offset + nbytes > len(body):
                raise FormatError(
                    f"byte {offset}: file truncated inside element "
                    f"{el.name!r} (needs {nbytes} bytes)"
                )
            rows = np.frombuffer(
                body, dtype=dtype, count=el.count, offset=offset
            )
            offset += nbytes
            data[el.name] = {
                p.name: rows[p.name].astype(np.float64)
                for p in el.properties
            }
            continue
        cols = {p.name: [] for p in el.properties}
        for _ in range(el.count):
            for p in el.properties:
                if p.is_list:
                    cdt = np.dtype(endian + p.count_dtype)
                    if offset + cdt.itemsize > len(body):
                        raise FormatError(
                            f"byte {offset}: truncated list count in "
                            f"{el.name!r}"
                        )
                    n = int(
                        np.frombuffer(body, cdt, count=1, offset=offset)[0]
                    )
                    offset += cdt.itemsize
                    idt = np.dtype(endian + p.dtype)
                    need = idt.itemsize * n
                    if offset + need > len(body):
                        raise FormatError(
                            f"byte {offset}: truncated list data in "
                            f"{el.name!r}"
                        )
                    vals = np.frombuffer(body, idt, count=n, offset=offset)
                    offset += need
                    cols[p.name].append([int(v) for v in vals])
                else:
                    idt = np.dtype(endian + p.dtype)
                    if offset + idt.itemsize > len(body):
                        raise FormatError(
                            f"byte {offset}: truncated scalar in {el.name!r}"
                        )
                    cols[p.name].append(
                        float(
                            np.frombuffer(body, idt, count=1, offset=offset)[
                                0
                            ]
                        )
                    )
                    offset += idt.itemsize
        for p in el.properties:
            if not p.is_list:
                cols[p.name] = np.asarray(cols[p.name], dtype=np.float64)
        data[el.name] = cols
    return data


def write_points_ascii(path, points) -> None:
    """ASCII PLY of double-precision points; %.17g repr round-trips
    float64 exactly."""
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {pts.shape[0]}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write("end_header\n")
        for p in pts:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def write_mesh_binary(path, vertices, faces) -> None:
    """Binary little-endian PLY with float32 vertices and int32 faces."""
    verts = np.ascontiguousarray(vertices, dtype="<f4")
    tris = np.asarray(faces, dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {verts.shape[0]}\n".encode())
        fh.write(b"property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {tris.shape[0]}\n".encode())
        fh.write(b"property list uchar int vertex_indices\n")
        fh.write(b"end_header\n")
        fh.write(verts.tobytes())
        if tris.shape[0]:
            rec = np.empty(
                tris.shape[0],
                dtype=[("n", "u1"), ("idx", "<i4", (3,))],
            )
            rec["n"] = 3
            rec["idx"] = tris
            fh.write(rec.tobytes())
