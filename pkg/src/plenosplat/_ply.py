"""Minimal PLY reader/writer (ASCII and binary little-endian).

Only what the plenoptic and 3DGS formats need: scalar properties on any
element and list properties on the face element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyFormatError(ValueError):
    pass


@dataclass
class PlyProperty:
    name: str
    dtype: str
    # set for list properties: dtype of the count prefix
    count_dtype: str | None = None


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list[PlyProperty] = field(default_factory=list)

    @property
    def has_lists(self) -> bool:
        return any(p.count_dtype is not None for p in self.properties)

    def scalar_dtype(self, endian: str = "<") -> np.dtype:
        return np.dtype([(p.name, endian + p.dtype) for p in self.properties])


@dataclass
class PlyHeader:
    fmt: str
    elements: list[PlyElement]
    comments: list[str]
    size: int  # header length in bytes, including the end_header newline

    def element(self, name: str) -> PlyElement | None:
        for el in self.elements:
            if el.name == name:
                return el
        return None


def parse_header(data: bytes) -> PlyHeader:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyFormatError("not a PLY stream (missing magic or end_header)")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyFormatError("truncated header")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[PlyElement] = []
    comments: list[str] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok:
            continue
        key = tok[0]
        if key == "format":
            if len(tok) != 3:
                raise PlyFormatError(f"header line {lineno}: bad format line")
            fmt = tok[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyFormatError(f"unsupported PLY format {fmt!r}")
        elif key in ("comment", "obj_info"):
            comments.append(raw.strip()[len(key):].strip())
        elif key == "element":
            if len(tok) != 3:
                raise PlyFormatError(f"header line {lineno}: bad element line")
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyFormatError(f"header line {lineno}: bad element count") from None
            elements.append(PlyElement(tok[1], count))
        elif key == "property":
            if not elements:
                raise PlyFormatError(f"header line {lineno}: property before element")
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in PLY_TYPES or tok[3] not in PLY_TYPES:
                    raise PlyFormatError(f"header line {lineno}: unknown list type")
                elements[-1].properties.append(
                    PlyProperty(tok[4], PLY_TYPES[tok[3]], PLY_TYPES[tok[2]])
                )
            elif len(tok) == 3:
                if tok[1] not in PLY_TYPES:
                    raise PlyFormatError(f"header line {lineno}: unknown type {tok[1]!r}")
                elements[-1].properties.append(PlyProperty(tok[2], PLY_TYPES[tok[1]]))
            else:
                raise PlyFormatError(f"header line {lineno}: bad property line")
        else:
            raise PlyFormatError(f"header line {lineno}: unexpected keyword {key!r}")
    if fmt is None:
        raise PlyFormatError("missing format line")
    return PlyHeader(fmt, elements, comments, nl + 1)


def _read_binary_lists(el: PlyElement, buf: memoryview, off: int):
    """Row-by-row decode for elements carrying list properties."""
    cols: dict[str, list] = {p.name: [] for p in el.properties}
    for _ in range(el.count):
        for p in el.properties:
            if p.count_dtype is None:
                dt = np.dtype("<" + p.dtype)
                if off + dt.itemsize > len(buf):
                    raise PlyFormatError(f"truncated {el.name} element")
                cols[p.name].append(np.frombuffer(buf, dt, 1, off)[0])
                off += dt.itemsize
            else:
                cdt = np.dtype("<" + p.count_dtype)
                if off + cdt.itemsize > len(buf):
                    raise PlyFormatError(f"truncated {el.name} element")
                n = int(np.frombuffer(buf, cdt, 1, off)[0])
                off += cdt.itemsize
                dt = np.dtype("<" + p.dtype)
                if off + n * dt.itemsize > len(buf):
                    raise PlyFormatError(f"truncated {el.name} element")
                cols[p.name].append(np.frombuffer(buf, dt, n, off).copy())
                off += n * dt.itemsize
    return cols, off


def read_ply(data: bytes) -> tuple[PlyHeader, dict[str, object]]:
    """Decode a PLY byte string.

    Elements without list properties come back as numpy structured arrays;
    elements with list properties come back as ``{property: list}`` dicts.
    """
    header = parse_header(data)
    out: dict[str, object] = {}
    if header.fmt == "binary_little_endian":
        buf = memoryview(data)
        off = header.size
        for el in header.elements:
            if el.has_lists:
                out[el.name], off = _read_binary_lists(el, buf, off)
            else:
                dt = el.scalar_dtype("<")
                nbytes = dt.itemsize * el.count
                if off + nbytes > len(data):
                    raise PlyFormatError(f"truncated {el.name} element")
                out[el.name] = np.frombuffer(buf, dt, el.count, off).copy()
                off += nbytes
        return header, out

    tokens = data[header.size:].split()
    pos = 0
    for el in header.elements:
        if el.has_lists:
            cols: dict[str, list] = {p.name: [] for p in el.properties}
            for _ in range(el.count):
                for p in el.properties:
                    try:
                        if p.count_dtype is None:
                            cols[p.name].append(np.array(tokens[pos].decode(), dtype=p.dtype)[()])
                            pos += 1
                        else:
                            n = int(tokens[pos])
                            vals = [t.decode() for t in tokens[pos + 1: pos + 1 + n]]
                            if len(vals) != n:
                                raise IndexError
                            cols[p.name].append(np.array(vals, dtype=p.dtype))
                            pos += 1 + n
                    except (IndexError, ValueError):
                        raise PlyFormatError(f"bad or truncated ASCII data in {el.name}") from None
            out[el.name] = cols
        else:
            nprop = len(el.properties)
            chunk = tokens[pos: pos + nprop * el.count]
            if len(chunk) != nprop * el.count:
                raise PlyFormatError(f"truncated ASCII data in {el.name}")
            arr = np.empty(el.count, dtype=el.scalar_dtype("<"))
            if el.count:
                try:
                    table = np.array([t.decode() for t in chunk]).reshape(el.count, nprop)
                    for k, p in enumerate(el.properties):
                        col = table[:, k]
                        if p.dtype.startswith("f"):
                            arr[p.name] = col.astype(np.float64)
                        else:
                            arr[p.name] = col.astype(np.int64)
                except ValueError:
                    raise PlyFormatError(f"non-numeric ASCII data in {el.name}") from None
            out[el.name] = arr
            pos += nprop * el.count
    return header, out


def header_bytes(elements: list[PlyElement], comments: list[str] = ()) -> bytes:
    rev = {v: k for k, v in PLY_TYPES.items() if k in
           ("char", "uchar", "short", "ushort", "int", "uint", "float", "double")}
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    for el in elements:
        lines.append(f"element {el.name} {el.count}")
        for p in el.properties:
            if p.count_dtype is None:
                lines.append(f"property {rev[p.dtype]} {p.name}")
            else:
                lines.append(f"property list {rev[p.count_dtype]} {rev[p.dtype]} {p.name}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")
