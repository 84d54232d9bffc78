"""Wavefront OBJ and PLY (ASCII / binary little-endian) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError
from .core import Mesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_mesh(path) -> Mesh:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _read_obj(path)
    if suffix == ".ply":
        return _read_ply(path)
    raise FormatError(f"{path}: unsupported mesh format {suffix!r}")


def save_mesh(mesh: Mesh, path, binary: bool = True) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        write_obj(path, mesh.vertices, mesh.faces)
    elif suffix == ".ply":
        write_ply(path, mesh.vertices, mesh.faces, binary=binary)
    else:
        raise FormatError(f"{path}: unsupported mesh format {suffix!r}")


def _read_obj(path: Path) -> Mesh:
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    # fan-triangulate polygons
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not verts or any(len(v) != 3 for v in verts):
        raise FormatError(f"{path}: missing or malformed vertex records")
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _read_ply(path: Path) -> Mesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise FormatError(f"{path}: missing 'ply' magic")
        fmt = None
        elements = []  # (name, count, [(prop name, dtype | (count dtype, item dtype))])
        while True:
            raw = fh.readline()
            if not raw:
                raise FormatError(f"{path}: truncated header")
            tok = raw.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if not elements:
                    raise FormatError(f"{path}: property before element")
                try:
                    if tok[1] == "list":
                        elements[-1][2].append((tok[4], (_PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
                    else:
                        elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
                except (KeyError, IndexError) as exc:
                    raise FormatError(f"{path}: bad property line {raw!r}") from exc
        if fmt == "ascii":
            data = _ply_ascii(fh, elements, path)
        elif fmt == "binary_little_endian":
            data = _ply_binary(fh, elements, "<", path)
        elif fmt == "binary_big_endian":
            data = _ply_binary(fh, elements, ">", path)
        else:
            raise FormatError(f"{path}: unknown PLY format {fmt!r}")
    if "vertex" not in data:
        raise FormatError(f"{path}: no vertex element")
    vd = data["vertex"]
    try:
        verts = np.stack([vd["x"], vd["y"], vd["z"]], axis=1).astype(np.float64)
    except KeyError as exc:
        raise FormatError(f"{path}: vertex element lacks {exc}") from exc
    faces = []
    fd = data.get("face", {})
    lists = fd.get("vertex_indices", fd.get("vertex_index", []))
    if isinstance(lists, np.ndarray):
        return Mesh(verts, lists)
    for idx in lists:
        faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _ply_ascii(fh, elements, path):
    tokens = fh.read().decode("ascii").split()
    pos = 0
    out = {}
    try:
        for name, count, props in elements:
            cols = {p: [] for p, _ in props}
            for _ in range(count):
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        k = int(tokens[pos])
                        cols[pname].append([int(float(t)) for t in tokens[pos + 1:pos + 1 + k]])
                        pos += 1 + k
                    else:
                        cols[pname].append(float(tokens[pos]))
                        pos += 1
            out[name] = {p: (np.array(v) if not isinstance(t, tuple) else v)
                         for (p, t), v in zip(props, cols.values())}
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed ASCII PLY body") from exc
    return out


def _ply_binary(fh, elements, endian, path):
    buf = fh.read()
    pos = 0
    out = {}
    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, endian + t) for p, t in props])
            nbytes = dt.itemsize * count
            if pos + nbytes > len(buf):
                raise FormatError(f"{path}: truncated binary PLY")
            arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
            pos += nbytes
            out[name] = {p: arr[p] for p, _ in props}
            continue
        if len(props) == 1:
            # fast path: a lone list property holding only triangles
            pname, (ct, it) = props[0]
            dt = np.dtype([("k", endian + ct), ("idx", endian + it, (3,))])
            if pos + dt.itemsize * count <= len(buf):
                arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
                if np.all(arr["k"] == 3):
                    out[name] = {pname: arr["idx"].astype(np.int64)}
                    pos += dt.itemsize * count
                    continue
        cols = {p: [] for p, _ in props}
        try:
            for _ in range(count):
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        cdt = np.dtype(endian + ptype[0])
                        k = int(np.frombuffer(buf, cdt, 1, pos)[0])
                        pos += cdt.itemsize
                        idt = np.dtype(endian + ptype[1])
                        cols[pname].append(np.frombuffer(buf, idt, k, pos).tolist())
                        pos += idt.itemsize * k
                    else:
                        dt = np.dtype(endian + ptype)
                        cols[pname].append(np.frombuffer(buf, dt, 1, pos)[0])
                        pos += dt.itemsize
        except ValueError as exc:
            raise FormatError(f"{path}: truncated binary PLY") from exc
        out[name] = {p: (np.array(v) if not isinstance(t, tuple) else v)
                     for (p, t), v in zip(props, cols.values())}
    return out


def write_obj(path, vertices, faces) -> None:
    vertices = np.asarray(vertices)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_ply(path, vertices, faces, binary: bool = True) -> None:
    """Write a PLY file; coordinates keep the dtype of ``vertices`` (float32 or float64)."""
    vertices = np.asarray(vertices)
    faces = np.asarray(faces, dtype=np.int64)
    ptype = "float" if vertices.dtype == np.float32 else "double"
    vdtype = "<f4" if ptype == "float" else "<f8"
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(vertices)}\n"
        f"property {ptype} x\nproperty {ptype} y\nproperty {ptype} z\n"
        f"element face {len(faces)}\nproperty list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(vertices, dtype=vdtype).tobytes())
            rec = np.zeros(len(faces), dtype=[("k", "u1"), ("idx", "<i4", (3,))])
            rec["k"] = 3
            rec["idx"] = faces
            fh.write(rec.tobytes())
        else:
            body = [" ".join(repr(float(c)) for c in row) for row in vertices]
            body += [f"3 {a} {b} {c}" for a, b, c in faces.tolist()]
            fh.write(("\n".join(body) + "\n").encode("ascii"))

