"""Mesh-sequence export: per-frame OBJ/PLY or the packed ``FTK1`` container.

Packed layout (little-endian): magic ``b"FTK1"``, u32 T, u32 n, u32 m,
m x 3 u32 face indices, then T x n x 3 float32 vertex coordinates.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..mesh import load_mesh
from ..mesh.io import write_obj, write_ply

MAGIC = b"FTK1"
FORMATS = ("obj", "ply", "packed")


def write_packed(path, vertices, faces) -> None:
    vertices = np.asarray(vertices)
    faces = np.asarray(faces)
    if vertices.ndim != 3 or vertices.shape[-1] != 3:
        raise ValueError(f"expected (T, n, 3) vertices, got {vertices.shape}")
    T, n, _ = vertices.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", T, n, len(faces)))
        fh.write(np.ascontiguousarray(faces, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(vertices, dtype="<f4").tobytes())


def read_packed(path):
    """Return ``(vertices (T, n, 3) float32, faces (m, 3) int64)``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated header")
    T, n, m = struct.unpack_from("<III", buf, 4)
    need = 16 + 12 * m + 12 * T * n
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(buf)}")
    faces = np.frombuffer(buf, "<u4", 3 * m, 16).reshape(m, 3).astype(np.int64)
    verts = np.frombuffer(buf, "<f4", 3 * T * n, 16 + 12 * m).reshape(T, n, 3).astype(np.float32)
    if m and faces.max() >= n:
        raise FormatError(f"{path}: face index out of range")
    return verts, faces


def export_sequence(vertices, faces, out_dir, fmt: str = "obj", stem: str = "frame") -> list[Path]:
    """Write a mesh sequence; returns the files written."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vertices = np.asarray(vertices)
    if fmt == "packed":
        path = out_dir / "sequence.ftk"
        write_packed(path, vertices, faces)
        return [path]
    written = []
    for t, v in enumerate(vertices):
        path = out_dir / f"{stem}_{t:05d}.{fmt}"
        if fmt == "obj":
            write_obj(path, v.astype(np.float32), faces)
        else:
            write_ply(path, v.astype(np.float32), faces)
        written.append(path)
    return written


def read_sequence(path):
    """Load a sequence from a packed file or a directory of per-frame meshes."""
    path = Path(path)
    if path.is_file():
        return read_packed(path)
    if (path / "sequence.ftk").exists():
        return read_packed(path / "sequence.ftk")
    frames = sorted(p for p in path.iterdir() if p.suffix.lower() in (".obj", ".ply"))
    if not frames:
        raise FormatError(f"{path}: no mesh frames found")
    meshes = [load_mesh(p) for p in frames]
    faces = meshes[0].faces
    for p, mesh in zip(frames, meshes):
        if not np.array_equal(mesh.faces, faces):
            raise FormatError(f"{p}: connectivity differs from the first frame")
    return np.stack([m.vertices for m in meshes]), faces
