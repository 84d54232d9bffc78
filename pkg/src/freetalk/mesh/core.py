"""Mesh and landmark data types."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError

DEFAULT_N_LANDMARKS = 68
REQUIRED_REGIONS = ("mouth", "upper_face", "lips")


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh ``(V, F)`` with 0-based face indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DataError(f"vertices must be n x 3, got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise DataError(f"faces must be m x 3, got {f.shape}")
        if v.shape[0] < 3:
            raise DataError("a mesh needs at least 3 vertices")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise DataError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise DataError("degenerate face repeats a vertex")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite vertex coordinates")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces)

    def permuted(self, perm) -> "Mesh":
        """Relabel vertices so that new vertex ``k`` is old vertex ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return Mesh(self.vertices[perm], inv[self.faces])


@dataclass(frozen=True)
class Anchor:
    """A landmark location: either a vertex, or a point inside a face."""

    vertex: int | None = None
    face: int | None = None
    bary: tuple[float, float, float] | None = None

    def __post_init__(self):
        if (self.vertex is None) == (self.face is None):
            raise DataError("anchor needs exactly one of 'vertex' or 'face'")
        if self.face is not None:
            if self.bary is None or len(self.bary) != 3:
                raise DataError("face anchor needs a barycentric triple")
            b = np.asarray(self.bary, dtype=np.float64)
            if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-9:
                raise DataError(f"invalid barycentric coordinates {self.bary}")

    def to_json(self) -> dict:
        if self.vertex is not None:
            return {"vertex": int(self.vertex)}
        return {"face": int(self.face), "bary": [float(x) for x in self.bary]}

    @classmethod
    def from_json(cls, obj: dict) -> "Anchor":
        if "vertex" in obj:
            return cls(vertex=int(obj["vertex"]))
        if "face" in obj:
            return cls(face=int(obj["face"]), bary=tuple(float(x) for x in obj["bary"]))
        raise FormatError(f"unrecognised anchor {obj!r}")


@dataclass(frozen=True)
class LandmarkSpec:
    anchors: tuple[Anchor, ...]
    regions: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_landmarks(self) -> int:
        return len(self.anchors)

    def region(self, name: str) -> np.ndarray:
        try:
            return self.regions[name]
        except KeyError:
            raise DataError(f"landmark spec has no region {name!r}") from None

    def validate(self, mesh: Mesh) -> None:
        n, m = mesh.n_vertices, mesh.n_faces
        for a in self.anchors:
            if a.vertex is not None and not 0 <= a.vertex < n:
                raise DataError(f"anchor vertex {a.vertex} out of range [0, {n})")
            if a.face is not None and not 0 <= a.face < m:
                raise DataError(f"anchor face {a.face} out of range [0, {m})")
        for name, idx in self.regions.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DataError(f"region {name!r} has vertex indices out of range")

    def interpolation_matrix(self, faces, n_vertices: int):
        """Sparse N x n matrix ``W`` with ``W @ V`` equal to the landmark positions."""
        from scipy import sparse

        rows, cols, vals = [], [], []
        for k, a in enumerate(self.anchors):
            if a.vertex is not None:
                rows.append(k)
                cols.append(a.vertex)
                vals.append(1.0)
            else:
                for vi, w in zip(faces[a.face], a.bary):
                    rows.append(k)
                    cols.append(int(vi))
                    vals.append(float(w))
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.anchors), n_vertices))

    def to_json(self) -> dict:
        return {
            "anchors": [a.to_json() for a in self.anchors],
            "regions": {k: [int(i) for i in v] for k, v in self.regions.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LandmarkSpec":
        try:
            anchors = tuple(Anchor.from_json(a) for a in obj["anchors"])
            regions = {k: np.asarray(v, dtype=np.int64) for k, v in obj.get("regions", {}).items()}
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed landmark spec: {exc}") from exc
        return cls(anchors, regions)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "LandmarkSpec":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return cls.from_json(obj)


@dataclass(frozen=True)
class LandmarkGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise DataError(f"self-loop on landmark {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise DataError(f"edge ({i}, {j}) out of range")
            seen.update((i, j))
        if len(seen) != self.n_nodes:
            raise DataError("every landmark must appear in at least one edge")

    def degree(self, node: int) -> int:
        return sum((i == node) + (j == node) for i, j in self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def normalized_adjacency(self) -> np.ndarray:
        """``D^-1/2 (A + I) D^-1/2``, the usual GCN propagation matrix."""
        a = self.adjacency() + np.eye(self.n_nodes)
        d = 1.0 / np.sqrt(a.sum(axis=1))
        return a * d[:, None] * d[None, :]

    def relabeled(self, perm) -> "LandmarkGraph":
        """New node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return LandmarkGraph(self.n_nodes, tuple((int(inv[i]), int(inv[j])) for i, j in self.edges))


# (start, stop, closed) in the usual 68-point ordering
_FACE68_GROUPS = (
    (0, 17, False),   # jaw
    (17, 22, False),  # right brow
    (22, 27, False),  # left brow
    (27, 31, False),  # nose bridge
    (31, 36, False),  # nostrils
    (36, 42, True),   # right eye
    (42, 48, True),   # left eye
    (48, 60, True),   # outer lips
    (60, 68, True),   # inner lips
)


def default_landmark_graph() -> LandmarkGraph:
    edges = []
    for start, stop, closed in _FACE68_GROUPS:
        edges.extend((k, k + 1) for k in range(start, stop - 1))
        if closed:
            edges.append((stop - 1, start))
    return LandmarkGraph(DEFAULT_N_LANDMARKS, tuple(edges))


def landmark_graph_for(n_landmarks: int) -> LandmarkGraph:
    """The 68-point graph when ``n_landmarks == 68``, otherwise a simple chain."""
    if n_landmarks == DEFAULT_N_LANDMARKS:
        return default_landmark_graph()
    if n_landmarks < 2:
        raise DataError("a landmark graph needs at least two nodes")
    return LandmarkGraph(n_landmarks, tuple((k, k + 1) for k in range(n_landmarks - 1)))


def extract_landmarks(mesh: Mesh, spec: LandmarkSpec) -> np.ndarray:
    """Landmark positions (N x 3) read off ``mesh`` at the anchors of ``spec``."""
    return extract_from_vertices(mesh.vertices, mesh.faces, spec)


def extract_from_vertices(vertices, faces, spec: LandmarkSpec) -> np.ndarray:
    """Like :func:`extract_landmarks` but for any ``(..., n, 3)`` vertex array."""
    vertices = np.asarray(vertices)
    n = vertices.shape[-2]
    out = []
    for a in spec.anchors:
        if a.vertex is not None:
            if not 0 <= a.vertex < n:
                raise DataError(f"anchor vertex {a.vertex} out of range")
            out.append(vertices[..., a.vertex, :])
        else:
            if not 0 <= a.face < len(faces):
                raise DataError(f"anchor face {a.face} out of range")
            tri = faces[a.face]
            b = a.bary
            out.append(b[0] * vertices[..., tri[0], :] + b[1] * vertices[..., tri[1], :]
                       + b[2] * vertices[..., tri[2], :])
    return np.stack(out, axis=-2)
