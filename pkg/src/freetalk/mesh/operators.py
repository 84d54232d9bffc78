"""Discrete differential operators on triangle meshes."""
from __future__ import annotations

import hashlib
import logging
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NumericalError
from .core import Mesh

logger = logging.getLogger(__name__)

FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


class NonManifoldWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SurfaceOperators:
    """Cotangent Laplacian ``L`` (positive semidefinite convention), lumped mass and normals.

    ``evals``/``evecs`` hold the smallest generalized eigenpairs of ``L phi = lambda M phi``
    when a spectral basis was requested; ``evecs`` is M-orthonormal.
    """

    laplacian: sp.csr_matrix
    mass: np.ndarray
    normals: np.ndarray
    evals: np.ndarray | None = None
    evecs: np.ndarray | None = None
    grad_x: sp.csr_matrix | None = None
    grad_y: sp.csr_matrix | None = None

    @property
    def n_vertices(self) -> int:
        return self.mass.shape[0]

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass)


def face_normals(vertices, faces, normalize=True):
    v = np.asarray(vertices)
    e1 = v[faces[:, 1]] - v[faces[:, 0]]
    e2 = v[faces[:, 2]] - v[faces[:, 0]]
    n = np.cross(e1, e2)
    if normalize:
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    return n


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals; vertices with an empty or zero-area star get (0, 0, 1)."""
    fn = face_normals(mesh.vertices, mesh.faces, normalize=False)  # |cross| = 2 * area
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    out = np.tile(FALLBACK_NORMAL, (mesh.n_vertices, 1))
    ok = norm > 1e-300
    out[ok] = acc[ok] / norm[ok, None]
    return out


def _cotangents(vertices, faces):
    """Per-face cotangent of the angle at each corner, shape (m, 3)."""
    v = vertices
    cots = np.empty(faces.shape, dtype=np.float64)
    for k in range(3):
        i, j, l = faces[:, k], faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        a = v[j] - v[i]
        b = v[l] - v[i]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = np.einsum("ij,ij->i", a, b)
        cots[:, k] = np.divide(dot, cross, out=np.zeros_like(dot), where=cross > 0)
    return cots


def cotan_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Positive semidefinite cotan Laplacian: ``L_ij = -(cot a + cot b)/2``, ``L_ii = -sum_j L_ij``."""
    f = mesh.faces
    n = mesh.n_vertices
    cots = _cotangents(mesh.vertices, f)
    rows, cols, vals = [], [], []
    for k in range(3):
        # the angle at corner k is opposite the edge (k+1, k+2)
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        w = -0.5 * cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    off = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Barycentric lumped mass: a third of the area of every incident face."""
    area = 0.5 * np.linalg.norm(face_normals(mesh.vertices, mesh.faces, normalize=False), axis=1)
    mass = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(mass, mesh.faces[:, k], area / 3.0)
    # isolated or zero-area vertices still need a positive weight
    floor = max(area.mean() if area.size else 1.0, 1e-12) * 1e-8
    return np.maximum(mass, floor)


def is_edge_manifold(mesh: Mesh) -> bool:
    e = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                mesh.faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts <= 2))


def mean_edge_length(mesh: Mesh) -> float:
    v, f = mesh.vertices, mesh.faces
    e = np.concatenate([v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 1]], v[f[:, 0]] - v[f[:, 2]]])
    return float(np.linalg.norm(e, axis=1).mean())


def build_operators(mesh: Mesh, spectral_k: int | None = None, gradients: bool = False) -> SurfaceOperators:
    """Assemble Laplacian, mass, normals and optionally a spectral basis / tangent gradients.

    Non-manifold input is accepted; a :class:`NonManifoldWarning` is emitted.
    """
    if not is_edge_manifold(mesh):
        warnings.warn("mesh is not edge-manifold; operators may be inaccurate", NonManifoldWarning)
    L = cotan_laplacian(mesh)
    mass = lumped_mass(mesh)
    normals = compute_vertex_normals(mesh)
    evals = evecs = None
    if spectral_k:
        evals, evecs = spectral_basis(L, mass, spectral_k)
    gx = gy = None
    if gradients:
        gx, gy = tangent_gradients(mesh, normals)
    return SurfaceOperators(L, mass, normals, evals, evecs, gx, gy)


def spectral_basis(L, mass, k):
    """The ``k`` smallest eigenpairs of ``L phi = lambda M phi`` with ``phi^T M phi = I``."""
    n = L.shape[0]
    k = min(int(k), n)
    try:
        if k >= n - 1 or n <= 400:
            evals, evecs = scipy.linalg.eigh(L.toarray(), np.diag(mass))
            evals, evecs = evals[:k], evecs[:, :k]
        else:
            # shift-invert around a small negative sigma keeps the factorization nonsingular
            eps = 1e-8 * abs(L.diagonal()).mean()
            evals, evecs = spla.eigsh(L + eps * sp.diags(mass), k=k, M=sp.diags(mass),
                                      sigma=-eps)
            evals = evals - eps
    except (np.linalg.LinAlgError, spla.ArpackError, spla.ArpackNoConvergence) as exc:
        raise NumericalError(f"eigen-solve failed: {exc}") from exc
    order = np.argsort(evals)
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # canonical sign so cached bases are reproducible
    piv = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[piv, np.arange(evecs.shape[1])])
    return evals, evecs


def heat_diffuse(ops: SurfaceOperators, signal, t: float, method: str = "implicit") -> np.ndarray:
    """One heat-flow step of duration ``t``.

    ``implicit`` solves ``(M + t L) u = M u0``.  ``spectral`` applies ``1 / (1 + t lambda)``
    in the stored eigenbasis; with a truncated basis this also projects onto it.
    """
    if t < 0:
        raise ValueError("diffusion time must be nonnegative")
    u0 = np.asarray(signal, dtype=np.float64)
    squeeze = u0.ndim == 1
    if squeeze:
        u0 = u0[:, None]
    if t == 0:
        return u0[:, 0].copy() if squeeze else u0.copy()
    if method == "spectral":
        if ops.evecs is None:
            raise ValueError("spectral diffusion needs a basis; pass spectral_k to build_operators")
        coef = ops.evecs.T @ (ops.mass[:, None] * u0)
        out = ops.evecs @ (coef / (1.0 + t * ops.evals)[:, None])
    elif method == "implicit":
        A = (sp.diags(ops.mass) + t * ops.laplacian).tocsc()
        try:
            solve = spla.factorized(A)
        except RuntimeError as exc:
            raise NumericalError(f"heat solve failed: {exc}") from exc
        rhs = ops.mass[:, None] * u0
        out = np.column_stack([solve(rhs[:, c]) for c in range(rhs.shape[1])])
    else:
        raise ValueError(f"unknown diffusion method {method!r}")
    if not np.all(np.isfinite(out)):
        raise NumericalError("heat diffusion produced non-finite values")
    return out[:, 0] if squeeze else out


def tangent_frames(normals):
    """Orthonormal tangent bases ``(e1, e2)`` perpendicular to each normal."""
    ref = np.where(np.abs(normals[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = ref - np.einsum("ij,ij->i", ref, normals)[:, None] * normals
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)
    return e1, e2


def tangent_gradients(mesh: Mesh, normals=None):
    """Least-squares per-vertex gradient operators in the local tangent frame.

    Returns sparse ``Gx, Gy`` (n x n) such that ``Gx @ u``, ``Gy @ u`` are the tangent
    components of the gradient of a vertex function ``u``.
    """
    if normals is None:
        normals = compute_vertex_normals(mesh)
    v = mesh.vertices
    n = mesh.n_vertices
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    nbrs = [[] for _ in range(n)]
    for a, b in e:
        nbrs[a].append(b)
        nbrs[b].append(a)
    e1, e2 = tangent_frames(normals)
    rows_x, rows_y, cols, vx, vy = [], [], [], [], []
    for i in range(n):
        nb = nbrs[i]
        if len(nb) < 2:
            continue
        d = v[nb] - v[i]
        A = np.stack([d @ e1[i], d @ e2[i]], axis=1)
        # ridge term keeps nearly collinear stars solvable
        pinv = np.linalg.solve(A.T @ A + 1e-10 * np.eye(2), A.T)
        for c, j in enumerate(nb):
            cols += [j, i]
            rows_x += [i, i]
            rows_y += [i, i]
            vx += [pinv[0, c], -pinv[0, c]]
            vy += [pinv[1, c], -pinv[1, c]]
    gx = sp.csr_matrix((vx, (rows_x, cols)), shape=(n, n))
    gy = sp.csr_matrix((vy, (rows_y, cols)), shape=(n, n))
    return gx, gy


def subdivide(mesh: Mesh) -> Mesh:
    """1-to-4 midpoint subdivision; original vertices keep their indices."""
    f = mesh.faces
    n = mesh.n_vertices
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e_sorted = np.sort(e, axis=1)
    uniq, inv = np.unique(e_sorted, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = n + inv.reshape(3, -1).T  # (m, 3) midpoints of edges (01, 12, 20)
    verts = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])])
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = mid[:, 0], mid[:, 1], mid[:, 2]
    faces = np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1),
    ])
    return Mesh(verts, faces)


def mesh_fingerprint(mesh: Mesh) -> str:
    h = hashlib.sha1()
    h.update(mesh.vertices.tobytes())
    h.update(mesh.faces.tobytes())
    return h.hexdigest()[:16]


def cache_dir() -> Path | None:
    root = os.environ.get("FREETALK_CACHE")
    return Path(root) if root else None


def cached_operators(mesh: Mesh, spectral_k: int | None = None, gradients: bool = False) -> SurfaceOperators:
    """:func:`build_operators`, memoized on disk under ``$FREETALK_CACHE`` when it is set."""
    root = cache_dir()
    if root is None:
        return build_operators(mesh, spectral_k, gradients)
    path = root / "operators" / f"{mesh_fingerprint(mesh)}_k{spectral_k or 0}_g{int(gradients)}.npz"
    if path.exists():
        d = np.load(path, allow_pickle=False)
        ops = SurfaceOperators(
            sp.csr_matrix((d["L_data"], d["L_indices"], d["L_indptr"]), shape=tuple(d["L_shape"])),
            d["mass"], d["normals"],
            d["evals"] if d["evals"].size else None,
            d["evecs"] if d["evecs"].size else None,
        )
        if gradients:
            gx, gy = (sp.csr_matrix((d[f"{k}_data"], d[f"{k}_indices"], d[f"{k}_indptr"]),
                                    shape=tuple(d["L_shape"])) for k in ("gx", "gy"))
            ops = SurfaceOperators(ops.laplacian, ops.mass, ops.normals, ops.evals, ops.evecs, gx, gy)
        return ops
    ops = build_operators(mesh, spectral_k, gradients)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(
        L_data=ops.laplacian.data, L_indices=ops.laplacian.indices, L_indptr=ops.laplacian.indptr,
        L_shape=np.array(ops.laplacian.shape), mass=ops.mass, normals=ops.normals,
        evals=ops.evals if ops.evals is not None else np.zeros(0),
        evecs=ops.evecs if ops.evecs is not None else np.zeros(0),
    )
    if gradients:
        for k, g in (("gx", ops.grad_x), ("gy", ops.grad_y)):
            payload.update({f"{k}_data": g.data, f"{k}_indices": g.indices, f"{k}_indptr": g.indptr})
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **payload)
    os.replace(tmp, path)
    logger.debug("cached operators at %s", path)
    return ops
