"""Sequence bundles: manifest loading, frame alignment, normalization statistics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..audio import FrameAlignedFeatures, frame_features, load_audio
from ..errors import DataError, FormatError
from ..mesh import LandmarkSpec, Mesh, extract_from_vertices, extract_landmarks, load_mesh
from .export import read_packed, read_sequence

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class SequenceBundle:
    """One clip: audio, affect label, template geometry and per-frame trajectories.

    At least one of ``landmarks`` (T x N x 3 absolute positions, ``.npy``) and ``vertices``
    (T x n x 3 with fixed connectivity, packed file or frame directory) is present.
    """

    id: str
    root: Path
    audio: str
    fps: float
    emotion: str
    intensity: int
    template: str
    landmark_spec: str
    landmarks: str | None = None
    vertices: str | None = None
    identity: str = ""
    meta: dict = field(default_factory=dict)

    def path(self, rel: str) -> Path:
        return self.root / rel

    @classmethod
    def from_entry(cls, root: Path, entry: dict) -> "SequenceBundle":
        try:
            b = cls(id=entry["id"], root=root, audio=entry["audio"], fps=float(entry["fps"]),
                    emotion=entry.get("emotion", "neutral"), intensity=int(entry.get("intensity", 1)),
                    template=entry["template"], landmark_spec=entry["landmark_spec"],
                    landmarks=entry.get("landmarks"), vertices=entry.get("vertices"),
                    identity=entry.get("identity", ""), meta=entry)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed sequence entry {entry.get('id', '?')}: {exc}") from exc
        if b.landmarks is None and b.vertices is None:
            raise FormatError(f"sequence {b.id} has neither landmarks nor vertices")
        return b

    @cached_property
    def template_mesh(self) -> Mesh:
        return load_mesh(self.path(self.template))

    @cached_property
    def spec(self) -> LandmarkSpec:
        spec = LandmarkSpec.load(self.path(self.landmark_spec))
        spec.validate(self.template_mesh)
        return spec

    @cached_property
    def template_landmarks(self) -> np.ndarray:
        return extract_landmarks(self.template_mesh, self.spec)

    def vertex_frames(self) -> np.ndarray:
        if self.vertices is None:
            raise DataError(f"sequence {self.id} carries no dense frames")
        verts, faces = read_sequence(self.path(self.vertices))
        if not np.array_equal(faces, self.template_mesh.faces):
            raise DataError(f"sequence {self.id}: frame connectivity differs from the template")
        return verts.astype(np.float64)

    def landmark_frames(self) -> np.ndarray:
        if self.landmarks is not None:
            lm = np.load(self.path(self.landmarks))
            if lm.ndim != 3 or lm.shape[1:] != (self.spec.n_landmarks, 3):
                raise DataError(f"sequence {self.id}: landmarks have shape {lm.shape}")
            return lm.astype(np.float64)
        return extract_from_vertices(self.vertex_frames(), self.template_mesh.faces, self.spec)

    def landmark_displacements(self) -> np.ndarray:
        return self.landmark_frames() - self.template_landmarks[None]

    def vertex_displacements(self) -> np.ndarray:
        return self.vertex_frames() - self.template_mesh.vertices[None]

    def features(self, config: dict | None = None) -> FrameAlignedFeatures:
        return frame_features(load_audio(self.path(self.audio)), self.fps, config)


def align_frames(*arrays, name: str = ""):
    """Truncate arrays to their common leading length, warning when they differ.

    Off-by-one differences are expected (frame counts rounded at different rates);
    larger gaps are still truncated but flagged louder.
    """
    lengths = [len(a) for a in arrays]
    T = min(lengths)
    if len(set(lengths)) > 1:
        level = logging.WARNING
        logger.log(level, "%s: frame counts %s differ, truncating to %d", name or "sequence", lengths, T)
    if T == 0:
        raise DataError(f"{name or 'sequence'}: no frames after alignment")
    return tuple(a[:T] for a in arrays)


class Corpus:
    """A dataset root with a ``manifest.json``."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.exists():
            raise DataError(f"{self.root}: no {MANIFEST}")
        try:
            self.manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        for key in ("sequences", "fps"):
            if key not in self.manifest:
                raise FormatError(f"{path}: missing {key!r}")
        self.bundles = {e["id"]: SequenceBundle.from_entry(self.root, e) for e in self.manifest["sequences"]}

    @property
    def emotions(self) -> list[str]:
        return list(self.manifest.get("emotions", ["neutral"]))

    @property
    def max_intensity(self) -> int:
        return int(self.manifest.get("max_intensity", 3))

    @property
    def norm_stats(self) -> dict:
        return self.manifest.get("norm_stats") or compute_norm_stats(self.root, self.manifest)

    def split(self, name: str) -> list[SequenceBundle]:
        splits = self.manifest.get("splits")
        if not splits:
            return list(self.bundles.values()) if name == "train" else []
        try:
            return [self.bundles[i] for i in splits.get(name, [])]
        except KeyError as exc:
            raise FormatError(f"split {name!r} names unknown sequence {exc}") from exc

    def __getitem__(self, sid: str) -> SequenceBundle:
        try:
            return self.bundles[sid]
        except KeyError:
            raise DataError(f"unknown sequence {sid!r}") from None


def compute_norm_stats(root, manifest: dict) -> dict:
    """Per-axis std of landmark and vertex displacements over the train split."""
    root = Path(root)
    splits = manifest.get("splits") or {}
    ids = set(splits.get("train") or [e["id"] for e in manifest["sequences"]])
    lms, verts = [], []
    for entry in manifest["sequences"]:
        if entry["id"] not in ids:
            continue
        b = SequenceBundle.from_entry(root, entry)
        lms.append(b.landmark_displacements().reshape(-1, 3))
        if b.vertices is not None:
            verts.append(b.vertex_displacements().reshape(-1, 3))
    stats = {}
    if lms:
        d = np.concatenate(lms)
        stats["landmark_std"] = [float(max(s, 1e-8)) for s in d.std(axis=0)]
        stats["landmark_peak"] = float(np.linalg.norm(d, axis=1).max())
    if verts:
        d = np.concatenate(verts)
        stats["vertex_std"] = [float(max(s, 1e-8)) for s in d.std(axis=0)]
        stats["vertex_peak"] = float(np.linalg.norm(d, axis=1).max())
    return stats


__all__ = ["Corpus", "SequenceBundle", "align_frames", "compute_norm_stats", "read_packed"]
