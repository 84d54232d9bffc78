"""Deterministic synthetic talking-face corpus.

Each sequence pairs a WAV clip with landmark and dense-mesh trajectories:

* two smooth envelopes amplitude-modulate a low and a high sine sweep; the same
  envelopes open the jaw and spread the lips,
* every emotion adds a fixed landmark offset field scaled by intensity / max intensity,
* the dense deformation is a fixed normalized-Gaussian interpolation of the landmark field.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..audio import Waveform, n_frames_for, save_audio
from ..errors import ConfigError
from ..mesh import Anchor, LandmarkSpec, Mesh, save_mesh, subdivide
from .export import write_packed

logger = logging.getLogger(__name__)

DEFAULT_EMOTIONS = ("neutral", "happy", "sad", "angry", "surprised")
FORMAT_TAG = "freetalk-bundles/1"


@dataclass
class SyntheticDatasetSpec:
    n_identities: int = 2
    sequences_per_identity: int = 6
    duration_range: tuple[float, float] = (1.5, 2.5)
    fps: float = 30.0
    sample_rate: int = 16000
    emotions: list[str] = field(default_factory=lambda: list(DEFAULT_EMOTIONS))
    max_intensity: int = 3
    emotion_amplitude: float = 1.0
    articulation_amplitude: float = 1.0
    identity_variation: float = 0.1
    mesh_level: int = 4
    front_cut: float = -0.2
    remesh_levels: list[int] = field(default_factory=lambda: [1])
    val_per_identity: int = 1
    test_per_identity: int = 1
    # each audio clip is reused with this many distinct emotions (>= 1)
    emotions_per_clip: int = 1
    kernel_width: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.duration_range = tuple(self.duration_range)
        if self.n_identities < 1 or self.sequences_per_identity < 1:
            raise ConfigError("need at least one identity and one sequence")
        if not 0 < self.duration_range[0] <= self.duration_range[1]:
            raise ConfigError("invalid duration range")
        if "neutral" not in self.emotions:
            raise ConfigError("the emotion vocabulary must contain 'neutral'")
        if self.max_intensity < 1:
            raise ConfigError("max_intensity must be >= 1")
        if self.val_per_identity + self.test_per_identity >= self.sequences_per_identity:
            raise ConfigError("splits leave no training sequences")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticDatasetSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synthetic-data keys {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["duration_range"] = list(self.duration_range)
        return d


# ---------------------------------------------------------------- geometry

def icosphere(level: int) -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    mesh = Mesh(v / np.linalg.norm(v, axis=1, keepdims=True), f)
    for _ in range(level):
        mesh = subdivide(mesh)
        mesh = Mesh(mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True), mesh.faces)
    return mesh


def face_patch(level: int, front_cut: float, axes) -> Mesh:
    """Front part (z > front_cut on the unit sphere) of an ellipsoid facing +z."""
    sphere = icosphere(level)
    keep = sphere.vertices[:, 2] > front_cut
    fmask = keep[sphere.faces].all(axis=1)
    remap = -np.ones(sphere.n_vertices, dtype=np.int64)
    remap[keep] = np.arange(keep.sum())
    return Mesh(sphere.vertices[keep] * np.asarray(axes), remap[sphere.faces[fmask]])


def _ellipse(cx, cy, rx, ry, n, start=np.pi):
    th = start + np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.stack([cx + rx * np.cos(th), cy + ry * np.sin(th)], axis=1)


def landmark_layout_2d() -> np.ndarray:
    """68 landmark positions in the face plane (x right, y up), standard ordering."""
    th = np.linspace(np.pi - 0.35, 2 * np.pi + 0.35, 17)
    jaw = np.stack([0.68 * np.cos(th), 0.1 + 0.95 * np.sin(th)], 1)
    brow_r = np.stack([np.linspace(-0.58, -0.16, 5), 0.47 + 0.05 * np.sin(np.linspace(0, np.pi, 5))], 1)
    brow_l = np.stack([np.linspace(0.16, 0.58, 5), 0.47 + 0.05 * np.sin(np.linspace(0, np.pi, 5))], 1)
    bridge = np.stack([np.zeros(4), np.linspace(0.3, -0.02, 4)], 1)
    nostrils = np.stack([np.linspace(-0.16, 0.16, 5), [-0.13, -0.16, -0.18, -0.16, -0.13]], 1)
    # clockwise when viewed, starting at the outer corner, as in the usual convention
    eye_r = _ellipse(-0.33, 0.25, 0.12, 0.05, 6, start=np.pi)[[0, 5, 4, 3, 2, 1]]
    eye_l = _ellipse(0.33, 0.25, 0.12, 0.05, 6, start=np.pi)[[0, 5, 4, 3, 2, 1]]
    lips_out = _ellipse(0.0, -0.47, 0.3, 0.13, 12, start=np.pi)[[0, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1]]
    lips_in = _ellipse(0.0, -0.47, 0.17, 0.045, 8, start=np.pi)[[0, 7, 6, 5, 4, 3, 2, 1]]
    pts = np.concatenate([jaw, brow_r, brow_l, bridge, nostrils, eye_r, eye_l, lips_out, lips_in])
    assert pts.shape == (68, 2)
    return pts


def place_landmarks(mesh: Mesh, layout: np.ndarray) -> np.ndarray:
    """Nearest front-facing vertex for every 2D layout point (distinct vertices)."""
    v = mesh.vertices
    front = np.flatnonzero(v[:, 2] > 0)
    used: set[int] = set()
    out = []
    for p in layout:
        d = np.linalg.norm(v[front, :2] - p, axis=1)
        for k in np.argsort(d):
            if int(front[k]) not in used:
                used.add(int(front[k]))
                out.append(int(front[k]))
                break
    return np.asarray(out)


def region_masks(mesh: Mesh) -> dict[str, np.ndarray]:
    x, y, z = mesh.vertices.T
    front = z > 0
    return {
        "mouth": np.flatnonzero(front & (np.abs(x) < 0.42) & (y < -0.25) & (y > -0.72)),
        "lips": np.flatnonzero(front & ((x / 0.34) ** 2 + ((y + 0.47) / 0.17) ** 2 < 1.0)),
        "upper_face": np.flatnonzero(front & (y > 0.12)),
    }


def motion_bases(layout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jaw-opening and lip-spreading landmark fields (N x 3) at unit envelope."""
    x, y = layout.T
    n = len(layout)
    opening = np.zeros((n, 3))
    spread = np.zeros((n, 3))
    below = y < -0.47
    # jaw drops more towards the chin
    jaw = np.arange(17)
    opening[jaw, 1] = -0.07 * np.clip((0.2 - y[jaw]) / 1.05, 0, 1) ** 1.5
    lips = np.arange(48, 68)
    opening[lips, 1] = np.where(below[lips], -0.08, 0.012) * np.exp(-(x[lips] / 0.35) ** 2)
    opening[lips, 2] = np.where(below[lips], -0.01, 0.005)
    spread[lips, 0] = 0.045 * x[lips] / 0.3
    spread[lips, 1] = 0.006 * (np.abs(x[lips]) / 0.3)
    return opening, spread


def emotion_fields(layout: np.ndarray, emotions, amplitude: float = 1.0) -> dict[str, np.ndarray]:
    """Static per-emotion landmark offset fields at full intensity."""
    x, y = layout.T
    n = len(layout)
    brows = np.arange(17, 27)
    eyes_top = np.array([37, 38, 43, 44])
    corners = np.array([48, 54, 60, 64])
    fields = {}
    for k, emo in enumerate(emotions):
        f = np.zeros((n, 3))
        if emo == "neutral":
            pass
        elif emo == "happy":
            f[brows, 1] = 0.03
            f[corners, 1] = 0.03
            f[corners, 0] = 0.015 * np.sign(x[corners])
        elif emo == "sad":
            f[brows, 1] = -0.03
            f[brows, 1] += 0.02 * (np.abs(x[brows]) < 0.3)
            f[corners, 1] = -0.03
        elif emo == "angry":
            f[brows, 1] = -0.035
            f[brows, 0] = -0.02 * np.sign(x[brows])
            f[np.arange(48, 68), 2] = -0.01
        elif emo == "surprised":
            f[brows, 1] = 0.05
            f[eyes_top, 1] = 0.015
            f[np.arange(5, 12), 1] = -0.02
        else:
            # deterministic smooth field for custom vocabulary entries
            rng = np.random.default_rng(1000 + k)
            f[brows, 1] = rng.uniform(-0.04, 0.04)
            f[corners, 1] = rng.uniform(-0.03, 0.03)
        fields[emo] = amplitude * f
    return fields


def interpolation_weights(points: np.ndarray, centres: np.ndarray, width: float) -> np.ndarray:
    """Normalized Gaussian weights with a floor so far-away points stay still."""
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
    k = np.exp(-d2 / (2 * width ** 2))
    floor = np.exp(-(2.5 * width) ** 2 / (2 * width ** 2))
    return k / (floor + k.sum(axis=1, keepdims=True))


def smooth_envelope(rng, duration: float, rate: float, knot_hz: float = 4.0) -> callable:
    """Random smooth envelope in [0, 1] with occasional silences, as a function of time."""
    from scipy.interpolate import CubicSpline

    n = max(4, int(np.ceil(duration * knot_hz)) + 3)
    knots_t = np.linspace(-0.5 / knot_hz, duration + 0.5 / knot_hz, n)
    vals = rng.uniform(-0.3, 1.0, n)
    spline = CubicSpline(knots_t, vals)
    return lambda t: np.clip(spline(t), 0.0, 1.0)


@dataclass
class SequenceSample:
    audio: np.ndarray
    landmark_disp: np.ndarray   # T x N x 3
    envelopes: np.ndarray       # T x 2


def synth_sequence(rng, duration, spec: SyntheticDatasetSpec, layout, emo_field, intensity,
                   identity_gain, silent=False) -> SequenceSample:
    sr = spec.sample_rate
    ts = np.arange(int(round(duration * sr))) / sr
    env_open = smooth_envelope(rng, duration, sr)
    env_spread = smooth_envelope(rng, duration, sr)
    f_lo = rng.uniform(250, 350)
    f_hi = rng.uniform(1800, 2200)
    sweep_lo = 2 * np.pi * (f_lo * ts + 150 * ts ** 2 / duration)
    sweep_hi = 2 * np.pi * (f_hi * ts + 500 * ts ** 2 / duration)
    amp = 0.0 if silent else 1.0
    audio = amp * 0.45 * (env_open(ts) * np.sin(sweep_lo) + env_spread(ts) * np.sin(sweep_hi))

    T = n_frames_for(duration, spec.fps)
    tf = np.clip((np.arange(T) + 0.5) / spec.fps, 0, duration)
    env = amp * np.stack([env_open(tf), env_spread(tf)], axis=1)
    opening, spread = motion_bases(layout)
    artic = spec.articulation_amplitude * (env[:, 0, None, None] * opening[None] + env[:, 1, None, None] * spread[None])
    artic = artic * identity_gain[None, :, None]
    emo = emo_field * (intensity / spec.max_intensity)
    disp = artic + emo[None]
    return SequenceSample(audio, disp, env)


def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def synth_data(spec: SyntheticDatasetSpec, out_dir) -> Path:
    """Generate the corpus and its ``manifest.json`` under ``out_dir``."""
    root = Path(out_dir)
    for sub in ("audio", "meshes", "landmarks", "vertices"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    layout = landmark_layout_2d()
    fields = emotion_fields(layout, spec.emotions, spec.emotion_amplitude)
    save_mesh(icosphere(3), root / "meshes" / "icosphere_642.ply")

    identities = {}
    sequences = []
    splits = {"train": [], "val": [], "test": []}
    for ident in range(spec.n_identities):
        iid = f"id{ident:02d}"
        var = spec.identity_variation
        axes = np.array([0.8, 1.0, 0.6]) * (1 + var * rng.uniform(-0.5, 0.5, 3))
        mesh = face_patch(spec.mesh_level, spec.front_cut, axes)
        anchors = place_landmarks(mesh, layout)
        lm_spec = LandmarkSpec(tuple(Anchor(vertex=int(a)) for a in anchors), region_masks(mesh))
        tpl_lm = mesh.vertices[anchors]
        weights = interpolation_weights(mesh.vertices, tpl_lm, spec.kernel_width)
        save_mesh(mesh, root / "meshes" / f"{iid}.ply")
        lm_spec.save(root / "meshes" / f"{iid}_landmarks.json")
        identities[iid] = {"template": f"meshes/{iid}.ply", "landmark_spec": f"meshes/{iid}_landmarks.json",
                           "remeshes": {}}
        remesh = mesh
        for level in range(1, max(spec.remesh_levels or [0]) + 1):
            remesh = subdivide(remesh)
            if level in spec.remesh_levels:
                name = f"meshes/{iid}_sub{level}.ply"
                save_mesh(remesh, root / name)
                identities[iid]["remeshes"][str(level)] = name
        gain = 1.0 + var * rng.uniform(-1, 1, len(layout))

        n_seq = spec.sequences_per_identity
        per_clip = max(1, spec.emotions_per_clip)
        non_neutral = [e for e in spec.emotions if e != "neutral"] or ["neutral"]
        clip = None
        for s in range(n_seq):
            sid = f"{iid}_s{s:03d}"
            if s % per_clip == 0:
                clip_rng_seed = int(rng.integers(2 ** 31))
                duration = float(rng.uniform(*spec.duration_range))
                clip = (clip_rng_seed, duration)
            emotion = spec.emotions[s % len(spec.emotions)] if per_clip == 1 else \
                non_neutral[(s // per_clip * per_clip + s % per_clip) % len(non_neutral)]
            intensity = 1 if emotion == "neutral" else int(rng.integers(1, spec.max_intensity + 1))
            seq = synth_sequence(np.random.default_rng(clip[0]), clip[1], spec, layout, fields[emotion],
                                 intensity, gain)
            wave = Waveform(seq.audio, spec.sample_rate)
            save_audio(root / "audio" / f"{sid}.wav", wave)
            lm_pos = tpl_lm[None] + seq.landmark_disp
            np.save(root / "landmarks" / f"{sid}.npy", lm_pos)
            dense = mesh.vertices[None] + np.einsum("nj,tjc->tnc", weights, seq.landmark_disp)
            write_packed(root / "vertices" / f"{sid}.ftk", dense, mesh.faces)
            split = ("test" if s >= n_seq - spec.test_per_identity else
                     "val" if s >= n_seq - spec.test_per_identity - spec.val_per_identity else "train")
            splits[split].append(sid)
            sequences.append({
                "id": sid, "identity": iid, "audio": f"audio/{sid}.wav", "fps": spec.fps,
                "emotion": emotion, "intensity": intensity,
                "template": identities[iid]["template"], "landmark_spec": identities[iid]["landmark_spec"],
                "landmarks": f"landmarks/{sid}.npy", "vertices": f"vertices/{sid}.ftk",
                "n_frames": int(seq.landmark_disp.shape[0]),
            })

    manifest = {
        "format": FORMAT_TAG,
        "dataset_id": f"synthetic-{spec.seed}",
        "fps": spec.fps,
        "sample_rate": spec.sample_rate,
        "n_landmarks": len(layout),
        "emotions": list(spec.emotions),
        "max_intensity": spec.max_intensity,
        "identities": identities,
        "sequences": sequences,
        "splits": splits,
        "generator": {
            "spec": spec.to_json(),
            "emotion_fields": {k: v.tolist() for k, v in fields.items()},
            "kernel_width": spec.kernel_width,
        },
    }
    from .data import compute_norm_stats

    manifest["norm_stats"] = compute_norm_stats(root, manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    logger.info("wrote %d sequences to %s", len(sequences), root)
    return root
