"""Inference: audio + affect to landmark motion (ATS) to a dense mesh sequence (STM)."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..ats import ATSConfig, Denoiser, ddim_sample, make_schedule
from ..audio import FrameAlignedFeatures, frame_features, load_audio
from ..errors import ConfigError, DataError, FormatError
from ..mesh import LandmarkSpec, Mesh, cached_operators, extract_landmarks, load_mesh
from ..stm import STM, MeshTensors, STMConfig, stm_forward
from .checkpoint import check_compatible, load_checkpoint
from .export import export_sequence

logger = logging.getLogger(__name__)

MOTION_FORMAT = "freetalk-motion/1"


@dataclass
class LoadedATS:
    model: Denoiser
    ckpt: dict

    @property
    def emotions(self) -> list[str]:
        return self.ckpt["vocabulary"]["emotions"]

    @property
    def max_intensity(self) -> int:
        return self.ckpt["vocabulary"]["max_intensity"]


def load_ats(path) -> LoadedATS:
    ckpt = load_checkpoint(path, "ats")
    model = Denoiser(ATSConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["state_dict"])
    return LoadedATS(model.eval(), ckpt)


def load_stm(path) -> tuple[STM, dict]:
    ckpt = load_checkpoint(path, "stm")
    model = STM(STMConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["state_dict"])
    return model.eval(), ckpt


def affect_ids(ats: LoadedATS, emotion: str, intensity: int) -> tuple[int, int]:
    if emotion not in ats.emotions:
        raise ConfigError(f"emotion {emotion!r} not in the checkpoint vocabulary {ats.emotions}")
    if not 1 <= intensity <= ats.max_intensity:
        raise ConfigError(f"intensity {intensity} outside 1..{ats.max_intensity}")
    return ats.emotions.index(emotion), intensity


def sample_landmarks(ats: LoadedATS, features: FrameAlignedFeatures, emotion: str, intensity: int,
                     seed: int = 0, ddim_steps: int | None = None) -> np.ndarray:
    """DDIM-sample a ``(T, N, 3)`` landmark displacement trajectory in mesh units."""
    e, i = affect_ids(ats, emotion, intensity)
    cfg = ats.model.config
    audio_meta = ats.ckpt["audio"]
    h = (np.asarray(features.matrix) - np.asarray(audio_meta["mean"])) / np.asarray(audio_meta["std"])
    T = h.shape[0]
    if T > cfg.max_frames:
        raise DataError(f"{T} frames exceed the model's max_frames={cfg.max_frames}")
    audio = torch.as_tensor(h[None], dtype=torch.float32)
    emo, inten = torch.tensor([e]), torch.tensor([i])
    sched_meta = ats.ckpt["schedule"]
    schedule = make_schedule(sched_meta["n_steps"], sched_meta["beta_start"], sched_meta["beta_end"])
    steps = ddim_steps or ats.ckpt.get("sampler", {}).get("ddim_steps", min(100, schedule.n_steps))
    gen = torch.Generator().manual_seed(seed)

    def denoiser(x, step):
        return ats.model(x, step, audio, emo, inten)

    x0 = ddim_sample(denoiser, (1, T, cfg.motion_dim), schedule, steps, generator=gen)
    std = np.asarray(ats.ckpt["norm_stats"]["landmark_std"], dtype=np.float64)
    return x0[0].double().numpy().reshape(T, cfg.n_landmarks, 3) * std


def save_motion(path, displacements, template_landmarks, fps: float) -> Path:
    """Landmark trajectory file: the ATS/STM boundary. Floats round-trip exactly."""
    obj = {"format": MOTION_FORMAT, "fps": fps, "n_frames": int(len(displacements)),
           "n_landmarks": int(np.shape(template_landmarks)[0]),
           "template": np.asarray(template_landmarks, dtype=np.float64).tolist(),
           "displacements": np.asarray(displacements, dtype=np.float64).tolist()}
    path = Path(path)
    path.write_text(json.dumps(obj))
    return path


def load_motion(path) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns ``(displacements (T, N, 3), template (N, 3), fps)``."""
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"motion file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if obj.get("format") != MOTION_FORMAT:
        raise FormatError(f"{path}: not a motion file")
    d = np.asarray(obj["displacements"], dtype=np.float64)
    tpl = np.asarray(obj["template"], dtype=np.float64)
    if d.ndim != 3 or d.shape[1:] != tpl.shape or tpl.shape[1] != 3:
        raise FormatError(f"{path}: inconsistent motion shapes {d.shape} / {tpl.shape}")
    return d, tpl, float(obj["fps"])


def mesh_tensors(model: STM, mesh: Mesh) -> MeshTensors:
    k = min(model.config.spectral_k, mesh.n_vertices - 2)
    return MeshTensors.from_mesh(mesh, cached_operators(mesh, k, model.config.gradient_features))


def transfer(model: STM, mesh: Mesh, displacements, batch_frames: int = 32, return_attention: bool = False):
    """Run STM over a landmark displacement trajectory on an arbitrary mesh."""
    mt = mesh_tensors(model, mesh)
    return stm_forward(model, mesh, mt, displacements, batch_frames, return_attention)


def dump_attention(alpha, out_dir) -> Path:
    """Per-frame ``n x N`` float32 little-endian matrices plus a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    alpha = np.asarray(alpha, dtype="<f4")
    for t, a in enumerate(alpha):
        (out_dir / f"frame_{t:05d}.bin").write_bytes(np.ascontiguousarray(a).tobytes())
    meta = {"n_frames": int(alpha.shape[0]), "n_vertices": int(alpha.shape[1]),
            "n_landmarks": int(alpha.shape[2]), "dtype": "float32", "byte_order": "little",
            "layout": "row-major, rows = vertices", "pattern": "frame_{t:05d}.bin"}
    (out_dir / "attention.json").write_text(json.dumps(meta, indent=1))
    return out_dir


def animate(audio_path, emotion: str, intensity: int, mesh_path, landmark_spec, ats_checkpoint,
            stm_checkpoint, out_dir, fmt: str = "obj", seed: int = 0, ddim_steps: int | None = None,
            landmarks=None, attention: bool = False, batch_frames: int = 32) -> dict:
    """End-to-end animation. ``landmarks`` (a motion file) bypasses ATS.

    Writes the mesh sequence, ``landmarks.json`` and optionally ``attention/``; returns a summary.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mesh = load_mesh(mesh_path)
    spec = LandmarkSpec.load(landmark_spec)
    spec.validate(mesh)
    stm, stm_ckpt = load_stm(stm_checkpoint)
    template_lm = extract_landmarks(mesh, spec)

    if landmarks is not None:
        check_compatible(None, stm_ckpt, spec.n_landmarks)
        disp, _, fps = load_motion(landmarks)
        if disp.shape[1] != spec.n_landmarks:
            raise ConfigError(f"motion has {disp.shape[1]} landmarks, spec has {spec.n_landmarks}")
    else:
        if ats_checkpoint is None:
            raise ConfigError("animate needs an ATS checkpoint or a landmark motion file")
        ats = load_ats(ats_checkpoint)
        check_compatible(ats.ckpt, stm_ckpt, spec.n_landmarks)
        affect_ids(ats, emotion, intensity)
        fps = float(ats.ckpt.get("fps", 30.0))
        wave = load_audio(audio_path)
        feats = frame_features(wave, fps, ats.ckpt["audio"]["config"])
        disp = sample_landmarks(ats, feats, emotion, intensity, seed, ddim_steps)
    save_motion(out_dir / "landmarks.json", disp, template_lm, fps)

    res = transfer(stm, mesh, disp, batch_frames, return_attention=attention)
    verts = res[0]
    files = export_sequence(verts, mesh.faces, out_dir / "frames", fmt)
    summary = {"n_frames": int(len(verts)), "fps": fps, "n_vertices": mesh.n_vertices,
               "format": fmt, "files": len(files), "seed": seed}
    if attention and res[2] is not None:
        dump_attention(res[2], out_dir / "attention")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
