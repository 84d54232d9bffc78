"""Versioned checkpoint archive shared by the two modules (distinct section keys)."""
from __future__ import annotations

from pathlib import Path

import torch

from ..errors import ConfigError, DataError

FORMAT_TAG = "freetalk-ckpt/1"
SECTIONS = ("ats", "stm")


def save_checkpoint(path, section: str, state_dict, config: dict, **extra) -> Path:
    """Write parameters plus the metadata needed to rebuild and check the model.

    ``extra`` carries section-specific entries: schedule, vocabulary, normalization
    statistics, audio feature settings, fingerprints. Values must be plain Python data
    so the archive loads with ``weights_only=True``.
    """
    if section not in SECTIONS:
        raise ValueError(f"section must be one of {SECTIONS}")
    payload = {
        "format": FORMAT_TAG,
        "section": section,
        "config": config,
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        **extra,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, section: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # corrupt or foreign archive
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise DataError(f"{path}: unknown checkpoint format {payload.get('format') if isinstance(payload, dict) else None!r}")
    if section is not None and payload.get("section") != section:
        raise ConfigError(f"{path}: expected a {section} checkpoint, found {payload.get('section')!r}")
    return payload


def check_compatible(ats: dict | None, stm: dict, n_landmarks: int | None = None) -> None:
    """Landmark count and vocabulary must agree across checkpoints and the landmark spec."""
    n_stm = stm["fingerprint"]["n_landmarks"]
    if ats is not None:
        n_ats = ats["fingerprint"]["n_landmarks"]
        if n_ats != n_stm:
            raise ConfigError(f"ATS predicts {n_ats} landmarks but STM expects {n_stm}")
    if n_landmarks is not None and n_landmarks != n_stm:
        raise ConfigError(f"landmark spec has {n_landmarks} landmarks but STM expects {n_stm}")
