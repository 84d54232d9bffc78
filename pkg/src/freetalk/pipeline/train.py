"""Training loops for the two modules; they are trained independently."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..ats import ATSConfig, Denoiser, ats_loss, make_schedule
from ..errors import ConfigError, DataError, NumericalError
from ..metrics import ATS_WEIGHTS, STM_WEIGHTS, LossWeights, motion_loss
from ..mesh import Mesh, cached_operators
from ..stm import STM, MeshTensors, STMConfig, stm_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, write_resolved
from .data import Corpus, SequenceBundle, align_frames
from .plotting import plot_training_log

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "step", "train_loss", "train_pos", "val_loss", "lr", "seconds")


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    figure: Path
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"]


def _map(fn, items, workers: int):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _load_corpora(config: TrainConfig) -> list[Corpus]:
    if not config.data:
        raise ConfigError("no dataset roots given")
    return [Corpus(root) for root in config.data]


def _weights(config: TrainConfig, default: LossWeights) -> LossWeights:
    if config.loss_weights is None:
        return default
    return LossWeights(**{**{"vel": default.vel, "acc": default.acc}, **config.loss_weights})


def _pooled_std(arrays) -> list[float]:
    d = np.concatenate([a.reshape(-1, 3) for a in arrays])
    return [float(max(s, 1e-8)) for s in d.std(axis=0)]


def _check_finite(loss, where: str):
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss ({value}) at {where}")


class _Logger:
    def __init__(self, out_dir: Path, title: str):
        self.path = out_dir / "train_log.csv"
        self.figure = out_dir / "train_loss.png"
        self.title = title
        self.rows: list[dict] = []
        with open(self.path, "w", newline="") as fh:
            csv.DictWriter(fh, LOG_FIELDS).writeheader()

    def add(self, row: dict):
        self.rows.append(row)
        with open(self.path, "a", newline="") as fh:
            csv.DictWriter(fh, LOG_FIELDS).writerow({k: ("" if row.get(k) is None else row[k]) for k in LOG_FIELDS})

    def finish(self):
        plot_training_log(self.rows, self.figure, self.title)


def _optimizer(model, config: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)


def _step(opt, model, loss, config: TrainConfig):
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    opt.step()


def _out_dir(config: TrainConfig) -> Path:
    out = Path(config.out or f"runs/{config.module}")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ ATS

@dataclass
class _ATSItem:
    id: str
    x0: torch.Tensor      # T x D, standardized
    audio: torch.Tensor   # T x C, standardized
    emotion: int
    intensity: int


def _ats_raw(bundle: SequenceBundle, audio_cfg: dict):
    feats = bundle.features(audio_cfg).matrix
    disp = bundle.landmark_displacements()
    feats, disp = align_frames(feats, disp, name=bundle.id)
    return feats, disp


def train_ats(config: TrainConfig) -> TrainResult:
    if config.module != "ats":
        raise ConfigError("train_ats needs module 'ats'")
    out = _out_dir(config)
    write_resolved(config.to_json(), out)
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)

    corpora = _load_corpora(config)
    emotions: list[str] = []
    for c in corpora:
        emotions += [e for e in c.emotions if e not in emotions]
    if "neutral" not in emotions:
        emotions.insert(0, "neutral")
    max_intensity = max(c.max_intensity for c in corpora)
    fps_set = {float(c.manifest["fps"]) for c in corpora}
    if len(fps_set) != 1:
        raise ConfigError(f"dataset roots disagree on fps: {sorted(fps_set)}")
    fps = fps_set.pop()
    train_b = [b for c in corpora for b in c.split(config.train_split)]
    val_b = [b for c in corpora for b in c.split(config.val_split)] if config.val_split else []
    if not train_b:
        raise DataError("no training sequences")
    n_landmarks = {b.spec.n_landmarks for b in train_b + val_b}
    if len(n_landmarks) != 1:
        raise DataError(f"sequences disagree on the landmark count: {sorted(n_landmarks)}")
    n_landmarks = n_landmarks.pop()

    audio_cfg = dict(config.audio)
    train_raw = _map(lambda b: _ats_raw(b, audio_cfg), train_b, config.workers)
    val_raw = _map(lambda b: _ats_raw(b, audio_cfg), val_b, config.workers)
    if len(corpora) == 1 and "landmark_std" in corpora[0].norm_stats:
        lm_std = corpora[0].norm_stats["landmark_std"]
    else:
        lm_std = _pooled_std([d for _, d in train_raw])
    feats_all = np.concatenate([f for f, _ in train_raw])
    a_mean = feats_all.mean(axis=0)
    a_std = np.maximum(feats_all.std(axis=0), 1e-5)

    def item(b, raw):
        f, d = raw
        x0 = (d / np.asarray(lm_std)).reshape(len(d), -1)
        return _ATSItem(b.id, torch.as_tensor(x0, dtype=torch.float32),
                        torch.as_tensor((f - a_mean) / a_std, dtype=torch.float32),
                        emotions.index(b.emotion) if b.emotion in emotions else _bad_emotion(b),
                        b.intensity)

    train_items = [item(b, r) for b, r in zip(train_b, train_raw)]
    val_items = [item(b, r) for b, r in zip(val_b, val_raw)]

    model_cfg = {"n_landmarks": n_landmarks, "audio_channels": feats_all.shape[1],
                 "emotions": emotions, "max_intensity": max_intensity, **config.model}
    for key, want in (("n_landmarks", n_landmarks), ("audio_channels", feats_all.shape[1])):
        if model_cfg[key] != want:
            raise ConfigError(f"model.{key}={model_cfg[key]} but the data has {want}")
    try:
        ats_cfg = ATSConfig(**model_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad ATS model settings: {exc}") from None
    longest = max(len(it.x0) for it in train_items + val_items)
    crop = config.crop_frames
    if crop is None and longest > ats_cfg.max_frames:
        crop = ats_cfg.max_frames
    if crop is not None and crop > ats_cfg.max_frames:
        raise ConfigError(f"crop_frames={crop} exceeds max_frames={ats_cfg.max_frames}")
    diff = dict(config.diffusion)
    schedule = make_schedule(diff.get("n_steps", 1000), diff.get("beta_start", 1e-4), diff.get("beta_end", 0.02))
    model = Denoiser(ats_cfg)
    if config.init_checkpoint:
        model.load_state_dict(load_checkpoint(config.init_checkpoint, "ats")["state_dict"])
    opt = _optimizer(model, config)
    weights = _weights(config, ATS_WEIGHTS)

    def batch_of(items, offsets=None):
        T = min(len(it.x0) for it in items)
        if crop is not None:
            T = min(T, crop)
        if offsets is None:
            offsets = [0] * len(items)
        x0 = torch.stack([it.x0[o:o + T] for it, o in zip(items, offsets)])
        audio = torch.stack([it.audio[o:o + T] for it, o in zip(items, offsets)])
        emo = torch.tensor([it.emotion for it in items])
        inten = torch.tensor([it.intensity for it in items])
        return x0, audio, emo, inten

    def validate():
        if not val_items:
            return None
        model.eval()
        vgen = torch.Generator().manual_seed(config.seed + 1)
        total = 0.0
        with torch.no_grad():
            for it in val_items:
                T = min(len(it.x0), ats_cfg.max_frames)
                x0, audio, emo, inten = batch_of([it])
                total += float(ats_loss(model, x0[:, :T], audio[:, :T], emo, inten, schedule, weights, vgen))
        model.train()
        return total / len(val_items)

    log = _Logger(out, "ATS")
    best = (math.inf, None, 0)
    step = 0
    t0 = time.time()
    pos_w = LossWeights()
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(train_items), generator=gen).tolist()
        losses, pos_losses = [], []
        for s in range(0, len(order), config.batch_size):
            items = [train_items[i] for i in order[s:s + config.batch_size]]
            T = min(len(it.x0) for it in items)
            offsets = None
            if crop is not None and crop < T:
                offsets = [int(torch.randint(0, len(it.x0) - crop + 1, (1,), generator=gen)) for it in items]
            x0, audio, emo, inten = batch_of(items, offsets)
            loss, x0_hat = ats_loss(model, x0, audio, emo, inten, schedule, weights, gen, return_prediction=True)
            _check_finite(loss, f"epoch {epoch}, step {step + 1}, sequences {[it.id for it in items]}")
            _step(opt, model, loss, config)
            with torch.no_grad():
                B, T, D = x0.shape
                pos = motion_loss(x0.reshape(B, T, D // 3, 3), x0_hat.reshape(B, T, D // 3, 3), pos_w)
            losses.append(float(loss.detach()))
            pos_losses.append(float(pos))
            step += 1
            if config.max_steps and step >= config.max_steps:
                break
        val = validate()
        row = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)),
               "train_pos": float(np.mean(pos_losses)), "val_loss": val, "lr": config.lr,
               "seconds": round(time.time() - t0, 3)}
        log.add(row)
        if epoch % config.log_every == 0:
            logger.info("ats epoch %d step %d loss %.5f val %s", epoch, step, row["train_loss"], val)
        score = val if val is not None else row["train_loss"]
        if score <= best[0]:
            best = (score, {k: v.detach().clone() for k, v in model.state_dict().items()}, epoch)
        if config.max_steps and step >= config.max_steps:
            break
    log.finish()
    ckpt = save_checkpoint(
        out / "ats.pt", "ats", best[1], ats_cfg.to_json(),
        schedule=schedule.to_json(),
        vocabulary={"emotions": emotions, "max_intensity": max_intensity},
        norm_stats={"landmark_std": list(map(float, lm_std))},
        audio={"config": audio_cfg, "mean": a_mean.tolist(), "std": a_std.tolist()},
        fingerprint={"n_landmarks": n_landmarks, "motion_dim": ats_cfg.motion_dim,
                     "audio_channels": ats_cfg.audio_channels},
        sampler={"ddim_steps": int(diff.get("ddim_steps", min(100, schedule.n_steps)))},
        fps=fps, best_epoch=best[2], seed=config.seed,
    )
    return TrainResult(ckpt, log.path, log.figure, log.rows, best[2])


def _bad_emotion(bundle):
    raise DataError(f"sequence {bundle.id}: emotion {bundle.emotion!r} not in the vocabulary")


# ------------------------------------------------------------------ STM

@dataclass
class _STMSeq:
    id: str
    mesh_key: str
    dl: torch.Tensor   # T x N x 3, mesh units
    dv: torch.Tensor   # T x n x 3, mesh units


def _stm_raw(bundle: SequenceBundle):
    dl = bundle.landmark_displacements()
    dv = bundle.vertex_displacements()
    return align_frames(dl, dv, name=bundle.id)


def train_stm(config: TrainConfig) -> TrainResult:
    if config.module != "stm":
        raise ConfigError("train_stm needs module 'stm'")
    out = _out_dir(config)
    write_resolved(config.to_json(), out)
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)

    corpora = _load_corpora(config)
    train_b = [b for c in corpora for b in c.split(config.train_split)]
    val_b = [b for c in corpora for b in c.split(config.val_split)] if config.val_split else []
    if not train_b:
        raise DataError("no training sequences")
    for b in train_b + val_b:
        if b.vertices is None:
            raise DataError(f"sequence {b.id} has no dense frames; STM needs vertex supervision")
    n_landmarks = {b.spec.n_landmarks for b in train_b + val_b}
    if len(n_landmarks) != 1:
        raise DataError(f"sequences disagree on the landmark count: {sorted(n_landmarks)}")
    n_landmarks = n_landmarks.pop()

    model_cfg = {"n_landmarks": n_landmarks, **config.model}
    if model_cfg["n_landmarks"] != n_landmarks:
        raise ConfigError(f"model.n_landmarks={model_cfg['n_landmarks']} but the data has {n_landmarks}")
    train_raw = _map(_stm_raw, train_b, config.workers)
    val_raw = _map(_stm_raw, val_b, config.workers)
    if "displacement_scale" not in model_cfg:
        model_cfg["displacement_scale"] = float(np.mean(_pooled_std([d for d, _ in train_raw])))
    try:
        stm_cfg = STMConfig(**model_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad STM model settings: {exc}") from None

    # surface operators are cached on disk (FREETALK_CACHE) and shared per template
    meshes: dict[str, MeshTensors] = {}
    for b in train_b + val_b:
        key = str(b.path(b.template))
        if key not in meshes:
            mesh: Mesh = b.template_mesh
            k = min(stm_cfg.spectral_k, mesh.n_vertices - 2)
            ops = cached_operators(mesh, k, stm_cfg.gradient_features)
            meshes[key] = MeshTensors.from_mesh(mesh, ops)

    def seq(b, raw):
        dl, dv = raw
        return _STMSeq(b.id, str(b.path(b.template)), torch.as_tensor(dl, dtype=torch.float32),
                       torch.as_tensor(dv, dtype=torch.float32))

    train_seqs = [seq(b, r) for b, r in zip(train_b, train_raw)]
    val_seqs = [seq(b, r) for b, r in zip(val_b, val_raw)]
    window = config.crop_frames or config.batch_size
    model = STM(stm_cfg)
    if config.init_checkpoint:
        model.load_state_dict(load_checkpoint(config.init_checkpoint, "stm")["state_dict"])
    opt = _optimizer(model, config)
    weights = _weights(config, STM_WEIGHTS)

    def windows(seqs):
        out_w = []
        for i, s in enumerate(seqs):
            T = len(s.dl)
            out_w += [(i, a) for a in range(0, T, window)]
        return out_w

    def validate():
        if not val_seqs:
            return None
        model.eval()
        num = den = 0.0
        with torch.no_grad():
            for i, a in windows(val_seqs):
                s = val_seqs[i]
                n_fr = min(window, len(s.dl) - a)
                num += float(stm_loss(model, meshes[s.mesh_key], s.dl[a:a + window], s.dv[a:a + window],
                                      weights)) * n_fr
                den += n_fr
        model.train()
        return num / den

    log = _Logger(out, "STM")
    best = (math.inf, None, 0)
    step = 0
    t0 = time.time()
    all_windows = windows(train_seqs)
    for epoch in range(1, config.epochs + 1):
        model.train()
        losses, pos_losses = [], []
        for w in torch.randperm(len(all_windows), generator=gen).tolist():
            i, a = all_windows[w]
            s = train_seqs[i]
            mt = meshes[s.mesh_key]
            dl, dv = s.dl[a:a + window], s.dv[a:a + window]
            pred = model(mt, dl)
            loss = motion_loss(dv, pred, weights)
            _check_finite(loss, f"epoch {epoch}, step {step + 1}, sequence {s.id} frame {a}")
            _step(opt, model, loss, config)
            losses.append(float(loss.detach()))
            pos_losses.append(float(motion_loss(dv, pred.detach(), LossWeights())))
            step += 1
            if config.max_steps and step >= config.max_steps:
                break
        val = validate()
        row = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)),
               "train_pos": float(np.mean(pos_losses)), "val_loss": val, "lr": config.lr,
               "seconds": round(time.time() - t0, 3)}
        log.add(row)
        if epoch % config.log_every == 0:
            logger.info("stm epoch %d step %d loss %.3e val %s", epoch, step, row["train_loss"], val)
        score = val if val is not None else row["train_loss"]
        if score <= best[0]:
            best = (score, {k: v.detach().clone() for k, v in model.state_dict().items()}, epoch)
        if config.max_steps and step >= config.max_steps:
            break
    log.finish()
    ckpt = save_checkpoint(
        out / "stm.pt", "stm", best[1], stm_cfg.to_json(),
        fingerprint={"n_landmarks": n_landmarks, "fused_width": stm_cfg.fused_width},
        best_epoch=best[2], seed=config.seed,
    )
    return TrainResult(ckpt, log.path, log.figure, log.rows, best[2])


def train(config: TrainConfig) -> TrainResult:
    return train_ats(config) if config.module == "ats" else train_stm(config)
