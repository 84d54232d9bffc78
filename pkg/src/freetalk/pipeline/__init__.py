"""User-facing surface: datasets, training, inference, export and evaluation."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Corpus, SequenceBundle, align_frames, compute_norm_stats
from .evaluate import evaluate, sequence_report
from .export import export_sequence, read_packed, read_sequence, write_packed
from .infer import animate, load_ats, load_motion, load_stm, sample_landmarks, save_motion, transfer
from .synth import SyntheticDatasetSpec, synth_data
from .train import TrainResult, train, train_ats, train_stm

__all__ = [
    "Corpus", "SequenceBundle", "SyntheticDatasetSpec", "TrainConfig", "TrainResult", "align_frames",
    "animate", "compute_norm_stats", "evaluate", "export_sequence", "load_ats", "load_checkpoint",
    "load_motion", "load_stm", "read_packed", "read_sequence", "sample_landmarks", "save_checkpoint",
    "save_motion", "sequence_report", "synth_data", "train", "train_ats", "train_stm", "transfer",
    "write_packed",
]
