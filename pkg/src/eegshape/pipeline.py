"""End-to-end glue: EEG recordings -> encoder -> representations -> GAN, plus persistence.

These are the steps the command line drives; they are also convenient for
scripts that want the whole pipeline without going through files.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import gan
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .eeg import CLASSES, ChannelStats, EEGRecording, prepare_dataset
from .errors import CheckpointError, DataError
from .stimuli import canonical_shapes


# --------------------------------------------------------------------------
# Encoder

@dataclass
class TrainedEncoder:
    params: dict[str, np.ndarray]
    stats: ChannelStats
    split_seed: int
    seed: int


def save_encoder(path, model: TrainedEncoder) -> Path:
    tensors = dict(model.params)
    tensors["norm.mean"] = model.stats.mean
    tensors["norm.std"] = model.stats.std
    return save_checkpoint(path, Checkpoint("encoder", model.seed, tensors, {"split_seed": str(model.split_seed)}))


def load_encoder(path) -> TrainedEncoder:
    ck = load_checkpoint(path, module="encoder")
    t = dict(ck.tensors)
    try:
        stats = ChannelStats(t.pop("norm.mean"), t.pop("norm.std"))
        split_seed = int(ck.meta["split_seed"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: encoder checkpoint lacks normalization or split seed") from exc
    return TrainedEncoder(t, stats, split_seed, ck.seed)


def fit_encoder(recordings: list[EEGRecording], config: enc.EncoderConfig, split_seed: int | None = None):
    """Prepare the dataset and train. Returns ``(TrainedEncoder, split, history)``."""
    split_seed = config.seed if split_seed is None else split_seed
    split, stats = prepare_dataset(recordings, seed=split_seed)
    params, history = enc.train_encoder(split, config)
    return TrainedEncoder(params, stats, split_seed, config.seed), split, history


def encoded_split(recordings: list[EEGRecording], model: TrainedEncoder):
    """Rebuild the encoder's split and return ``(train_reprs, train_labels, test_reprs, test_labels)``.

    Labels are class indices. The recomputed normalization must match the
    one stored with the encoder, otherwise the data differ from training.
    """
    split, stats = prepare_dataset(recordings, seed=model.split_seed)
    if not (np.allclose(stats.mean, model.stats.mean, rtol=1e-5, atol=1e-6)
            and np.allclose(stats.std, model.stats.std, rtol=1e-5, atol=1e-6)):
        raise DataError("data do not match the encoder checkpoint (normalization statistics differ)")
    r_tr, l_tr = enc.extract_representations(split.train, model.params)
    r_te, l_te = enc.extract_representations(split.test, model.params)
    return r_tr, l_tr.argmax(axis=1), r_te, l_te.argmax(axis=1)


def per_class_pool(labels, n_per_class: int | None, seed: int) -> np.ndarray:
    """Indices of up to ``n_per_class`` items per class, drawn without replacement, sorted."""
    labels = np.asarray(labels)
    if n_per_class is None:
        return np.arange(len(labels))
    rng = np.random.default_rng([seed, 40])
    picks = []
    for k, name in enumerate(CLASSES):
        pool = np.flatnonzero(labels == k)
        if len(pool) == 0:
            raise DataError(f"no training representations of class {name!r}")
        picks.append(rng.choice(pool, size=min(n_per_class, len(pool)), replace=False))
    return np.sort(np.concatenate(picks))


# --------------------------------------------------------------------------
# GAN

def save_gan(path, gen, disc, config: gan.GanTrainConfig, extra_meta: dict | None = None) -> Path:
    tensors = {f"generator.{k}": v for k, v in gen.items()}
    tensors.update({f"discriminator.{k}": v for k, v in disc.items()})
    meta = {"mode": config.mode, "lambda_align": repr(config.lambda_align), "epochs": str(config.epochs),
            "batch_size": str(config.batch_size), **(extra_meta or {})}
    return save_checkpoint(path, Checkpoint("gan", config.seed, tensors, meta))


def load_gan(path):
    """Returns ``(generator, discriminator, config)``."""
    ck = load_checkpoint(path, module="gan")
    gen = {k[len("generator."):]: v for k, v in ck.tensors.items() if k.startswith("generator.")}
    disc = {k[len("discriminator."):]: v for k, v in ck.tensors.items() if k.startswith("discriminator.")}
    want_g, want_d = gan.init_generator(0), gan.init_discriminator(0)
    for got, want, what in ((gen, want_g, "generator"), (disc, want_d, "discriminator")):
        if set(got) != set(want) or any(got[k].shape != want[k].shape for k in want):
            raise CheckpointError(f"{path}: {what} tensors do not match the network layout")
    try:
        config = gan.GanTrainConfig(mode=ck.meta["mode"], lambda_align=float(ck.meta["lambda_align"]),
                                    epochs=int(ck.meta["epochs"]), batch_size=int(ck.meta["batch_size"]),
                                    seed=ck.seed)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid GAN metadata") from exc
    return gen, disc, config


def fit_gan(train_reprs, train_labels, config: gan.GanTrainConfig, pool_per_class: int | None = None,
            callback=None):
    """Train on (a per-class subsample of) the training representations."""
    idx = per_class_pool(train_labels, pool_per_class, config.seed)
    return gan.train_gan(train_reprs[idx], train_labels[idx], canonical_shapes(), config, callback=callback)


# --------------------------------------------------------------------------
# History files

ENCODER_HISTORY = ("epoch", "train_loss", "train_acc", "test_acc")


def write_history(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in columns])


def read_history(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
