"""Two-phase training: the frame scorer alone on per-frame labels, then the
attention nets and classifier jointly on video-level labels.

Early stopping watches validation loss with a fixed patience; the returned
model carries the best-validation parameters. Both phases log one record per
epoch (epoch, train_loss, val_loss, val_acc) to an append-only text file.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import softmax


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the epoch and offending value."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float

    def line(self):
        return f"{self.epoch},{self.train_loss!r},{self.val_loss!r},{self.val_acc!r}"


@dataclass
class VideoSample:
    """One extracted video ready for training/eval."""

    source_id: str
    label: int                 # 1 fake, 0 real
    values: np.ndarray         # (T, N, C) float32 map
    s_p: np.ndarray            # (N,) binary prior
    t_f: np.ndarray = None     # (T,) frame scores, when the scorer is in play


def should_stop(epoch, best_epoch, patience):
    """True once `patience` epochs passed without a validation improvement."""
    return epoch - best_epoch >= patience


class EpochLogger:
    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("epoch,train_loss,val_loss,val_acc\n")

    def append(self, rec):
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(rec.line() + "\n")


def _snapshot(params_dict, running_list):
    return ([(t, t.data.copy()) for t in params_dict.values()],
            [(rs, rs.mean.copy(), rs.var.copy()) for rs in running_list])


def _restore(snap):
    params, running = snap
    for tensor, data in params:
        tensor.data = data.copy()
    for rs, mean, var in running:
        rs.mean = mean.copy()
        rs.var = var.copy()


def _zero_grads(params):
    for t in params.values():
        t.zero_grad()


def _collect_grads(params):
    return {name: t.grad for name, t in params.items() if t.grad is not None}


# ---------------------------------------------------------------------------
# phase 1: frame scorer


def train_frame_scorer(scorer, train_x, train_y, val_x, val_y, lr, weight_decay,
                       max_epochs, patience, batch_size=32, seed=0, log_path=None):
    """Binary per-frame training of the scorer. Returns the epoch records."""
    rng = np.random.default_rng(seed)
    params = scorer.params
    state = ad.AdamState(lr=lr, weight_decay=weight_decay)
    logger = EpochLogger(log_path)
    best = (math.inf, 0, None)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(train_x))
        losses = []
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            _zero_grads(params)
            logits = scorer.forward(ad.Tensor(train_x[idx]), train=True)
            loss = ad.sigmoid_cross_entropy(logits, train_y[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, float(loss.data))
            loss.backward()
            ad.adam_step(params, _collect_grads(params), state)
            losses.append(float(loss.data))
        val_scores = scorer.score_frames(val_x)
        p = np.clip(val_scores.astype(np.float64), 1e-7, 1 - 1e-7)
        val_loss = float(-(val_y * np.log(p) + (1 - val_y) * np.log(1 - p)).mean())
        val_acc = float(((val_scores > 0.5).astype(int) == val_y).mean())
        logger.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, val_acc))
        if val_loss < best[0]:
            best = (val_loss, epoch, _snapshot(params, list(scorer.running.values())))
        if should_stop(epoch, best[1], patience):
            break
    if best[2] is not None:
        _restore(best[2])
    return logger.records


# ---------------------------------------------------------------------------
# phase 2: joint training


def _stack_batch(samples, idx):
    maps = np.stack([samples[i].values for i in idx])
    s_p = np.stack([samples[i].s_p for i in idx])
    labels = np.array([samples[i].label for i in idx], dtype=np.int64)
    if all(samples[i].t_f is not None for i in idx):
        t_f = np.stack([samples[i].t_f for i in idx])
    else:
        t_f = None
    return maps, s_p, t_f, labels


def eval_loss_acc(model, samples, flags, batch_size=8):
    """Eval-mode mean loss and accuracy over a sample list."""
    losses = []
    correct = 0
    for lo in range(0, len(samples), batch_size):
        idx = range(lo, min(lo + batch_size, len(samples)))
        maps, s_p, t_f, labels = _stack_batch(samples, list(idx))
        logits = model.batch_logits(maps, s_p, t_f, flags, train=False)
        loss = ad.softmax_cross_entropy(logits, labels)
        losses.append(float(loss.data) * len(labels))
        probs = softmax(logits.data)[:, 1]
        correct += int(((probs > 0.5).astype(int) == labels).sum())
    return sum(losses) / len(samples), correct / len(samples)


def train_joint(model, train_samples, val_samples, flags, lr, weight_decay,
                max_epochs, patience, batch_size=8, seed=0, log_path=None):
    """Jointly train the active attention nets and the classifier.

    The frame scorer is frozen (its scores arrive precomputed in t_f). Keeps
    and restores the best-validation snapshot; stops early after `patience`
    epochs without improvement.
    """
    rng = np.random.default_rng(seed)
    params = model.named_params(parts=model.trainable_parts(flags))
    running = []
    for cname in model.trainable_parts(flags):
        running.extend(model.components()[cname].running.values())
    state = ad.AdamState(lr=lr, weight_decay=weight_decay)
    logger = EpochLogger(log_path)
    best = (math.inf, 0, None)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(train_samples))
        losses = []
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size].tolist()
            maps, s_p, t_f, labels = _stack_batch(train_samples, idx)
            _zero_grads(params)
            logits = model.batch_logits(maps, s_p, t_f, flags, train=True)
            loss = ad.softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, float(loss.data))
            loss.backward()
            ad.adam_step(params, _collect_grads(params), state)
            losses.append(float(loss.data) * len(labels))
        val_loss, val_acc = eval_loss_acc(model, val_samples, flags, batch_size)
        logger.append(EpochRecord(epoch, sum(losses) / len(train_samples), val_loss, val_acc))
        if val_loss < best[0]:
            best = (val_loss, epoch, _snapshot(params, running))
        if should_stop(epoch, best[1], patience):
            break
    if best[2] is not None:
        _restore(best[2])
    return logger.records


def evaluate(model, samples, flags, batch_size=8):
    """Video-level metrics on a sample list under the 0.5 threshold."""
    p_fakes = {}
    for lo in range(0, len(samples), batch_size):
        idx = list(range(lo, min(lo + batch_size, len(samples))))
        maps, s_p, t_f, labels = _stack_batch(samples, idx)
        logits = model.batch_logits(maps, s_p, t_f, flags, train=False)
        probs = softmax(logits.data)[:, 1]
        for i, p in zip(idx, probs):
            p_fakes[samples[i].source_id] = float(p)
    counts = {"real": [0, 0], "fake": [0, 0]}  # label -> [n, correct]
    for s in samples:
        name = "fake" if s.label else "real"
        pred = 1 if p_fakes[s.source_id] > 0.5 else 0
        counts[name][0] += 1
        counts[name][1] += int(pred == s.label)
    n = len(samples)
    correct = counts["real"][1] + counts["fake"][1]
    return {
        "accuracy": correct / n if n else 0.0,
        "n_videos": n,
        "n_real": counts["real"][0],
        "n_fake": counts["fake"][0],
        "correct_real": counts["real"][1],
        "correct_fake": counts["fake"][1],
        "p_fake": p_fakes,
    }
