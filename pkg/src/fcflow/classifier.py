"""Smoothness classification of 1D solution windows.

A window (one subpatch grid line) is mapped to a smoothness class tau:

    1 discontinuous, 2 continuous with kink, 3 C1 with curvature jump,
    4 smooth.

Features are log-compressed magnitudes of the leading FC Fourier modes,
normalized so they are exactly invariant under constant offsets and positive
rescaling of the window.  Classification runs either through a small trained
feedforward network or through a deterministic coefficient-decay fit; both
share the feature definition and the machine-noise guard.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import fc

__all__ = [
    "ClassifierModel", "TrainingError", "window_features",
    "generate_training_set", "train_classifier", "infer", "classify_windows",
    "decay_fit_classify", "save_model", "load_model", "load_default_model",
    "FEATURE_MODES",
]

FEATURE_MODES = 24          # leading nonzero Fourier modes used as features
_LOG_FLOOR = -12.0
_NOISE_REL = 1e-10          # oscillation below this is machine noise: tau=4
_MODEL_MAGIC = b"FCNN"
_MODEL_VERSION = 1
_ACTIVATIONS = {"tanh": 0}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassifierModel:
    weights: tuple          # list of (W, b) pairs, applied left to right
    activation: str = "tanh"

    @property
    def layer_sizes(self):
        sizes = [self.weights[0][0].shape[0]]
        sizes += [w.shape[1] for w, _ in self.weights]
        return sizes

    def scores(self, feats):
        x = np.asarray(feats, dtype=float)
        for k, (w, b) in enumerate(self.weights):
            x = x @ w + b
            if k < len(self.weights) - 1:
                x = np.tanh(x)
        return x


def window_features(values: np.ndarray, op) -> np.ndarray:
    """Feature vectors for windows along the last axis."""
    values = np.asarray(values, dtype=float)
    ext = fc.fc_extend(values, op)
    mags = np.abs(np.fft.rfft(ext, axis=-1))[..., 1:FEATURE_MODES + 1]
    if mags.shape[-1] < FEATURE_MODES:
        raise ValueError("window too short for the feature mode count")
    peak = mags.max(axis=-1, keepdims=True)
    safe = np.where(peak > 0.0, peak, 1.0)
    return np.log10(mags / safe + 10.0 ** _LOG_FLOOR)


def _noise_mask(values):
    """Windows whose oscillation is at machine-noise level."""
    values = np.asarray(values, dtype=float)
    osc = values.max(axis=-1) - values.min(axis=-1)
    scale = np.maximum(1.0, np.abs(values).max(axis=-1))
    return osc <= _NOISE_REL * scale


def _argmax_smooth_ties(scores):
    """Argmax class in {1..4}; exact ties resolve to the smoother class."""
    rev = scores[..., ::-1]
    return 4 - np.argmax(rev, axis=-1)


def infer(model: ClassifierModel, feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=float)
    if feats.shape[-1] != model.layer_sizes[0]:
        raise ValueError(
            f"feature length {feats.shape[-1]} != model input {model.layer_sizes[0]}")
    return _argmax_smooth_ties(model.scores(feats))


def classify_windows(values: np.ndarray, op, model=None) -> np.ndarray:
    """Class tau for each window (last axis); model=None uses the decay fit."""
    values = np.asarray(values, dtype=float)
    if model is None:
        tau = decay_fit_classify(window_features(values, op))
    else:
        tau = infer(model, window_features(values, op))
    noise = _noise_mask(values)
    return np.where(noise, 4, tau)


def decay_fit_classify(feats: np.ndarray) -> np.ndarray:
    """Deterministic fallback: slope of log-magnitude against log-mode.

    Thresholds sit at the measured class-median midpoints of the synthetic
    families.  Steps separate sharply; the gentler classes overlap (the
    continuation's spectral sidelobes floor the high modes), so this path
    trades accuracy for zero training dependence.
    """
    feats = np.asarray(feats, dtype=float)
    logk = np.log10(np.arange(1, FEATURE_MODES + 1))
    lk = logk - logk.mean()
    slope = (feats * lk).sum(axis=-1) / (lk * lk).sum()
    tau = np.full(feats.shape[:-1], 4, dtype=int)
    tau[slope > -2.68] = 3
    tau[slope > -2.58] = 2
    tau[slope > -1.80] = 1
    # near-silent windows (all features at the floor) are smooth
    tau[feats.max(axis=-1) - feats.min(axis=-1) < 0.5] = 4
    return tau


# ---------------------------------------------------------------------------
# synthetic training data

def _trig_background(rng, x, kmax=6):
    out = np.full_like(x, rng.uniform(-1.0, 1.0))
    for k in range(1, kmax + 1):
        out += rng.normal(0.0, 0.6 / k) * np.cos(
            2 * np.pi * k * x + rng.uniform(0, 2 * np.pi))
    return out


def _sample_window(rng, tau, x):
    bg = _trig_background(rng, x)
    if tau == 4:
        return bg
    z = rng.uniform(0.15, 0.85)
    amp = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    ratio = 10.0 ** rng.uniform(-0.3, 0.6)
    if tau == 1:
        sing = np.where(x >= z, amp, 0.0)
    elif tau == 2:
        sing = amp * np.abs(x - z)
    else:
        sing = amp * np.abs(x - z) * (x - z)
    return bg + ratio * sing


def generate_training_set(seed: int, count: int, window_len: int = 101,
                          op=None):
    """Balanced labeled feature set from the four analytic families."""
    if count < 10_000:
        raise ValueError("need at least 10000 samples for a usable set")
    if op is None:
        op = fc.build_continuation_operator(2, 25)
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, window_len)
    per = count // 4
    windows = np.empty((4 * per, window_len))
    labels = np.empty(4 * per, dtype=int)
    row = 0
    for tau in (1, 2, 3, 4):
        for _ in range(per):
            windows[row] = _sample_window(rng, tau, x)
            labels[row] = tau
            row += 1
    feats = window_features(windows, op)
    perm = rng.permutation(row)
    return feats[perm], labels[perm]


# ---------------------------------------------------------------------------
# training (plain numpy Adam on softmax cross-entropy)

def train_classifier(feats, labels, hidden=(32, 32), seed=0, epochs=25,
                     batch=256, lr=3e-3, holdout=0.2, min_accuracy=0.95):
    feats = np.asarray(feats, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = feats.shape[0]
    n_hold = int(n * holdout)
    train_x, train_y = feats[n_hold:], labels[n_hold:] - 1
    hold_x, hold_y = feats[:n_hold], labels[:n_hold] - 1

    rng = np.random.default_rng(seed)
    sizes = [feats.shape[1], *hidden, 4]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append([rng.normal(0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)),
                       np.zeros(fan_out)])

    mom = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    vel = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def forward(x):
        acts = [x]
        for k, (w, b) in enumerate(params):
            x = x @ w + b
            if k < len(params) - 1:
                x = np.tanh(x)
            acts.append(x)
        return acts

    for _ in range(epochs):
        order = rng.permutation(train_x.shape[0])
        for lo in range(0, order.size - batch + 1, batch):
            idx = order[lo:lo + batch]
            acts = forward(train_x[idx])
            logits = acts[-1]
            logits = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            grad = p
            grad[np.arange(idx.size), train_y[idx]] -= 1.0
            grad /= idx.size
            step += 1
            for k in range(len(params) - 1, -1, -1):
                a_in = acts[k]
                gw = a_in.T @ grad
                gb = grad.sum(axis=0)
                if k > 0:
                    grad = (grad @ params[k][0].T) * (1.0 - acts[k] ** 2)
                for slot, g in ((0, gw), (1, gb)):
                    mom[k][slot] = beta1 * mom[k][slot] + (1 - beta1) * g
                    vel[k][slot] = beta2 * vel[k][slot] + (1 - beta2) * g * g
                    mhat = mom[k][slot] / (1 - beta1 ** step)
                    vhat = vel[k][slot] / (1 - beta2 ** step)
                    params[k][slot] -= lr * mhat / (np.sqrt(vhat) + eps)

    model = ClassifierModel(weights=tuple((w.copy(), b.copy())
                                          for w, b in params))
    pred = infer(model, hold_x)
    acc = float((pred == hold_y + 1).mean())
    if acc < min_accuracy:
        raise TrainingError(
            f"held-out accuracy {acc:.4f} below required {min_accuracy}")
    return model, acc


# ---------------------------------------------------------------------------
# serialization

def save_model(model: ClassifierModel, path: str):
    sizes = model.layer_sizes
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for w, b in model.weights for arr in (w, b))
    digest = hashlib.sha256(payload).digest()
    header = _MODEL_MAGIC + struct.pack(
        "<III", _MODEL_VERSION, _ACTIVATIONS[model.activation], len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    header += struct.pack("<Q", len(payload))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + digest + payload)
    os.replace(tmp, path)


def load_model(path: str) -> ClassifierModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a classifier model file")
    version, act_id, n_sizes = struct.unpack("<III", raw[4:16])
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    off = 16
    sizes = struct.unpack(f"<{n_sizes}I", raw[off:off + 4 * n_sizes])
    off += 4 * n_sizes
    (nbytes,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    digest = raw[off:off + 32]
    payload = raw[off + 32:]
    if len(payload) != nbytes or hashlib.sha256(payload).digest() != digest:
        raise ValueError(f"{path}: model payload checksum mismatch")
    activation = {v: k for k, v in _ACTIVATIONS.items()}[act_id]
    weights = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(payload, "<f8", fan_in * fan_out, pos).reshape(
            fan_in, fan_out).copy()
        pos += 8 * fan_in * fan_out
        b = np.frombuffer(payload, "<f8", fan_out, pos).copy()
        pos += 8 * fan_out
        weights.append((w, b))
    return ClassifierModel(weights=tuple(weights), activation=activation)


def default_model_path():
    return os.path.join(os.path.dirname(__file__), "data",
                        "classifier_default.bin")


def load_default_model() -> ClassifierModel:
    return load_model(default_model_path())
