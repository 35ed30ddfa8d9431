"""The neural base listener: utterance -> quadratic-form scorer over color space.

An LSTM encodes the (listener-preprocessed) utterance; an affine map turns the
final hidden state into the parameters (mu, Sigma) of the score function

    score(f) = -(f - mu)^T Sigma (f - mu)

over 54-dimensional color features f. The three context colors' scores are
normalized in log space to give the distribution over targets. Sigma is an
unconstrained square matrix: it is not forced negative definite, and the
context-normalized distribution is valid regardless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import FOURIER_DIM, Color, fourier_features_array
from .corpus import ContextTrial, Vocabulary, preprocess
from .errors import EmptyUtterance
from .nnsubstrate import (
    Adadelta,
    Adam,
    LstmCellParams,
    Parameter,
    Tensor,
    clip_global_norm,
    embed,
    load_checkpoint,
    log_softmax,
    quad_scores,
    run_lstm,
    save_checkpoint,
    softmax_xent,
    zero_gradients,
)
from .training import (
    EpochStats,
    TrainConfig,
    TrainingReport,
    restore_params,
    same_length_batches,
    snapshot_params,
)


class ListenerModel:
    """Parameters of the base listener (embedding, LSTM, output map)."""

    def __init__(self, vocab: Vocabulary, embedding: Parameter, cell: LstmCellParams,
                 out_w: Parameter, out_b: Parameter):
        self.vocab = vocab
        self.embedding = embedding
        self.cell = cell
        self.out_w = out_w
        self.out_b = out_b
        self.embed_dim = embedding.data.shape[1]
        self.hidden_dim = cell.hidden_dim
        self.feature_dim = int(round(np.sqrt(out_w.data.shape[1] + 0.25) - 0.5))

    @classmethod
    def create(cls, vocab: Vocabulary, rng: np.random.Generator,
               embed_dim: int = 100, hidden_dim: int = 100,
               feature_dim: int = FOURIER_DIM) -> "ListenerModel":
        out_dim = feature_dim + feature_dim * feature_dim
        scale = 1.0 / np.sqrt(hidden_dim)
        return cls(
            vocab,
            Parameter("embedding", rng.normal(0.0, 0.01, (len(vocab), embed_dim))),
            LstmCellParams.create("lstm", embed_dim, hidden_dim, rng),
            Parameter("out_w", rng.uniform(-scale, scale, (hidden_dim, out_dim))),
            Parameter("out_b", np.zeros(out_dim)),
        )

    def parameters(self) -> list[Parameter]:
        return [self.embedding, *self.cell.parameters(), self.out_w, self.out_b]

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return self.vocab.encode(tokens)

    def mu_sigma(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        """Scorer parameters for a batch of same-length id rows (B, T)."""
        ids = np.atleast_2d(ids)
        batch, steps = ids.shape
        inputs = [embed(ids[:, t], self.embedding) for t in range(steps)]
        h, _ = run_lstm(inputs, self.cell, batch)
        out = h @ self.out_w + self.out_b
        f = self.feature_dim
        mu = out.narrow(1, 0, f)
        sigma = out.narrow(1, f, f * f).reshape(batch, f, f)
        return mu, sigma

    def scores(self, ids: np.ndarray, feats: np.ndarray) -> Tensor:
        """Raw quadratic-form scores (B, K) for candidate features (B, K, F)."""
        mu, sigma = self.mu_sigma(ids)
        return quad_scores(feats, mu, sigma)

    def save(self, path) -> None:
        arrays = {p.name: p.data for p in self.parameters()}
        save_checkpoint(path, arrays, {
            "model": "listener",
            "vocab": self.vocab.id_to_token,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "feature_dim": self.feature_dim,
        })

    @classmethod
    def load(cls, path) -> "ListenerModel":
        arrays, config = load_checkpoint(path)
        if config.get("model") != "listener":
            raise ValueError(f"not a listener checkpoint: {config.get('model')!r}")
        vocab = Vocabulary(config["vocab"])
        cell = LstmCellParams(config["embed_dim"], config["hidden_dim"],
                              Parameter("lstm.w_x", arrays["lstm.w_x"]),
                              Parameter("lstm.w_h", arrays["lstm.w_h"]),
                              Parameter("lstm.bias", arrays["lstm.bias"]))
        return cls(vocab, Parameter("embedding", arrays["embedding"]), cell,
                   Parameter("out_w", arrays["out_w"]),
                   Parameter("out_b", arrays["out_b"]))


def context_features(colors: tuple[Color, Color, Color]) -> np.ndarray:
    return fourier_features_array(np.stack([c.as_array() for c in colors]))


def l0_score(model: ListenerModel, tokens: list[str],
             colors: tuple[Color, Color, Color]) -> np.ndarray:
    """Distribution over the three context colors given listener-mode tokens."""
    if not tokens:
        raise EmptyUtterance("listener got an utterance with no tokens")
    ids = np.array([model.encode_tokens(tokens)])
    feats = context_features(colors)[None, :, :]
    scores = model.scores(ids, feats)
    return np.exp(log_softmax(scores.data[0]))


def l0_probs_many(model: ListenerModel, id_seqs: list[list[int]],
                  feats: np.ndarray) -> np.ndarray:
    """Batched listener distributions for many utterances.

    feats is either one context (3, F), shared by all rows, or per-row
    contexts (B, 3, F). Rows are grouped by length internally. Returns (B, 3).
    """
    n = len(id_seqs)
    out = np.empty((n, 3))
    lengths = np.array([len(s) for s in id_seqs])
    if np.any(lengths == 0):
        raise EmptyUtterance("empty token sequence in batch")
    shared = feats.ndim == 2
    for group in same_length_batches(lengths, np.arange(n), batch_size=512):
        ids = np.array([id_seqs[i] for i in group])
        f = np.repeat(feats[None, :, :], len(group), axis=0) if shared else feats[group]
        scores = model.scores(ids, f)
        out[group] = np.exp(log_softmax(scores.data))
    return out


def trial_listener_ids(model: ListenerModel, trial: ContextTrial) -> list[int]:
    return model.encode_tokens(preprocess(trial.speaker_texts, "listener"))


def train_l0(model: ListenerModel, train_trials: list[ContextTrial],
             dev_trials: list[ContextTrial], config: TrainConfig) -> TrainingReport:
    """Minimize cross-entropy of the target index; keep the best-dev epoch.

    Default optimizer is ADADELTA at learning rate 0.2. The model is left
    holding the best-dev-accuracy parameters.
    """
    opt_name = config.optimizer or "adadelta"
    lr = config.learning_rate if config.learning_rate is not None else \
        (0.2 if opt_name == "adadelta" else 0.004)
    params = model.parameters()
    opt = (Adadelta if opt_name == "adadelta" else Adam)(params, lr=lr)

    ids = [np.array(trial_listener_ids(model, t)) for t in train_trials]
    lengths = np.array([len(s) for s in ids])
    feats = np.stack([context_features(t.colors) for t in train_trials])
    targets = np.array([t.target_index for t in train_trials])

    rng = np.random.default_rng(config.seed)
    report = TrainingReport()
    best_acc = -1.0
    best = snapshot_params(params)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(ids))
        total_loss = 0.0
        for batch in same_length_batches(lengths, order, config.batch_size):
            scores = model.scores(np.stack([ids[i] for i in batch]), feats[batch])
            losses, _ = softmax_xent(scores, targets[batch])
            loss = losses.mean()
            loss.backward()
            total_loss += float(losses.data.sum())
            clip_global_norm(params, config.grad_clip)
            opt.step()
            zero_gradients(params)
        acc, ppl = evaluate_l0(model, dev_trials)
        report.epochs.append(EpochStats(epoch, total_loss / len(ids), acc, ppl))
        if acc > best_acc:
            best_acc = acc
            best = snapshot_params(params)
            report.best_epoch = epoch
    restore_params(params, best)
    return report


def evaluate_l0(model: ListenerModel,
                trials: list[ContextTrial]) -> tuple[float, float]:
    """(accuracy, perplexity) of the base listener on a trial list."""
    probs = l0_trial_probs(model, trials)
    targets = np.array([t.target_index for t in trials])
    acc = float((probs.argmax(axis=1) == targets).mean())
    p_target = np.maximum(probs[np.arange(len(trials)), targets], 1e-300)
    ppl = float(np.exp(-np.log(p_target).mean()))
    return acc, ppl


def l0_trial_probs(model: ListenerModel, trials: list[ContextTrial]) -> np.ndarray:
    """Batched listener distributions for whole trials (N, 3)."""
    id_seqs = [trial_listener_ids(model, t) for t in trials]
    n = len(trials)
    out = np.empty((n, 3))
    lengths = np.array([len(s) for s in id_seqs])
    feats = np.stack([context_features(t.colors) for t in trials])
    for group in same_length_batches(lengths, np.arange(n), batch_size=512):
        scores = model.scores(np.stack([np.array(id_seqs[i]) for i in group]),
                              feats[group])
        out[group] = np.exp(log_softmax(scores.data))
    return out


def density_grid(model: ListenerModel, tokens: list[str], h_bins: int = 90,
                 s_bins: int = 50, v_bins: int = 50) -> np.ndarray:
    """Log marginal scorer density over (hue, saturation), summed over value.

    The HSV lattice uses cell centers; each point maps to RGB and then to
    feature space, where exp(score) is accumulated over the value axis in log
    space. The result is shifted so its maximum cell is 0.
    """
    from .colorspace import _hsv_to_rgb_arrays

    if not tokens:
        raise EmptyUtterance("density grid needs a non-empty utterance")
    h = (np.arange(h_bins) + 0.5) * (360.0 / h_bins)
    s = (np.arange(s_bins) + 0.5) / s_bins
    v = (np.arange(v_bins) + 0.5) / v_bins
    hh, ss, vv = np.meshgrid(h, s, v, indexing="ij")
    r, g, b = _hsv_to_rgb_arrays(hh.ravel(), ss.ravel(), vv.ravel())
    feats = fourier_features_array(np.stack([r, g, b], axis=-1))

    mu, sigma = model.mu_sigma(np.array([model.encode_tokens(tokens)]))
    d = feats - mu.data[0]
    scores = -np.einsum("nf,fe,ne->n", d, sigma.data[0], d)
    scores = scores.reshape(h_bins, s_bins, v_bins)
    shift = scores.max()
    with np.errstate(divide="ignore"):
        marginal = np.log(np.exp(scores - shift).sum(axis=2)) + shift
    return marginal - marginal.max()
