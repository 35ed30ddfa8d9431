"""The neural base speaker: context encoder + description decoder.

The three context colors (distractors first, target last) run through an LSTM
encoder over their feature vectors; the encoder's final cell state is the
context vector. The decoder LSTM receives [context vector ; previous-token
embedding] at every step and predicts the next token through an affine map
and softmax over the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import FOURIER_DIM, Color, fourier_features_array
from .corpus import EOS, ContextTrial, Vocabulary, preprocess
from .nnsubstrate import (
    Adadelta,
    Adam,
    LstmCellParams,
    Parameter,
    Tensor,
    clip_global_norm,
    embed,
    load_checkpoint,
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

MAX_DECODE_LEN = 20


@dataclass
class UtteranceSample:
    """One sampled description: speaker-mode tokens ending with </s>."""

    tokens: list[str]
    log_prob: float


class SpeakerModel:
    """Parameters of the base speaker (encoder, embedding, decoder, output)."""

    def __init__(self, vocab: Vocabulary, encoder: LstmCellParams,
                 embedding: Parameter, decoder: LstmCellParams,
                 out_w: Parameter, out_b: Parameter):
        self.vocab = vocab
        self.encoder = encoder
        self.embedding = embedding
        self.decoder = decoder
        self.out_w = out_w
        self.out_b = out_b
        self.embed_dim = embedding.data.shape[1]
        self.hidden_dim = encoder.hidden_dim
        self.feature_dim = encoder.input_dim

    @classmethod
    def create(cls, vocab: Vocabulary, rng: np.random.Generator,
               embed_dim: int = 100, hidden_dim: int = 100,
               feature_dim: int = FOURIER_DIM) -> "SpeakerModel":
        scale = 1.0 / np.sqrt(hidden_dim)
        return cls(
            vocab,
            LstmCellParams.create("encoder", feature_dim, hidden_dim, rng),
            Parameter("embedding", rng.normal(0.0, 0.01, (len(vocab), embed_dim))),
            LstmCellParams.create("decoder", hidden_dim + embed_dim, hidden_dim, rng),
            Parameter("out_w", rng.uniform(-scale, scale, (hidden_dim, len(vocab)))),
            Parameter("out_b", np.zeros(len(vocab))),
        )

    def parameters(self) -> list[Parameter]:
        return [*self.encoder.parameters(), self.embedding,
                *self.decoder.parameters(), self.out_w, self.out_b]

    def encode(self, feats: np.ndarray) -> Tensor:
        """Context vector for (B, 3, F) features already ordered target-last.

        Returns the encoder's final cell state.
        """
        if feats.ndim != 3:
            raise ValueError(f"expected (B, 3, F) features, got {feats.shape}")
        inputs = [Tensor(feats[:, i, :]) for i in range(feats.shape[1])]
        _, c = run_lstm(inputs, self.encoder, feats.shape[0])
        return c

    def step_logits(self, ctx: Tensor, token_ids: np.ndarray,
                    h: Tensor, c: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """One decoder step: previous tokens (B,) -> next-token logits (B, V)."""
        from .nnsubstrate import concat, lstm_step

        x = concat([ctx, embed(token_ids, self.embedding)], axis=1)
        h2, c2 = lstm_step(x, h, c, self.decoder)
        return h2 @ self.out_w + self.out_b, h2, c2

    def save(self, path) -> None:
        arrays = {p.name: p.data for p in self.parameters()}
        save_checkpoint(path, arrays, {
            "model": "speaker",
            "vocab": self.vocab.id_to_token,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "feature_dim": self.feature_dim,
        })

    @classmethod
    def load(cls, path) -> "SpeakerModel":
        arrays, config = load_checkpoint(path)
        if config.get("model") != "speaker":
            raise ValueError(f"not a speaker checkpoint: {config.get('model')!r}")

        def cell(name, input_dim):
            return LstmCellParams(input_dim, config["hidden_dim"],
                                  Parameter(f"{name}.w_x", arrays[f"{name}.w_x"]),
                                  Parameter(f"{name}.w_h", arrays[f"{name}.w_h"]),
                                  Parameter(f"{name}.bias", arrays[f"{name}.bias"]))

        return cls(Vocabulary(config["vocab"]),
                   cell("encoder", config["feature_dim"]),
                   Parameter("embedding", arrays["embedding"]),
                   cell("decoder", config["hidden_dim"] + config["embed_dim"]),
                   Parameter("out_w", arrays["out_w"]),
                   Parameter("out_b", arrays["out_b"]))


def reorder_target_last(colors: tuple[Color, Color, Color],
                        target_index: int) -> np.ndarray:
    """Feature rows for [distractor, distractor, target] in stored order."""
    order = [i for i in range(3) if i != target_index] + [target_index]
    return fourier_features_array(np.stack([colors[i].as_array() for i in order]))


def encode_context(model: SpeakerModel, colors: tuple[Color, Color, Color],
                   target_index: int) -> np.ndarray:
    """The context vector h: encoder final cell state, target fed last."""
    return model.encode(reorder_target_last(colors, target_index)[None]).data[0]


def _teacher_forced_losses(model: SpeakerModel, feats: np.ndarray,
                           ids: np.ndarray) -> Tensor:
    """Summed per-sequence NLL (B,) for same-length id rows ending in EOS."""
    batch, steps = ids.shape
    ctx = model.encode(feats)
    h = Tensor(np.zeros((batch, model.hidden_dim)))
    c = Tensor(np.zeros((batch, model.hidden_dim)))
    prev = np.full(batch, model.vocab.bos_id)
    total = None
    for t in range(steps):
        logits, h, c = model.step_logits(ctx, prev, h, c)
        losses, _ = softmax_xent(logits, ids[:, t])
        total = losses if total is None else total + losses
        prev = ids[:, t]
    return total


def s0_log_prob(model: SpeakerModel, tokens: list[str],
                colors: tuple[Color, Color, Color], target_index: int) -> float:
    """Teacher-forced log probability of a token sequence ending with </s>."""
    if not tokens or tokens[-1] != EOS:
        raise ValueError("speaker tokens must end with the end token </s>")
    ids = np.array([model.vocab.encode(tokens)])
    feats = reorder_target_last(colors, target_index)[None]
    return -float(_teacher_forced_losses(model, feats, ids).data[0])


def s0_log_probs_batch(model: SpeakerModel, id_seqs: list[list[int]],
                       feats: np.ndarray) -> np.ndarray:
    """Batched log probabilities; feats (B, 3, F) target-last per row."""
    n = len(id_seqs)
    out = np.empty(n)
    lengths = np.array([len(s) for s in id_seqs])
    for group in same_length_batches(lengths, np.arange(n), batch_size=512):
        ids = np.array([id_seqs[i] for i in group])
        out[group] = -_teacher_forced_losses(model, feats[group], ids).data
    return out


def s0_sample_batch(model: SpeakerModel, feats: np.ndarray,
                    rng: np.random.Generator, temperature: float = 1.0,
                    max_len: int = MAX_DECODE_LEN) -> list[tuple[tuple[int, ...], float]]:
    """Ancestral sampling for (B, 3, F) contexts; returns (ids, log_prob) rows.

    temperature scales the sampling distribution only; recorded log_prob is
    always the model's own. temperature=0 decodes greedily. Rows that hit
    max_len get </s> forced, with its model log probability included.
    """
    batch = feats.shape[0]
    ctx = model.encode(feats)
    h = Tensor(np.zeros((batch, model.hidden_dim)))
    c = Tensor(np.zeros((batch, model.hidden_dim)))
    prev = np.full(batch, model.vocab.bos_id)
    alive = np.ones(batch, dtype=bool)
    seqs: list[list[int]] = [[] for _ in range(batch)]
    log_probs = np.zeros(batch)
    eos = model.vocab.eos_id
    for step in range(max_len):
        logits, h, c = model.step_logits(ctx, prev, h, c)
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        # recorded log_prob uses the model's own distribution; the sampling
        # distribution additionally masks <s>, which is an input-only symbol
        z_sample = z.copy()
        z_sample[:, model.vocab.bos_id] = -np.inf
        if step == max_len - 1:
            chosen = np.full(batch, eos)
        elif temperature <= 0.0:
            chosen = z_sample.argmax(axis=1)
        else:
            zt = z_sample / temperature
            pt = np.exp(zt - zt.max(axis=1, keepdims=True))
            pt /= pt.sum(axis=1, keepdims=True)
            u = rng.random((batch, 1))
            chosen = (pt.cumsum(axis=1) < u).sum(axis=1)
            chosen = np.minimum(chosen, pt.shape[1] - 1)
        for i in range(batch):
            if alive[i]:
                seqs[i].append(int(chosen[i]))
                log_probs[i] += logp[i, chosen[i]]
        alive &= chosen != eos
        if not alive.any():
            break
        prev = np.where(alive, chosen, eos)
    return [(tuple(s), float(lp)) for s, lp in zip(seqs, log_probs)]


def s0_sample(model: SpeakerModel, colors: tuple[Color, Color, Color],
              target_index: int, rng: np.random.Generator,
              temperature: float = 1.0) -> UtteranceSample:
    """Sample one description of the target; log_prob is the model's own."""
    feats = reorder_target_last(colors, target_index)[None]
    ids, lp = s0_sample_batch(model, feats, rng, temperature)[0]
    return UtteranceSample(model.vocab.decode(list(ids)), lp)


def trial_speaker_ids(model: SpeakerModel, trial: ContextTrial) -> list[int]:
    tokens = preprocess(trial.speaker_texts, "speaker") + [EOS]
    return model.vocab.encode(tokens)


def train_s0(model: SpeakerModel, train_trials: list[ContextTrial],
             dev_trials: list[ContextTrial], config: TrainConfig) -> TrainingReport:
    """Minimize per-token cross-entropy; keep the best-dev-perplexity epoch.

    Default optimizer is Adam at learning rate 0.004.
    """
    opt_name = config.optimizer or "adam"
    lr = config.learning_rate if config.learning_rate is not None else \
        (0.004 if opt_name == "adam" else 0.2)
    params = model.parameters()
    opt = (Adam if opt_name == "adam" else Adadelta)(params, lr=lr)

    ids = [np.array(trial_speaker_ids(model, t)) for t in train_trials]
    lengths = np.array([len(s) for s in ids])
    feats = np.stack([reorder_target_last(t.colors, t.target_index)
                      for t in train_trials])

    rng = np.random.default_rng(config.seed)
    report = TrainingReport()
    best_ppl = np.inf
    best = snapshot_params(params)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(ids))
        total_loss = 0.0
        total_tokens = 0
        for batch in same_length_batches(lengths, order, config.batch_size):
            losses = _teacher_forced_losses(
                model, feats[batch], np.stack([ids[i] for i in batch]))
            n_tokens = int(lengths[batch].sum())
            loss = losses.sum() * (1.0 / n_tokens)
            loss.backward()
            total_loss += float(losses.data.sum())
            total_tokens += n_tokens
            clip_global_norm(params, config.grad_clip)
            opt.step()
            zero_gradients(params)
        ppl = dev_token_perplexity(model, dev_trials)
        report.epochs.append(EpochStats(epoch, total_loss / total_tokens,
                                        dev_perplexity=ppl))
        if ppl < best_ppl:
            best_ppl = ppl
            best = snapshot_params(params)
            report.best_epoch = epoch
    restore_params(params, best)
    return report


def dev_token_perplexity(model: SpeakerModel, trials: list[ContextTrial]) -> float:
    """exp(mean per-token NLL) over a trial list, end tokens included."""
    id_seqs = [trial_speaker_ids(model, t) for t in trials]
    feats = np.stack([reorder_target_last(t.colors, t.target_index) for t in trials])
    log_probs = s0_log_probs_batch(model, id_seqs, feats)
    n_tokens = sum(len(s) for s in id_seqs)
    return float(np.exp(-log_probs.sum() / n_tokens))
