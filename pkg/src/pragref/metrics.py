"""Listener evaluation and behavioral analysis of speakers.

Listener agents are scored by accuracy (argmax matches the target, ties to
the lowest index) and perplexity, exp of the mean negative log probability of
the true target; a uniform three-way guesser scores exactly 3.

Speaker behavior is summarized by per-condition means of five surface
metrics. Comparative/superlative detection uses suffix heuristics rather
than a part-of-speech tagger, and term specificity comes from the bundled
color-term depth table (see data/color_term_depths.csv; schema: term,depth)
rather than a lexical database; reports carry a header noting this.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .colorspace import Color, Condition
from .corpus import ContextTrial, preprocess

HEURISTICS_NOTE = ("comparatives/superlatives via suffix heuristics; "
                   "specificity via bundled color-term depth table")

_SPECIFICITY_THRESHOLD = 7


# -- listener evaluation -------------------------------------------------------


@dataclass
class ConditionStats:
    n: int
    accuracy: float
    perplexity: float


@dataclass
class EvalReport:
    accuracy: float
    perplexity: float
    n_trials: int
    per_condition: dict[str, ConditionStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "perplexity": self.perplexity,
            "n_trials": self.n_trials,
            "per_condition": {k: vars(v) for k, v in self.per_condition.items()},
        }


def _scores(probs: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    acc = float((probs.argmax(axis=1) == targets).mean())
    p_t = np.maximum(probs[np.arange(len(targets)), targets], 1e-300)
    return acc, float(np.exp(-np.log(p_t).mean()))


def evaluate(agent, trials: list[ContextTrial]) -> EvalReport:
    """Score a listener agent: agent(trial) -> probability 3-vector."""
    probs = np.stack([np.asarray(agent(t), dtype=np.float64) for t in trials])
    return evaluate_probs(probs, trials)


def evaluate_probs(probs: np.ndarray, trials: list[ContextTrial]) -> EvalReport:
    """Score precomputed per-trial distributions (N, 3)."""
    targets = np.array([t.target_index for t in trials])
    acc, ppl = _scores(probs, targets)
    report = EvalReport(acc, ppl, len(trials))
    conditions = np.array([t.condition_or_classified().value for t in trials])
    for cond in sorted(set(conditions)):
        mask = conditions == cond
        c_acc, c_ppl = _scores(probs[mask], targets[mask])
        report.per_condition[cond] = ConditionStats(int(mask.sum()), c_acc, c_ppl)
    return report


@dataclass
class HumanAccuracyReport:
    per_condition: dict[str, float]
    n_missing_click: int


def human_accuracy(trials: list[ContextTrial]) -> HumanAccuracyReport:
    """Per-condition fraction of clicks on the target.

    Trials without a click are counted and excluded; conditions with no
    clickable trials are omitted from the result rather than reported as 0.
    """
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    missing = 0
    for t in trials:
        if t.clicked_index is None:
            missing += 1
            continue
        cond = t.condition_or_classified().value
        totals[cond] = totals.get(cond, 0) + 1
        hits[cond] = hits.get(cond, 0) + (t.clicked_index == t.target_index)
    return HumanAccuracyReport(
        {c: hits[c] / totals[c] for c in sorted(totals)}, missing)


# -- speaker behavior -----------------------------------------------------------


def _load_depth_table() -> dict[str, int]:
    path = resources.files("pragref.data") / "color_term_depths.csv"
    with path.open(encoding="utf-8") as fh:
        return {row["term"]: int(row["depth"]) for row in csv.DictReader(fh)}


_DEPTHS: dict[str, int] | None = None


def term_depth(token: str) -> int | None:
    """Specificity depth of a token, normalizing -er/-est/-ish variants.

    Candidates tried in order: the token itself, its stem, stem+'e' (bluish ->
    blue), and the stem with a doubled final consonant collapsed (reddish ->
    red). Returns None for tokens outside the table.
    """
    global _DEPTHS
    if _DEPTHS is None:
        _DEPTHS = _load_depth_table()
    candidates = [token]
    for suf in ("est", "ish", "er"):
        if token.endswith(suf) and len(token) - len(suf) >= 3:
            stem = token[: -len(suf)]
            candidates += [stem, stem + "e"]
            if len(stem) >= 2 and stem[-1] == stem[-2]:
                candidates.append(stem[:-1])
            break
    for cand in candidates:
        if cand in _DEPTHS:
            return _DEPTHS[cand]
    return None


@dataclass
class UtteranceFlags:
    comparative: bool
    superlative: bool
    negative: bool
    high_specificity: bool


def utterance_flags(text: str) -> UtteranceFlags:
    """Surface-pattern flags for one utterance (speaker-mode tokens)."""
    tokens = preprocess(text, "speaker")
    comparative = superlative = negative = high_spec = False
    for tok in tokens:
        if (tok.endswith("er") and len(tok) - 2 >= 3) or tok in ("more", "less"):
            comparative = True
        if tok.endswith("est") or tok in ("most", "least"):
            superlative = True
        if tok == "not":
            negative = True
        depth = term_depth(tok)
        if depth is not None and depth > _SPECIFICITY_THRESHOLD:
            high_spec = True
    return UtteranceFlags(comparative, superlative, negative, high_spec)


@dataclass
class ConditionBehavior:
    n: int
    chars: float
    words: float
    comparatives_pct: float
    high_specificity_pct: float
    negatives_pct: float
    superlatives_pct: float


@dataclass
class BehaviorReport:
    per_condition: dict[str, ConditionBehavior]
    note: str = HEURISTICS_NOTE

    def to_dict(self) -> dict:
        return {"note": self.note,
                "per_condition": {k: vars(v) for k, v in self.per_condition.items()}}


def behavior_metrics(items: list[tuple[str, Condition]]) -> BehaviorReport:
    """Per-condition means of the five surface metrics.

    items: (raw utterance text, condition) pairs. Character and word counts
    use the raw text; flags use speaker-mode tokens.
    """
    buckets: dict[str, list[tuple[int, int, UtteranceFlags]]] = {}
    for text, cond in items:
        flags = utterance_flags(text)
        buckets.setdefault(cond.value, []).append(
            (len(text), len(text.split()), flags))
    per_condition = {}
    for cond, rows in sorted(buckets.items()):
        n = len(rows)
        per_condition[cond] = ConditionBehavior(
            n=n,
            chars=sum(r[0] for r in rows) / n,
            words=sum(r[1] for r in rows) / n,
            comparatives_pct=100.0 * sum(r[2].comparative for r in rows) / n,
            high_specificity_pct=100.0 * sum(r[2].high_specificity for r in rows) / n,
            negatives_pct=100.0 * sum(r[2].negative for r in rows) / n,
            superlatives_pct=100.0 * sum(r[2].superlative for r in rows) / n,
        )
    return BehaviorReport(per_condition)


def behavior_metrics_for_trials(trials: list[ContextTrial]) -> BehaviorReport:
    return behavior_metrics([(t.combined_text(), t.condition_or_classified())
                             for t in trials])


# -- speaker comparison -----------------------------------------------------------


Context = tuple[tuple[Color, Color, Color], int, Condition]


class BaseSpeakerSampler:
    """Samples descriptions straight from the base speaker."""

    name = "s0"

    def __init__(self, model, temperature: float = 1.0, chunk: int = 1024):
        self.model = model
        self.temperature = temperature
        self.chunk = chunk

    def sample_texts(self, contexts: list[Context],
                     rng: np.random.Generator) -> list[str]:
        from .speaker import reorder_target_last, s0_sample_batch

        feats = np.stack([reorder_target_last(colors, target)
                          for colors, target, _ in contexts])
        texts: list[str] = []
        for lo in range(0, len(contexts), self.chunk):
            rows = s0_sample_batch(self.model, feats[lo:lo + self.chunk], rng,
                                   self.temperature)
            for ids, _ in rows:
                tokens = self.model.vocab.decode(list(ids))[:-1]
                texts.append(" ".join(tokens))
        return texts


class PragmaticSpeakerSampler:
    """Samples an S0 candidate pool and reweights it by listener informativity.

    For each context, pool_size samples are drawn from the base speaker for
    the actual target; candidate i is then chosen with probability
    proportional to L0(target | candidate_i)^alpha. alpha=0 collapses to base
    speaker sampling.
    """

    name = "s1"

    def __init__(self, l0_model, s0_model, alpha: float = 0.544,
                 pool_size: int = 24, temperature: float = 1.0, chunk: int = 1024):
        self.l0_model = l0_model
        self.s0_model = s0_model
        self.alpha = alpha
        self.pool_size = pool_size
        self.temperature = temperature
        self.chunk = chunk

    def sample_texts(self, contexts: list[Context],
                     rng: np.random.Generator) -> list[str]:
        from .corpus import speaker_tokens_to_listener_tokens
        from .listener import context_features, l0_probs_many
        from .speaker import reorder_target_last, s0_sample_batch

        n = len(contexts)
        pool: list[list[tuple[str, ...]]] = [[] for _ in range(n)]
        feats = np.repeat(np.stack([reorder_target_last(c, t)
                                    for c, t, _ in contexts]), self.pool_size, axis=0)
        for lo in range(0, len(feats), self.chunk):
            rows = s0_sample_batch(self.s0_model, feats[lo:lo + self.chunk], rng,
                                   self.temperature)
            for j, (ids, _) in enumerate(rows):
                ctx_i = (lo + j) // self.pool_size
                tokens = tuple(self.s0_model.vocab.decode(list(ids))[:-1])
                pool[ctx_i].append(tokens)

        # score every non-empty candidate against its own context
        flat_ids, flat_feats, owner = [], [], []
        ctx_feats = [context_features(c) for c, _, _ in contexts]
        for i, cands in enumerate(pool):
            for cand in cands:
                if cand:
                    flat_ids.append(self.l0_model.encode_tokens(
                        speaker_tokens_to_listener_tokens(list(cand))))
                    flat_feats.append(ctx_feats[i])
                    owner.append(i)
        probs = l0_probs_many(self.l0_model, flat_ids, np.stack(flat_feats)) \
            if flat_ids else np.zeros((0, 3))

        texts: list[str] = []
        cursor = 0
        for i, (colors, target, _) in enumerate(contexts):
            cands = [c for c in pool[i] if c]
            k = len(cands)
            scored = probs[cursor:cursor + k, target]
            cursor += k
            if k == 0:
                texts.append("")
                continue
            weights = np.maximum(scored, 1e-300) ** self.alpha
            pick = rng.choice(k, p=weights / weights.sum())
            texts.append(" ".join(cands[pick]))
        return texts


def compare_speakers(s0_sampler, s1_sampler, contexts: list[Context],
                     seed: int = 0) -> dict[str, BehaviorReport]:
    """Behavioral reports for two speakers on the same contexts, side by side."""
    out = {}
    for k, sampler in enumerate((s0_sampler, s1_sampler)):
        rng = np.random.default_rng([seed, k])
        texts = sampler.sample_texts(contexts, rng)
        out[sampler.name] = behavior_metrics(
            [(text, cond) for text, (_, _, cond) in zip(texts, contexts)])
    return out


def condition_mix_contexts(n_per_condition: int, rng: np.random.Generator) -> list[Context]:
    """Synthetic evaluation contexts, n per condition, via the sampler."""
    from .colorspace import sample_contexts

    contexts: list[Context] = []
    for cond in Condition:
        cols, targets = sample_contexts(cond, n_per_condition, rng)
        for i in range(n_per_condition):
            triple = tuple(Color(*cols[i, j]) for j in range(3))
            contexts.append((triple, int(targets[i]), cond))
    return contexts
