"""Pragmatic reasoning: the exact recursive oracle and the neural agents.

The exact oracle works over a finite lexicon (truth table, costs, prior) in
rational arithmetic whenever the rationality exponent is integral and costs
are zero, so textbook examples reproduce exactly. The neural agents derive a
pragmatic speaker from the base listener by normalizing over a sampled
alternative multiset, and pragmatic listeners by inverting speakers through
Bayes' rule; geometric blends mix the resulting distributions.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .colorspace import Color
from .corpus import EOS, preprocess, speaker_tokens_to_listener_tokens
from .errors import VacuousUtterance
from .listener import ListenerModel, context_features, l0_probs_many
from .speaker import SpeakerModel, reorder_target_last, s0_log_probs_batch, s0_sample_batch

PROB_FLOOR = 1e-12

Utterance = tuple[str, ...]


# -- exact oracle ---------------------------------------------------------------


def _as_number(x):
    """Exact Fraction for ints and rational strings, float otherwise."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    return float(x)


@dataclass
class Lexicon:
    """Finite truth-table semantics with utterance costs and a referent prior."""

    utterances: list[str]
    truth: list[list[int]]
    costs: list[float] = field(default_factory=list)
    prior: list = field(default_factory=list)
    referents: list[str] = field(default_factory=list)

    def __post_init__(self):
        n_ref = len(self.truth[0])
        if any(len(row) != n_ref for row in self.truth):
            raise ValueError("ragged truth table")
        if len(self.truth) != len(self.utterances):
            raise ValueError("truth table rows must match utterances")
        if not self.costs:
            self.costs = [0.0] * len(self.utterances)
        if not self.prior:
            self.prior = [Fraction(1, n_ref)] * n_ref
        else:
            self.prior = [_as_number(p) for p in self.prior]
        if not self.referents:
            self.referents = [f"r{i + 1}" for i in range(n_ref)]
        total = sum(self.prior)
        if abs(float(total) - 1.0) > 1e-9:
            raise ValueError("prior must sum to 1")

    @property
    def n_referents(self) -> int:
        return len(self.truth[0])

    def utterance_index(self, u) -> int:
        return u if isinstance(u, int) else self.utterances.index(u)

    @classmethod
    def from_json(cls, source) -> "Lexicon":
        if hasattr(source, "read"):
            obj = json.load(source)
        elif isinstance(source, dict):
            obj = source
        else:
            with open(source, encoding="utf-8") as fh:
                obj = json.load(fh)
        return cls(utterances=list(obj["utterances"]),
                   truth=[list(map(int, row)) for row in obj["truth"]],
                   costs=[float(c) for c in obj.get("costs", [])],
                   prior=list(obj.get("prior", [])),
                   referents=list(obj.get("referents", [])))


def _normalize(weights):
    total = sum(weights)
    if total == 0:
        raise VacuousUtterance("no support to normalize over")
    if isinstance(total, Fraction):
        return [w / total for w in weights]
    return [float(w) / float(total) for w in weights]


def _speaker_weight(l0_val, alpha: float, cost: float):
    """exp(alpha*log l0 - kappa); exact when alpha is integral and cost 0."""
    if l0_val == 0:
        return Fraction(0) if isinstance(l0_val, Fraction) else 0.0
    if isinstance(l0_val, Fraction) and float(alpha).is_integer() and cost == 0:
        return l0_val ** int(alpha)
    return float(l0_val) ** float(alpha) * math.exp(-cost)


def exact_l0(lex: Lexicon, u) -> list:
    """Literal listener: proportional to truth value times prior."""
    ui = lex.utterance_index(u)
    weights = [lex.truth[ui][t] * lex.prior[t] for t in range(lex.n_referents)]
    if sum(weights) == 0:
        raise VacuousUtterance(f"utterance {lex.utterances[ui]!r} is true of nothing")
    return _normalize(weights)


def exact_s1(lex: Lexicon, t: int, alpha: float = 1.0, kappa=None) -> list:
    """Pragmatic speaker: soft-max of informativity minus cost.

    Utterances whose literal listener puts zero mass on t (including vacuous
    utterances) get probability zero.
    """
    costs = lex.costs if kappa is None else list(kappa)
    weights = []
    for ui in range(len(lex.utterances)):
        try:
            l0_val = exact_l0(lex, ui)[t]
        except VacuousUtterance:
            l0_val = 0
        weights.append(_speaker_weight(l0_val, alpha, costs[ui]))
    if sum(weights) == 0:
        raise VacuousUtterance(f"no utterance identifies referent {t}")
    return _normalize(weights)


def exact_l2(lex: Lexicon, u, alpha: float = 1.0, kappa=None) -> list:
    """Pragmatic listener over the pragmatic speaker, via Bayes' rule."""
    ui = lex.utterance_index(u)
    weights = []
    for t in range(lex.n_referents):
        try:
            s1_val = exact_s1(lex, t, alpha, kappa)[ui]
        except VacuousUtterance:
            s1_val = 0
        weights.append(s1_val * lex.prior[t])
    return _normalize(weights)


def exact_s0(lex: Lexicon, t: int, kappa=None) -> list:
    """Literal speaker: truth-gated, cost-weighted choice among utterances."""
    costs = lex.costs if kappa is None else list(kappa)
    zero_cost = all(c == 0 for c in costs)
    weights = []
    for ui in range(len(lex.utterances)):
        truth = lex.truth[ui][t]
        if zero_cost:
            weights.append(Fraction(truth))
        else:
            weights.append(truth * math.exp(-costs[ui]))
    if sum(weights) == 0:
        raise VacuousUtterance(f"no utterance is true of referent {t}")
    return _normalize(weights)


def exact_l1(lex: Lexicon, u, kappa=None) -> list:
    """Pragmatic listener over the literal speaker."""
    ui = lex.utterance_index(u)
    weights = []
    for t in range(lex.n_referents):
        try:
            s0_val = exact_s0(lex, t, kappa)[ui]
        except VacuousUtterance:
            s0_val = 0
        weights.append(s0_val * lex.prior[t])
    return _normalize(weights)


# -- configuration ----------------------------------------------------------------


@dataclass
class PragmaticsConfig:
    """All pragmatic-reasoning knobs in one place (tuned defaults)."""

    alpha: float = 1.0            # exact-oracle rationality
    m: int = 8                    # speaker samples per target index
    n: int = 8                    # alternative-set replicates to average
    beta_a: float = 0.492         # blend weight of L0 against L1
    beta_b: float = -0.15         # blend weight of L0 against L2
    gamma: float = 0.491          # final blend weight of La against Lb
    alpha_neural: float = 0.544   # pragmatic-speaker exponent over samples

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


# -- neural pragmatic agents --------------------------------------------------------


@dataclass
class AlternativeSet:
    """Multiset of candidate utterances; duplicates keep their multiplicity."""

    counts: Counter
    observed: Utterance | None = None

    @classmethod
    def from_samples(cls, samples: list[Utterance],
                     observed: Utterance | None = None) -> "AlternativeSet":
        counts = Counter(samples)
        if observed is not None:
            counts[observed] += 1
        return cls(counts, observed)

    def types(self) -> list[Utterance]:
        return list(self.counts)

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class NeuralS1Table:
    """Pragmatic-speaker distribution over an alternative multiset.

    probs[i, t] is the probability of utterance type i given target t,
    multiplicity already folded in; columns sum to 1.
    """

    utterances: list[Utterance]
    probs: np.ndarray

    def prob_of(self, u: Utterance) -> np.ndarray:
        return self.probs[self.utterances.index(u)]


def s1_table_from_probs(l0_probs: np.ndarray, counts: np.ndarray,
                        alpha: float) -> np.ndarray:
    """Column-normalized L0^alpha weights; invariant to scaling an L0 column."""
    powered = np.maximum(l0_probs, 1e-300) ** alpha
    weighted = counts[:, None] * powered
    return weighted / weighted.sum(axis=0, keepdims=True)


def _listener_ids_for(model: ListenerModel, utterances: list[Utterance]) -> list[list[int]]:
    return [model.encode_tokens(speaker_tokens_to_listener_tokens(list(u)))
            for u in utterances]


def _as_speaker_utterance(u) -> Utterance:
    """Raw text or token sequence -> speaker-mode token tuple (no end token)."""
    if isinstance(u, str):
        return tuple(preprocess(u, "speaker"))
    tokens = tuple(u)
    return tokens[:-1] if tokens and tokens[-1] == EOS else tokens


def neural_s1(l0_model: ListenerModel, u: Utterance, alt: AlternativeSet,
              colors: tuple[Color, Color, Color],
              alpha_neural: float = 0.544) -> NeuralS1Table:
    """Pragmatic speaker over the alternative multiset (observed u included)."""
    counts = Counter(alt.counts)
    if counts[u] == 0:
        counts[u] += 1
    types = list(counts)
    probs = l0_probs_many(l0_model, _listener_ids_for(l0_model, types),
                          context_features(colors))
    table = s1_table_from_probs(probs, np.array([counts[t] for t in types],
                                                dtype=np.float64), alpha_neural)
    return NeuralS1Table(types, table)


def _sample_alternatives(s0_model: SpeakerModel, colors, m: int, n: int,
                         rng: np.random.Generator) -> list[list[Utterance]]:
    """n replicates of m speaker samples per target index (3*m each).

    Bare end-token samples are dropped; the listener cannot score an empty
    utterance, and the observed utterance keeps every set nonempty.
    """
    replicates: list[list[Utterance]] = [[] for _ in range(n)]
    for target in range(3):
        feats = np.repeat(reorder_target_last(colors, target)[None], n * m, axis=0)
        rows = s0_sample_batch(s0_model, feats, rng)
        for r in range(n):
            for ids, _ in rows[r * m:(r + 1) * m]:
                tokens = tuple(s0_model.vocab.decode(list(ids))[:-1])  # drop </s>
                if tokens:
                    replicates[r].append(tokens)
    return replicates


def neural_l2(l0_model: ListenerModel, s0_model: SpeakerModel, u,
              colors: tuple[Color, Color, Color], cfg: PragmaticsConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Pragmatic listener over sampled alternative sets, averaged n times.

    Per replicate: draw m speaker samples per target index, add the observed
    utterance, form the pragmatic speaker over that multiset, and renormalize
    its observed-utterance row across targets. The n replicate distributions
    are averaged arithmetically.
    """
    observed = _as_speaker_utterance(u)
    replicates = _sample_alternatives(s0_model, colors, cfg.m, cfg.n, rng)

    all_types = sorted({t for rep in replicates for t in rep} | {observed})
    probs = l0_probs_many(l0_model, _listener_ids_for(l0_model, all_types),
                          context_features(colors))
    index = {t: i for i, t in enumerate(all_types)}

    out = np.zeros(3)
    for rep in replicates:
        counts = Counter(rep)
        counts[observed] += 1
        types = list(counts)
        rows = np.array([index[t] for t in types])
        table = s1_table_from_probs(probs[rows],
                                    np.array([counts[t] for t in types],
                                             dtype=np.float64),
                                    cfg.alpha_neural)
        s1_row = table[types.index(observed)]
        out += s1_row / s1_row.sum()
    return out / cfg.n


def neural_l1(s0_model: SpeakerModel, u,
              colors: tuple[Color, Color, Color]) -> np.ndarray:
    """Speaker-based listener: score u under each candidate target, normalize.

    Identical context colors give the uniform distribution by symmetry.
    """
    tokens = list(_as_speaker_utterance(u)) + [EOS]
    ids = s0_model.vocab.encode(tokens)
    feats = np.stack([reorder_target_last(colors, t) for t in range(3)])
    log_probs = s0_log_probs_batch(s0_model, [ids, ids, ids], feats)
    shifted = log_probs - log_probs.max()
    probs = np.exp(shifted)
    return probs / probs.sum()


def blend(p: np.ndarray, q: np.ndarray, w: float) -> np.ndarray:
    """Renormalized geometric mixture p^w * q^(1-w), floored at 1e-12."""
    log_p = np.log(np.maximum(np.asarray(p, dtype=np.float64), PROB_FLOOR))
    log_q = np.log(np.maximum(np.asarray(q, dtype=np.float64), PROB_FLOOR))
    mix = w * log_p + (1.0 - w) * log_q
    mix -= mix.max()
    out = np.exp(mix)
    return out / out.sum()


AGENT_NAMES = ("l0", "l1", "l2", "la", "lb", "le")


def compute_agents(l0_model: ListenerModel, s0_model: SpeakerModel, u,
                   colors: tuple[Color, Color, Color], cfg: PragmaticsConfig,
                   rng: np.random.Generator) -> dict[str, np.ndarray]:
    """All six listener distributions for one trial, sharing intermediate work."""
    listener_tokens = preprocess(u, "listener") if isinstance(u, str) else \
        speaker_tokens_to_listener_tokens(list(u))
    l0 = l0_probs_many(l0_model, [l0_model.encode_tokens(listener_tokens)],
                       context_features(colors))[0]
    l1 = neural_l1(s0_model, u, colors)
    l2 = neural_l2(l0_model, s0_model, u, colors, cfg, rng)
    la = blend(l0, l1, cfg.beta_a)
    lb = blend(l0, l2, cfg.beta_b)
    le = blend(la, lb, cfg.gamma)
    return {"l0": l0, "l1": l1, "l2": l2, "la": la, "lb": lb, "le": le}
