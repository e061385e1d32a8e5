"""Noise-robust training, ensemble distillation, self-training and the
three-stage weak -> weak -> strong continual pipeline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    Corpus,
    EntitySpan,
    Sentence,
    TagScheme,
    ValidationError,
    encode_bio_indices,
)
from .metrics import PRFReport, span_prf
from .model import (
    ModelConfig,
    TaggerParams,
    backward_batch,
    batch_ids,
    build_vocab,
    forward,
    forward_batch,
    init_params,
    predict_tags,
    reinit_head,
    tags_from_probs,
)
from .weaklabel import harvest_gazetteers

logger = logging.getLogger(__name__)

PHASES = ("noise_robust", "ensemble", "self_train")


@dataclass(frozen=True)
class TrainConfig:
    q: float = 0.7
    tau: float = 0.7
    K: int = 5
    epochs_per_phase: int = 3
    learning_rate: float = 2e-3
    batch_size: int = 32
    self_train_rounds: int = 1
    gamma: float = 0.9
    seed: int = 0
    # threshold used in place of tau on strong-quality corpora (0 disables removal)
    strong_tau: float = 0.0
    # fraction of input tokens replaced by <unk> during training so the UNK row is learned
    unk_rate: float = 0.05
    clip_norm: float = 5.0
    aug_drop_rate: float = 0.1
    strict_selection: bool = False
    distill_epochs: Optional[int] = None
    # epochs trained on all labels before removal starts (1 = only the first)
    removal_start_epoch: int = 1
    # epochs for strong-quality stages (None: epochs_per_phase); small clean sets need more passes
    strong_epochs: Optional[int] = None
    # lower bound on optimizer updates per phase; small corpora get extra epochs
    min_steps: int = 0
    # removal weights from each member's own predictions, or from the ensemble average
    removal_source: str = "member"

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValidationError(f"q must lie in (0, 1], got {self.q}")
        for name in ("tau", "gamma", "strong_tau", "unk_rate", "aug_drop_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.epochs_per_phase < 0 or self.self_train_rounds < 0:
            raise ValidationError("epochs_per_phase and self_train_rounds must be >= 0")
        if self.strong_epochs is not None and self.strong_epochs < 0:
            raise ValidationError("strong_epochs must be >= 0")
        if self.removal_source not in ("member", "ensemble"):
            raise ValidationError(f"removal_source must be member or ensemble, got {self.removal_source!r}")
        if self.min_steps < 0:
            raise ValidationError("min_steps must be >= 0")
        if self.removal_start_epoch < 1:
            raise ValidationError("removal_start_epoch must be >= 1")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValidationError("batch_size must be >= 1 and learning_rate > 0")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _flat(preds, labels, weights=None):
    if isinstance(preds, np.ndarray):
        P = preds.reshape(-1, preds.shape[-1])
        y = np.asarray(labels).reshape(-1)
        w = None if weights is None else np.asarray(weights, dtype=P.dtype).reshape(-1)
    else:
        P = np.concatenate([np.asarray(p).reshape(-1, np.shape(p)[-1]) for p in preds]) if len(preds) else np.zeros((0, 1))
        y = np.concatenate([np.asarray(l).reshape(-1) for l in labels]).astype(np.int64) if len(labels) else np.zeros(0, np.int64)
        w = None if weights is None else (
            np.concatenate([np.asarray(x, dtype=float).reshape(-1) for x in weights]) if len(weights) else np.zeros(0))
    if len(y) != len(P) or (w is not None and len(w) != len(P)):
        raise ValidationError("predictions, labels and weights are not aligned")
    return P, y.astype(np.int64), w


def gce_loss(preds, labels, weights, q: float) -> float:
    """Generalized cross entropy  sum_i w_i (1 - f_{i,y_i}^q) / q.

    ``preds`` is an (..., C) probability array or a list of per-sentence
    (L, C) arrays; ``labels``/``weights`` align with its leading axes.
    """
    if not 0.0 < q <= 1.0:
        raise ValidationError(f"q must lie in (0, 1], got {q}")
    P, y, w = _flat(preds, labels, weights)
    fy = P[np.arange(len(y)), y]
    return float(np.sum(w * (1.0 - fy ** q) / q))


def gce_grad_logits(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray, q: float) -> np.ndarray:
    """d gce_loss / d logits for softmax outputs ``probs`` (..., C).

    Equals -w p_y^q (onehot(y) - p); rows with w = 0 are exactly zero.
    """
    fy = np.take_along_axis(probs, labels[..., None], axis=-1)
    coef = -(weights[..., None] * fy ** q)
    g = -probs * coef
    np.put_along_axis(g, labels[..., None], np.take_along_axis(g, labels[..., None], axis=-1) + coef, axis=-1)
    return g


def cross_entropy(preds, labels, weights=None) -> float:
    P, y, w = _flat(preds, labels, weights)
    if w is None:
        w = np.ones(len(y))
    return float(-np.sum(w * np.log(P[np.arange(len(y)), y])))


def compute_label_weights(preds, labels, tau: float):
    """1 where the model gives the given label probability >= tau, else 0.

    Mirrors the structure of ``preds`` (one array or a list of per-sentence arrays).
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"tau must lie in [0, 1], got {tau}")
    if isinstance(preds, np.ndarray):
        fy = np.take_along_axis(preds, np.asarray(labels)[..., None], axis=-1)[..., 0]
        return (fy >= tau).astype(preds.dtype)
    return [compute_label_weights(p, np.asarray(l), tau) for p, l in zip(preds, labels)]


def kl_divergence(teacher: np.ndarray, student: np.ndarray) -> np.ndarray:
    """Row-wise KL(teacher || student) in nats, with 0 log 0 = 0."""
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(t > 0, t * (np.log(t) - np.log(s)), 0.0)
    return terms.sum(axis=-1)


def sharpen(p) -> np.ndarray:
    """Square and renormalise: t_j = p_j^2 / sum_k p_k^2 (row-wise for 2-D input)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValidationError("sharpen expects normalized probability vectors")
    sq = p * p
    return sq / sq.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, arrays: dict, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.arrays = arrays
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.arrays.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def _clip(grads: dict, max_norm: float):
    norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _pad(rows: Sequence[np.ndarray], T: int, fill=0):
    first = np.asarray(rows[0])
    out = np.full((len(rows), T, *first.shape[1:]), fill, dtype=first.dtype)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def phase_epochs(config: TrainConfig, n: int, epochs: int) -> int:
    """``epochs``, raised so that a phase over ``n`` sentences makes >= ``config.min_steps`` updates."""
    if n == 0 or config.min_steps <= 0 or epochs == 0:
        return epochs
    per_epoch = -(-n // config.batch_size)
    return max(epochs, -(-config.min_steps // per_epoch))


class _Fitter:
    """Mini-batch Adam over ``token_lists``, one epoch per :meth:`run_epoch` call.

    ``grad_fn(batch_idx, probs, mask)`` returns (summed loss, dL/dlogits) for
    the padded batch; it is normalised here by the number of real tokens.
    """

    def __init__(self, params: TaggerParams, token_lists, grad_fn, config: TrainConfig, rng):
        self.params, self.tokens, self.grad_fn = params, token_lists, grad_fn
        self.config, self.rng = config, rng
        self.opt = Adam(params.arrays(), config.learning_rate)

    def run_epoch(self) -> float:
        """Train one epoch; returns the mean per-token loss."""
        params, config, rng = self.params, self.config, self.rng
        n = len(self.tokens)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            ids, lengths = batch_ids(params.vocab, [self.tokens[i] for i in idx], rng, config.unk_rate)
            mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
            probs, cache = forward_batch(params, ids, lengths)
            loss, dlogits = self.grad_fn(idx, probs, mask)
            ntok = int(mask.sum())
            dlogits = (dlogits / ntok).astype(probs.dtype, copy=False)
            grads = backward_batch(params, cache, dlogits)
            _clip(grads, config.clip_norm)
            self.opt.step(grads)
            total += loss
            count += ntok
        return total / max(count, 1)


def _fit(params: TaggerParams, token_lists, grad_fn, config: TrainConfig, epochs: int, rng) -> list[float]:
    """Train ``epochs`` (stretched by ``config.min_steps``); returns per-epoch mean losses."""
    fitter = _Fitter(params, token_lists, grad_fn, config, rng)
    return [fitter.run_epoch() for _ in range(phase_epochs(config, len(token_lists), epochs))]


# ---------------------------------------------------------------------------
# noise-robust training
# ---------------------------------------------------------------------------

def _labels(corpus: Corpus, source: str) -> list[np.ndarray]:
    return [np.asarray(encode_bio_indices(s.spans(source), len(s), corpus.scheme), dtype=np.int64)
            for s in corpus]


def _check_trainable(params: TaggerParams, corpus: Corpus):
    if len(corpus) == 0:
        raise ValidationError("cannot train on an empty corpus")
    if params.scheme != corpus.scheme:
        raise ValidationError(
            f"model head is bound to {params.scheme.types}, corpus uses {corpus.scheme.types}; "
            "map the corpus or reinitialise the head first")


class _NoiseRobustRun:
    """State of one GCE training run: parameters, labels, removal weights, optimizer."""

    def __init__(self, init: TaggerParams, corpus: Corpus, config: TrainConfig, source: str):
        self.config = config
        self.params = init.copy()
        self.tokens = [s.tokens for s in corpus]
        self.labels = _labels(corpus, source)
        self.weights = [np.ones(len(l), dtype=self.params.dtype) for l in self.labels]
        self.epochs = phase_epochs(config, len(corpus), config.epochs_per_phase)
        # a schedule stretched by min_steps delays removal by the same factor
        start = config.removal_start_epoch
        if config.epochs_per_phase and self.epochs > config.epochs_per_phase:
            start = -(-start * self.epochs // config.epochs_per_phase)
        self.removal_start = start
        self.history: list[float] = []
        self.fitter = _Fitter(self.params, self.tokens, self._grad, config,
                              np.random.default_rng(config.seed))

    def removes_at(self, epoch: int) -> bool:
        return epoch >= self.removal_start and self.config.tau > 0.0

    def set_weights(self, probs) -> float:
        """Recompute removal weights from ``probs``; returns the kept fraction."""
        self.weights[:] = compute_label_weights(probs, self.labels, self.config.tau)
        return sum(float(w.sum()) for w in self.weights) / sum(len(w) for w in self.weights)

    def _grad(self, idx, probs, mask):
        q = self.config.q
        T = probs.shape[1]
        y = _pad([self.labels[i] for i in idx], T)
        w = _pad([self.weights[i] for i in idx], T) * mask
        fy = np.take_along_axis(probs, y[..., None], axis=-1)[..., 0]
        loss = float(np.sum(w * (1.0 - fy ** q) / q))
        return loss, gce_grad_logits(probs, y, w.astype(probs.dtype), q)

    def run_epoch(self):
        self.history.append(self.fitter.run_epoch())


def _log_kept(log, epoch, kept, member=None):
    logger.debug("epoch %d: keeping %.1f%% of labels", epoch, 100 * kept)
    if log is not None:
        entry = {"epoch": epoch, "kept_fraction": kept}
        if member is not None:
            entry["member"] = member
        log.append(entry)


def train_noise_robust(init: TaggerParams, corpus: Corpus, config: TrainConfig,
                       label_source: Optional[str] = None, log: Optional[list] = None) -> TaggerParams:
    """GCE training with per-epoch noisy-label removal.

    Token weights are all 1 for the first ``config.removal_start_epoch``
    epochs (default: just the first); afterwards each epoch starts
    by re-predicting the corpus and keeping only tokens whose given label has
    probability >= ``config.tau``.
    """
    _check_trainable(init, corpus)
    run = _NoiseRobustRun(init, corpus, config, label_source or corpus.default_source)
    for epoch in range(run.epochs):
        if run.removes_at(epoch):
            _log_kept(log, epoch, run.set_weights(forward(run.params, run.tokens)))
        run.run_epoch()
    if log is not None:
        log.append({"phase": "noise_robust", "loss": run.history})
    return run.params


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------

def _train_soft(params: TaggerParams, token_lists, targets, masks, config: TrainConfig,
                epochs: int, rng) -> list[float]:
    """Minimise mean KL(target || model) over tokens where ``masks`` is true."""

    def grad_fn(idx, probs, mask):
        T = probs.shape[1]
        t = _pad([targets[i] for i in idx], T)
        m = _pad([masks[i] for i in idx], T).astype(bool) & mask
        loss = float(kl_divergence(t[m], probs[m]).sum())
        g = (probs - t) * m[..., None]
        # rescale so the mean is over selected tokens rather than all tokens
        scale = mask.sum() / max(int(m.sum()), 1)
        return loss * scale, g * scale

    return _fit(params, token_lists, grad_fn, config, epochs, rng)


def teacher_distribution(members: Sequence[TaggerParams], sentences) -> list[np.ndarray]:
    """Per-token arithmetic mean of member probability rows."""
    outs = [forward(m, sentences) for m in members]
    return [np.mean([o[i] for o in outs], axis=0) for i in range(len(outs[0]))]


def train_ensemble(init: TaggerParams, corpus: Corpus, config: TrainConfig,
                   label_source: Optional[str] = None, log: Optional[list] = None):
    """Train K seed-varied members from ``init`` and distil them into a student.

    Member k uses seed ``config.seed + k``. With ``removal_source="member"``
    each member computes its removal weights from its own predictions; with
    ``"ensemble"`` the members train in lockstep and share weights computed
    from their averaged predictions. The student starts from ``init`` and
    minimises mean KL(teacher || student) over all corpus tokens.
    Returns (members, student).
    """
    _check_trainable(init, corpus)
    source = label_source or corpus.default_source
    member_cfgs = [replace(config, seed=config.seed + k) for k in range(1, config.K + 1)]
    if config.removal_source == "member":
        members = [train_noise_robust(init, corpus, c, source, log) for c in member_cfgs]
    else:
        # lockstep: every epoch's weights come from the members' averaged predictions
        runs = [_NoiseRobustRun(init, corpus, c, source) for c in member_cfgs]
        for epoch in range(runs[0].epochs):
            if runs[0].removes_at(epoch):
                avg = teacher_distribution([r.params for r in runs], runs[0].tokens)
                for r in runs:
                    kept = r.set_weights(avg)
                _log_kept(log, epoch, kept, member="ensemble")
            for r in runs:
                r.run_epoch()
        if log is not None:
            log.extend({"phase": "noise_robust", "loss": r.history} for r in runs)
        members = [r.params for r in runs]
    tokens = [s.tokens for s in corpus]
    teacher = teacher_distribution(members, tokens)
    student = init.copy()
    masks = [np.ones(len(t), dtype=bool) for t in tokens]
    epochs = config.distill_epochs if config.distill_epochs is not None else config.epochs_per_phase
    hist = _train_soft(student, tokens, teacher, masks, config, epochs, np.random.default_rng(config.seed))
    if log is not None:
        log.append({"phase": "distill", "loss": hist})
    return members, student


# ---------------------------------------------------------------------------
# augmentation and self-training
# ---------------------------------------------------------------------------

def _as_phrases(gazetteers: Mapping) -> dict:
    return {t: [tuple(p.split()) if isinstance(p, str) else tuple(p) for p in v if p]
            for t, v in gazetteers.items()}


def augment_with_alignment(sentence: Sentence, gazetteers: Mapping, drop_rate: float, seed,
                           replace_prob: float = 0.5, source: str = "gold"):
    """Augmented copy of ``sentence`` plus, per new token, (source index, head-only flag).

    A new token's target should come from the source token's row; the flag
    marks inside tokens of a replacement whose original entity was a single
    token, whose row must have its B-/I- columns swapped.
    """
    gaz = _as_phrases(gazetteers)
    rng = np.random.default_rng(seed)
    spans = {sp.start: sp for sp in sentence.spans(source)}
    tokens, new_spans, align = [], [], []
    i, n = 0, len(sentence)
    while i < n:
        sp = spans.get(i)
        if sp is not None:
            u = rng.random()
            phrases = gaz.get(sp.etype) or []
            orig_len = sp.end - sp.start
            if u < replace_prob and phrases:
                phrase = phrases[rng.integers(len(phrases))]
                for k in range(len(phrase)):
                    if k == 0:
                        align.append((sp.start, False))
                    elif orig_len > 1:
                        align.append((sp.start + min(k, orig_len - 1), False))
                    else:
                        align.append((sp.start, True))
            else:
                phrase = sentence.tokens[sp.start:sp.end]
                align.extend((j, False) for j in range(sp.start, sp.end))
            new_spans.append(EntitySpan(len(tokens), len(tokens) + len(phrase), sp.etype))
            tokens.extend(phrase)
            i = sp.end
        else:
            if not (drop_rate > 0 and rng.random() < drop_rate):
                tokens.append(sentence.tokens[i])
                align.append((i, False))
            i += 1
    if not tokens:
        return sentence, [(j, False) for j in range(n)]
    return Sentence(tuple(tokens)).with_spans(source, new_spans), align


def augment_sentence(sentence: Sentence, gazetteers: Mapping, drop_rate: float, seed,
                     replace_prob: float = 0.5, source: str = "gold") -> Sentence:
    """Label-preserving augmentation: same-type entity substitution plus O-token dropout."""
    return augment_with_alignment(sentence, gazetteers, drop_rate, seed, replace_prob, source)[0]


def _bi_swap(scheme: TagScheme) -> np.ndarray:
    perm = np.arange(scheme.label_count)
    perm[1::2], perm[2::2] = np.arange(2, scheme.label_count, 2), np.arange(1, scheme.label_count, 2)
    return perm


def self_train(params: TaggerParams, corpus: Corpus, config: TrainConfig,
               gazetteers: Optional[Mapping] = None, log: Optional[list] = None) -> TaggerParams:
    """Iterative self-training on the model's own sharpened predictions.

    Each round freezes a snapshot of predictions on the original sentences,
    keeps tokens whose top probability reaches ``config.gamma`` (strictly
    exceeds it with ``strict_selection``), and fits the original and one
    augmented view of every sentence to the sharpened snapshot by KL.
    Corpus labels are ignored; replacement phrases come from ``gazetteers``
    or, when absent, from the model's own predicted entities.
    """
    params = params.copy()
    sents = [Sentence(s.tokens) for s in corpus]
    if not sents:
        return params
    swap = _bi_swap(params.scheme)
    for r in range(config.self_train_rounds):
        probs = forward(params, sents)
        top = [p.max(axis=-1) for p in probs]
        sel = [t > config.gamma if config.strict_selection else t >= config.gamma for t in top]
        n_sel = sum(int(s.sum()) for s in sel)
        if n_sel == 0:
            logger.info("self-train round %d: no token reaches gamma=%.3f, skipping", r, config.gamma)
            if log is not None:
                log.append({"phase": "self_train", "round": r, "selected": 0, "loss": []})
            continue
        targets = [sharpen(p.astype(np.float64)).astype(params.dtype) for p in probs]
        predicted = [s.with_spans("gold", tags_from_probs(p, params.scheme)) for s, p in zip(sents, probs)]
        gaz = gazetteers
        if gaz is None:
            gaz = harvest_gazetteers(Corpus(tuple(predicted), params.scheme, "weak"), "gold")
        tokens, tgt, masks = [], [], []
        for i, s in enumerate(predicted):
            tokens.append(s.tokens)
            tgt.append(targets[i])
            masks.append(sel[i])
            aug, align = augment_with_alignment(s, gaz, config.aug_drop_rate, [config.seed, r, i])
            src = np.array([a for a, _ in align])
            flip = np.array([f for _, f in align])
            rows = targets[i][src]
            if flip.any():
                rows[flip] = rows[flip][:, swap]
            tokens.append(aug.tokens)
            tgt.append(rows)
            masks.append(sel[i][src])
        hist = _train_soft(params, tokens, tgt, masks, config, config.epochs_per_phase,
                           np.random.default_rng([config.seed, r]))
        logger.info("self-train round %d: %d/%d tokens selected, loss %s", r, n_sel,
                    sum(len(t) for t in top), [round(h, 5) for h in hist])
        if log is not None:
            log.append({"phase": "self_train", "round": r, "selected": n_sel, "loss": hist})
    return params


# ---------------------------------------------------------------------------
# label schemes and the staged pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelMapping:
    source: TagScheme
    target: TagScheme
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        m = dict(self.mapping)
        for s, t in m.items():
            if s not in self.source:
                raise ValidationError(f"mapping source type {s!r} not in {self.source.types}")
            if t not in self.target:
                raise ValidationError(f"mapping target type {t!r} not in {self.target.types}")
        object.__setattr__(self, "mapping", m)


def map_label_scheme(corpus: Corpus, mapping: LabelMapping) -> Corpus:
    """Rename spans of mapped types into the target scheme and drop the rest."""
    if corpus.scheme != mapping.source:
        raise ValidationError(f"corpus scheme {corpus.scheme.types} is not the mapping source")
    m = mapping.mapping

    def conv(spans):
        if spans is None:
            return None
        return [EntitySpan(sp.start, sp.end, m[sp.etype]) for sp in spans if sp.etype in m]

    sents = [Sentence(s.tokens, conv(s.gold_spans), conv(s.weak_spans), s.origin_language) for s in corpus]
    return Corpus(tuple(sents), mapping.target, corpus.quality, corpus.domain_tag)


@dataclass(frozen=True)
class Stage:
    corpus: Corpus
    phases: frozenset = frozenset(PHASES)
    mapping: Optional[LabelMapping] = None
    name: str = ""

    def __post_init__(self):
        phases = frozenset(self.phases)
        object.__setattr__(self, "phases", phases)
        if not phases or not phases <= set(PHASES):
            raise ValidationError(f"stage phases must be a non-empty subset of {PHASES}, got {sorted(phases)}")
        if self.corpus.quality == "strong" and phases != {"noise_robust"}:
            raise ValidationError(
                f"strong stage {self.name or self.corpus.domain_tag!r} may only use the noise_robust phase")
        if self.corpus.quality == "unlabeled" and phases != {"self_train"}:
            raise ValidationError("an unlabeled stage can only self-train")

    @property
    def quality(self) -> str:
        return self.corpus.quality

    def training_corpus(self) -> Corpus:
        return map_label_scheme(self.corpus, self.mapping) if self.mapping else self.corpus


@dataclass(frozen=True)
class StagePlan:
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValidationError("a stage plan needs at least one stage")


@dataclass
class StageResult:
    stage: int
    name: str
    corpus: str
    report: Optional[PRFReport]


def _evaluate(params: TaggerParams, corpus: Corpus, source: str = "gold") -> PRFReport:
    pred = predict_tags(params, corpus)
    return span_prf(pred, corpus, "weak", source)


def run_controster(plan: StagePlan, config: TrainConfig, model_config: ModelConfig = ModelConfig(),
                   eval_corpus: Optional[Corpus] = None, init: Optional[TaggerParams] = None,
                   log: Optional[list] = None, vocab=None, seed_offset: int = 0):
    """Run the stages of ``plan`` in order, carrying the encoder between them.

    Weak stages run their phases (ensemble distillation, which trains its
    members noise-robustly, then self-training); strong stages run
    noise-robust training only with threshold ``config.strong_tau``. The
    head is re-initialised whenever a stage's scheme differs from the
    current head's, and reused otherwise. Stage ``i`` (0-based) trains with
    seed ``config.seed + 1000 * (i + seed_offset)``; a plan resumed from a
    saved backbone passes the number of stages already run as ``seed_offset``.
    The vocabulary is ``vocab``, else built from all stage corpora.

    Returns (params, [StageResult per stage]). Each stage is scored on
    ``eval_corpus`` when its scheme matches, else on its own training labels.
    """
    if init is None and vocab is None:
        vocab = build_vocab([st.corpus for st in plan.stages], model_config.min_freq, model_config.lowercase)
    params = init
    results = []
    for i, stage in enumerate(plan.stages):
        corpus = stage.training_corpus()
        cfg = replace(config, seed=config.seed + 1000 * (i + seed_offset))
        if stage.quality == "strong":
            cfg = replace(cfg, tau=config.strong_tau)
            if config.strong_epochs is not None:
                cfg = replace(cfg, epochs_per_phase=config.strong_epochs)
        if params is None:
            params = init_params(vocab, corpus.scheme, model_config, seed=cfg.seed)
        elif params.scheme != corpus.scheme:
            params = reinit_head(params, corpus.scheme, seed=cfg.seed, o_bias=model_config.o_bias)
        logger.info("stage %d (%s): %d sentences, quality %s, phases %s", i + 1 + seed_offset,
                    stage.name or corpus.domain_tag, len(corpus), stage.quality, sorted(stage.phases))
        if "ensemble" in stage.phases:
            _, params = train_ensemble(params, corpus, cfg, log=log)
        elif "noise_robust" in stage.phases:
            params = train_noise_robust(params, corpus, cfg, log=log)
        if "self_train" in stage.phases:
            params = self_train(params, corpus, cfg, log=log)
        if eval_corpus is not None and eval_corpus.scheme == params.scheme:
            report, evaluated = _evaluate(params, eval_corpus), eval_corpus.domain_tag
        elif corpus.quality != "unlabeled":
            report, evaluated = _evaluate(params, corpus, corpus.default_source), corpus.domain_tag
        else:
            report, evaluated = None, corpus.domain_tag
        results.append(StageResult(i + 1 + seed_offset, stage.name or corpus.domain_tag, evaluated, report))
    return params, results


def stage_log_rows(results: Sequence[StageResult]) -> list[list]:
    """CSV rows: stage, name, corpus, type, precision, recall, f1, support."""
    rows = [["stage", "name", "corpus", "type", "precision", "recall", "f1", "support"]]
    for r in results:
        if r.report is None:
            continue
        for t, (p, rec, f, n) in r.report.per_type.items():
            rows.append([r.stage, r.name, r.corpus, t, f"{p:.2f}", f"{rec:.2f}", f"{f:.2f}", n])
        p, rec, f = r.report.weighted_avg
        rows.append([r.stage, r.name, r.corpus, "Weighted Avg", f"{p:.2f}", f"{rec:.2f}", f"{f:.2f}",
                     r.report.support])
    return rows
