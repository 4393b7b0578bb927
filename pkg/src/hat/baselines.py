"""Baselines: HITS, a user-level LDA, and a per-post topic model.

The LDA variant treats each user's concatenated posts as one document and
runs collapsed Gibbs sampling. The per-post variant samples one topic per
post plus a per-token switch between that topic and a corpus-wide
background distribution. Both share the HAT package's determinism
contract: all randomness is precomputed uniforms from one seeded stream.

perplexity() scores held-out posts under any of the package's models:
token-level mixture for LDA, exact post-level marginals (one topic per
post) for the HAT and per-post models.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from hat import _kernels
from hat.corpus import Dataset, FollowGraph
from hat.errors import CorpusFormatError
from hat.model import (
    PROB_FLOOR,
    ModelParams,
    _read_header,
    _read_matrix,
    _write_matrix,
)

HITS_MAGIC = "HITSMODEL v1"
LDA_MAGIC = "LDAMODEL v1"
TLDA_MAGIC = "TLDAMODEL v1"


@dataclass(frozen=True)
class HitsScores:
    """Topic-free hub/authority scores, each L2-normalized."""

    hub: np.ndarray
    authority: np.ndarray

    def __post_init__(self):
        for name in ("hub", "authority"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.hub.shape != self.authority.shape or self.hub.ndim != 1:
            raise ValueError("hub/authority must be equal-length vectors")

    @property
    def n_users(self) -> int:
        return self.hub.shape[0]


@dataclass(frozen=True)
class LdaModel:
    """User-document LDA estimates: smoothed user_topic and topic_word rows."""

    user_topic: np.ndarray
    topic_word: np.ndarray
    alpha: float
    gamma: float

    def __post_init__(self):
        for name in ("user_topic", "topic_word"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.user_topic.shape[1] != self.topic_word.shape[0]:
            raise ValueError("topic count mismatch")

    @property
    def n_topics(self) -> int:
        return self.topic_word.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_topic.shape[0]

    @property
    def n_words(self) -> int:
        return self.topic_word.shape[1]


@dataclass(frozen=True)
class TwitterLdaModel:
    """Per-post topic model estimates with a background word channel.

    pi is the posterior mean probability that a token is topical; with
    background=False fitting, pi is 1 and background is uniform, which
    makes the model an exact per-post LDA.
    """

    user_topic: np.ndarray
    topic_word: np.ndarray
    background: np.ndarray
    pi: float
    alpha: float
    gamma: float

    def __post_init__(self):
        for name in ("user_topic", "topic_word", "background"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.user_topic.shape[1] != self.topic_word.shape[0]:
            raise ValueError("topic count mismatch")
        if self.background.shape != (self.topic_word.shape[1],):
            raise ValueError("background shape mismatch")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError("pi must be in [0, 1]")

    @property
    def n_topics(self) -> int:
        return self.topic_word.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_topic.shape[0]

    @property
    def n_words(self) -> int:
        return self.topic_word.shape[1]


def hits(graph: FollowGraph, n_iters: int = 100, tol: float = 0.0) -> HitsScores:
    """Classic mutually reinforcing hub/authority scores.

    Starts from a uniform hub vector and alternates authority = in-sum of
    hubs, hub = out-sum of authorities, L2-normalizing after each half
    step. Requires at least one edge. Stops early once one full sweep
    moves neither vector by more than tol (max-abs); tol=0 always runs
    all n_iters.
    """
    if graph.n_users < 1:
        raise ValueError("graph has no users")
    if graph.n_edges < 1:
        raise ValueError("HITS needs at least one edge")
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    n = graph.n_users
    src = graph.edges[:, 0]
    dst = graph.edges[:, 1]
    h = np.full(n, 1.0 / np.sqrt(n))
    a = np.zeros(n)
    for _ in range(n_iters):
        a_new = np.bincount(dst, weights=h[src], minlength=n)
        a_new /= np.linalg.norm(a_new)
        h_new = np.bincount(src, weights=a_new[dst], minlength=n)
        h_new /= np.linalg.norm(h_new)
        change = max(
            float(np.abs(a_new - a).max()), float(np.abs(h_new - h).max())
        )
        a, h = a_new, h_new
        if change < tol:
            break
    return HitsScores(hub=h, authority=a)


def _flatten_posts(dataset: Dataset):
    authors = np.array([p.author for p in dataset.posts], dtype=np.int32)
    lengths = np.array([p.tokens.size for p in dataset.posts], dtype=np.int64)
    ptr = np.zeros(dataset.n_posts + 1, dtype=np.int64)
    np.cumsum(lengths, out=ptr[1:])
    tokens = (
        np.concatenate([p.tokens for p in dataset.posts]).astype(np.int32)
        if dataset.n_posts
        else np.empty(0, dtype=np.int32)
    )
    return authors, ptr, tokens


def fit_lda(
    dataset: Dataset,
    n_topics: int,
    alpha: float | None = None,
    gamma: float = 0.01,
    n_sweeps: int = 100,
    seed: int = 0,
) -> LdaModel:
    """Collapsed Gibbs LDA over per-user concatenated documents."""
    if n_topics < 1:
        raise ValueError("n_topics must be >= 1")
    if alpha is None:
        alpha = 50.0 / n_topics
    if alpha <= 0 or gamma <= 0:
        raise ValueError("Dirichlet concentrations must be positive")
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    n, w, k = dataset.n_users, dataset.n_words, n_topics
    authors, ptr, tokens = _flatten_posts(dataset)
    lengths = np.diff(ptr)
    doc_of = np.repeat(authors, lengths).astype(np.int32)
    t = tokens.shape[0]

    rng = np.random.default_rng(seed)
    z = rng.integers(0, k, size=t, dtype=np.int32) if t else np.empty(0, np.int32)
    n_dk = np.zeros((n, k), dtype=np.int64)
    n_kw = np.zeros((k, w), dtype=np.int64)
    np.add.at(n_dk, (doc_of, z), 1)
    np.add.at(n_kw, (z, tokens), 1)
    n_k = n_kw.sum(axis=1)

    for _ in range(n_sweeps):
        uniforms = rng.random(t)
        _kernels.lda_sweep(doc_of, tokens, z, n_dk, n_kw, n_k, alpha, gamma,
                           w, uniforms)

    user_topic = (n_dk + alpha) / (n_dk.sum(axis=1, keepdims=True) + k * alpha)
    topic_word = (n_kw + gamma) / (n_k[:, None] + w * gamma)
    return LdaModel(
        user_topic=user_topic, topic_word=topic_word, alpha=alpha, gamma=gamma
    )


def fit_twitter_lda(
    dataset: Dataset,
    n_topics: int,
    alpha: float | None = None,
    gamma: float = 0.01,
    pi_a: float = 1.0,
    pi_b: float = 1.0,
    n_sweeps: int = 100,
    seed: int = 0,
    background: bool = True,
) -> TwitterLdaModel:
    """Per-post topic model with an optional background channel.

    Each post draws one topic from its author's interests; each token
    either comes from that topic (switch y=1) or from a shared background
    distribution (y=0), with a Beta(pi_a, pi_b) prior on the switch. With
    background=False every token stays topical and the fit reduces to a
    per-post LDA.
    """
    if n_topics < 1:
        raise ValueError("n_topics must be >= 1")
    if alpha is None:
        alpha = 50.0 / n_topics
    if min(alpha, gamma, pi_a, pi_b) <= 0:
        raise ValueError("prior parameters must be positive")
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    n, w, k = dataset.n_users, dataset.n_words, n_topics
    authors, ptr, tokens = _flatten_posts(dataset)
    p, t = dataset.n_posts, tokens.shape[0]

    rng = np.random.default_rng(seed)
    z = rng.integers(0, k, size=p, dtype=np.int32) if p else np.empty(0, np.int32)
    # disperse the initial channel flags: an all-topical start leaves the
    # background counts empty, and the collapsed switch then has to cross a
    # (sw[0]+pi_b)/W barrier per token to ever populate them
    if background:
        y = (rng.random(t) < 0.5).astype(np.int8)
    else:
        y = np.ones(t, dtype=np.int8)
    n_uk = np.zeros((n, k), dtype=np.int64)
    np.add.at(n_uk, (authors, z), 1)
    n_kw = np.zeros((k, w), dtype=np.int64)
    owner_topic = np.repeat(z, np.diff(ptr)) if p else np.empty(0, np.int32)
    topical = y == 1
    np.add.at(n_kw, (owner_topic[topical], tokens[topical]), 1)
    n_k = n_kw.sum(axis=1)
    bg_w = np.bincount(tokens[~topical], minlength=w).astype(np.int64)
    bg_total = np.array([t - int(topical.sum())], dtype=np.int64)
    sw = np.array([bg_total[0], t - bg_total[0]], dtype=np.int64)

    for _ in range(n_sweeps):
        z_uniforms = rng.random(p)
        y_uniforms = rng.random(t)
        _kernels.tlda_sweep(
            authors, ptr, tokens, z, y, n_uk, n_kw, n_k, bg_w, bg_total, sw,
            alpha, gamma, pi_a, pi_b, 1 if background else 0, w,
            z_uniforms, y_uniforms,
        )

    user_topic = (n_uk + alpha) / (n_uk.sum(axis=1, keepdims=True) + k * alpha)
    topic_word = (n_kw + gamma) / (n_k[:, None] + w * gamma)
    if background:
        bg = (bg_w + gamma) / (bg_total[0] + w * gamma)
        pi = float((sw[1] + pi_a) / (t + pi_a + pi_b)) if t else 1.0
    else:
        bg = np.full(w, 1.0 / w)
        pi = 1.0
    return TwitterLdaModel(
        user_topic=user_topic,
        topic_word=topic_word,
        background=bg,
        pi=pi,
        alpha=alpha,
        gamma=gamma,
    )


def _post_level_perplexity(user_topic, emission, posts, eps):
    """exp(-mean token log-lik) under a one-topic-per-post marginal."""
    w = emission.shape[1]
    log_theta = np.log(np.maximum(user_topic, eps))
    log_em = np.log(np.maximum(emission, eps))
    total = 0.0
    scored = 0
    skipped = 0
    for post in posts:
        toks = post.tokens[(post.tokens >= 0) & (post.tokens < w)]
        skipped += post.tokens.size - toks.size
        if toks.size == 0:
            continue
        scores = log_theta[post.author] + log_em[:, toks].sum(axis=1)
        total += float(logsumexp(scores))
        scored += toks.size
    return total, scored, skipped


def perplexity(model, posts, return_skipped: bool = False):
    """Held-out perplexity of posts under a fitted topic model.

    model may be an LdaModel (token-level topic mixture), a
    TwitterLdaModel (post-level topic, per-token background mixture) or
    HAT ModelParams (post-level topic). Tokens outside the model
    vocabulary are skipped and counted; scoring nothing is an error.
    Returns exp(-mean log-likelihood per scored token).
    """
    eps = PROB_FLOOR
    if isinstance(model, LdaModel):
        total = 0.0
        scored = 0
        skipped = 0
        w = model.n_words
        for post in posts:
            toks = post.tokens[(post.tokens >= 0) & (post.tokens < w)]
            skipped += post.tokens.size - toks.size
            if toks.size == 0:
                continue
            probs = model.user_topic[post.author] @ model.topic_word[:, toks]
            total += float(np.log(np.maximum(probs, eps)).sum())
            scored += toks.size
    elif isinstance(model, TwitterLdaModel):
        emission = model.pi * model.topic_word + (1.0 - model.pi) * model.background
        total, scored, skipped = _post_level_perplexity(
            model.user_topic, emission, posts, eps
        )
    elif isinstance(model, ModelParams):
        total, scored, skipped = _post_level_perplexity(
            model.user_topic, model.topic_word, posts, eps
        )
    else:
        raise TypeError(f"cannot compute perplexity for {type(model).__name__}")
    if scored == 0:
        raise ValueError("no test tokens fall inside the model vocabulary")
    ppl = float(np.exp(-total / scored))
    return (ppl, skipped) if return_skipped else ppl


# ---------------------------------------------------------------------------
# serialization


def save_hits(scores: HitsScores, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{HITS_MAGIC}\n")
        fh.write(f"users {scores.n_users}\n")
        fh.write("hub\n")
        for v in scores.hub:
            fh.write(f"{float(v)!r}\n")
        fh.write("authority\n")
        for v in scores.authority:
            fh.write(f"{float(v)!r}\n")


def load_hits(path) -> HitsScores:
    p = Path(path)
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != HITS_MAGIC:
        raise CorpusFormatError(f"{p}:1: expected magic '{HITS_MAGIC}'")
    try:
        n = int(lines[1].split()[1])
        assert lines[2] == "hub" and lines[3 + n] == "authority"
        hub = np.array([float(v) for v in lines[3:3 + n]])
        auth = np.array([float(v) for v in lines[4 + n:4 + 2 * n]])
        if hub.shape != (n,) or auth.shape != (n,):
            raise ValueError
    except (AssertionError, IndexError, ValueError):
        raise CorpusFormatError(f"{p}: malformed HITS model") from None
    return HitsScores(hub=hub, authority=auth)


def _save_lda_like(path, magic, model, extra_lines, extra_mats) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{magic}\n")
        fh.write(f"users {model.n_users}\n")
        fh.write(f"topics {model.n_topics}\n")
        fh.write(f"words {model.n_words}\n")
        fh.write(f"alpha {float(model.alpha)!r}\n")
        fh.write(f"gamma {float(model.gamma)!r}\n")
        for line in extra_lines:
            fh.write(line + "\n")
        _write_matrix(fh, "user_topic", model.user_topic)
        _write_matrix(fh, "topic_word", model.topic_word)
        for name, mat in extra_mats:
            _write_matrix(fh, name, mat)


def save_lda(model: LdaModel, path) -> None:
    _save_lda_like(path, LDA_MAGIC, model, [], [])


def save_twitter_lda(model: TwitterLdaModel, path) -> None:
    _save_lda_like(
        path, TLDA_MAGIC, model, [f"pi {float(model.pi)!r}"],
        [("background", model.background.reshape(1, -1))],
    )


def _scalar_line(lines, idx, key, path):
    parts = lines[idx].split() if idx < len(lines) else []
    if len(parts) != 2 or parts[0] != key:
        raise CorpusFormatError(f"{path}:{idx + 1}: expected '{key} <value>'")
    return float(parts[1])


def load_lda(path) -> LdaModel:
    p = Path(path)
    lines = p.read_text(encoding="utf-8").splitlines()
    n, k, w = _read_header(lines, p, LDA_MAGIC)
    alpha = _scalar_line(lines, 4, "alpha", p)
    gamma = _scalar_line(lines, 5, "gamma", p)
    user_topic, cursor = _read_matrix(lines, 6, "user_topic", (n, k), p)
    topic_word, _ = _read_matrix(lines, cursor, "topic_word", (k, w), p)
    return LdaModel(
        user_topic=user_topic, topic_word=topic_word, alpha=alpha, gamma=gamma
    )


def load_twitter_lda(path) -> TwitterLdaModel:
    p = Path(path)
    lines = p.read_text(encoding="utf-8").splitlines()
    n, k, w = _read_header(lines, p, TLDA_MAGIC)
    alpha = _scalar_line(lines, 4, "alpha", p)
    gamma = _scalar_line(lines, 5, "gamma", p)
    pi = _scalar_line(lines, 6, "pi", p)
    user_topic, cursor = _read_matrix(lines, 7, "user_topic", (n, k), p)
    topic_word, cursor = _read_matrix(lines, cursor, "topic_word", (k, w), p)
    background, _ = _read_matrix(lines, cursor, "background", (1, w), p)
    return TwitterLdaModel(
        user_topic=user_topic,
        topic_word=topic_word,
        background=background[0],
        pi=pi,
        alpha=alpha,
        gamma=gamma,
    )
