"""Generative model core: parameters, likelihood, synthetic sampling.

The model couples three per-user quantities over K shared topics: a topical
interest distribution (user_topic, rows on the simplex), and positive hub and
authority scores per topic (hub, authority). Interests generate posts through
per-topic word distributions (topic_word); log hub and log authority scores
are Gaussian around the interest vector; a directed link u -> v is Bernoulli
with mean squash(hub_u . authority_v).

All probability rows are kept on the simplex with entries >= PROB_FLOOR, and
every log() in the likelihood is floored the same way, so the joint
log-likelihood is finite for any valid parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from hat.corpus import Dataset, FollowGraph, PairSample, Post, Vocabulary
from hat.errors import CorpusFormatError

MODEL_MAGIC = "HATMODEL v1"

PROB_FLOOR = 1e-10

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HyperParams:
    """Model hyperparameters.

    alpha defaults to 50 / n_topics when not given. lam scales the link
    score before squashing and must stay in (0, 1); sigma and delta are the
    log-space deviations of authority and hub scores around the interests.
    """

    n_topics: int
    alpha: float | None = None
    gamma: float = 0.01
    sigma: float = 1.0
    delta: float = 1.0
    lam: float = 0.5
    subsample_pct: float = 20.0

    def __post_init__(self):
        if self.n_topics < 1:
            raise ValueError("n_topics must be >= 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 50.0 / self.n_topics)
        if self.alpha <= 0 or self.gamma <= 0:
            raise ValueError("Dirichlet concentrations must be positive")
        if self.sigma <= 0 or self.delta <= 0:
            raise ValueError("sigma and delta must be positive")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must be in (0, 1)")
        if not 0.0 <= self.subsample_pct <= 100.0:
            raise ValueError("subsample_pct must be in [0, 100]")


def floor_normalize(rows: np.ndarray, eps: float = PROB_FLOOR) -> np.ndarray:
    """Project rows onto the simplex with all entries >= eps.

    Rows already normalized to within 1e-12 are passed through untouched so
    that a zero-size update step is an exact no-op; rows needing the floor
    are blended as eps + (1 - W*eps) * row.
    """
    out = np.array(rows, dtype=np.float64, copy=True)
    if out.ndim != 2:
        raise ValueError("expected a 2-d array of rows")
    w = out.shape[1]
    if w * eps >= 0.5:
        raise ValueError("row width too large for the probability floor")
    np.maximum(out, 0.0, out=out)
    sums = out.sum(axis=1)
    if not np.all(sums > 0):
        raise ValueError("cannot normalize an all-zero row")
    off = np.abs(sums - 1.0) > 1e-12
    out[off] /= sums[off, None]
    low = (out < eps).any(axis=1)
    if low.any():
        sub = out[low]
        out[low] = eps + (1.0 - w * eps) * (sub / sub.sum(axis=1, keepdims=True))
    return out


@dataclass(frozen=True)
class ModelParams:
    """Learned parameters.

    topic_word : (K, W) rows on the simplex, entries >= PROB_FLOOR
    user_topic : (N, K) rows on the simplex, entries >= PROB_FLOOR
    authority  : (N, K) positive finite per-topic authority scores
    hub        : (N, K) positive finite per-topic hub scores
    """

    topic_word: np.ndarray
    user_topic: np.ndarray
    authority: np.ndarray
    hub: np.ndarray

    def __post_init__(self):
        for name in ("topic_word", "user_topic", "authority", "hub"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_topics(self) -> int:
        return self.topic_word.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_topic.shape[0]

    @property
    def n_words(self) -> int:
        return self.topic_word.shape[1]

    def validate(self, eps: float = PROB_FLOOR) -> None:
        k, w = self.topic_word.shape
        n = self.user_topic.shape[0]
        if self.user_topic.shape != (n, k):
            raise ValueError("user_topic shape mismatch")
        if self.authority.shape != (n, k) or self.hub.shape != (n, k):
            raise ValueError("authority/hub shape mismatch")
        for name in ("topic_word", "user_topic"):
            rows = getattr(self, name)
            if rows.size == 0:
                continue
            if not np.isfinite(rows).all():
                raise ValueError(f"{name} has non-finite entries")
            if (rows < eps * (1.0 - 1e-12)).any():
                raise ValueError(f"{name} entries fall below the floor")
            if np.abs(rows.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValueError(f"{name} rows must sum to 1")
        for name in ("authority", "hub"):
            arr = getattr(self, name)
            if arr.size and (not np.isfinite(arr).all() or (arr <= 0).any()):
                raise ValueError(f"{name} must be positive and finite")


def squash(x, lam: float):
    """Map a raw link score to (-1, 1); equals tanh(lam * x / 2).

    Accepts scalars or arrays. lam must be positive; values >= 1 are allowed
    here (the identity squash(x, 1) == tanh(x/2) is useful on its own) even
    though HyperParams restricts the model's lam to (0, 1).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    arr = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = 2.0 * (1.0 / (np.exp(-lam * arr) + 1.0) - 0.5)
    return float(out) if out.ndim == 0 else out


def link_probability(hub_row: np.ndarray, authority_row: np.ndarray, lam: float) -> float:
    """Probability of a directed link given the source hub and target authority rows."""
    h = np.asarray(hub_row, dtype=np.float64)
    a = np.asarray(authority_row, dtype=np.float64)
    if h.shape != a.shape or h.ndim != 1:
        raise ValueError("hub and authority rows must be 1-d and equally sized")
    return squash(float(h @ a), lam)


@dataclass(frozen=True)
class LikelihoodTerms:
    """Additive decomposition of the joint log-likelihood.

    gauss_* are Gaussian log-densities of the log scores around the
    interests; jacobian_* carry the -log(score) change of variables so the
    score priors are exact log-normal densities.
    """

    words: float
    topics: float
    gauss_hub: float
    gauss_auth: float
    jacobian_hub: float
    jacobian_auth: float
    links: float
    prior_user_topic: float
    prior_topic_word: float

    def total(self) -> float:
        return (
            self.words
            + self.topics
            + self.gauss_hub
            + self.gauss_auth
            + self.jacobian_hub
            + self.jacobian_auth
            + self.links
            + self.prior_user_topic
            + self.prior_topic_word
        )


def _flat_tokens(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate all post tokens; returns (token ids, owning post index)."""
    if dataset.n_posts == 0:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int64)
    tokens = np.concatenate([p.tokens for p in dataset.posts])
    lengths = np.array([p.tokens.size for p in dataset.posts], dtype=np.int64)
    owner = np.repeat(np.arange(dataset.n_posts, dtype=np.int64), lengths)
    return tokens, owner


def gauss_log_density(x: np.ndarray, mean: np.ndarray, dev: float) -> float:
    """Sum of N(x; mean, dev) log-densities over all entries."""
    if x.size == 0:
        return 0.0
    quad = float(((x - mean) ** 2).sum()) / (2.0 * dev * dev)
    return -quad - x.size * (math.log(dev) + 0.5 * _LOG_2PI)


def _dirichlet_log_density(rows: np.ndarray, conc: float, eps: float) -> float:
    if rows.size == 0:
        return 0.0
    n, w = rows.shape
    const = gammaln(w * conc) - w * gammaln(conc)
    return float(
        n * const + (conc - 1.0) * np.log(np.maximum(rows, eps)).sum()
    )


def log_likelihood_terms(
    dataset: Dataset,
    pairs: PairSample,
    params: ModelParams,
    assignments: np.ndarray,
    hp: HyperParams,
    eps: float = PROB_FLOOR,
) -> LikelihoodTerms:
    """Compute each additive piece of the joint log-likelihood separately."""
    z = np.asarray(assignments, dtype=np.int64)
    if z.shape != (dataset.n_posts,):
        raise ValueError("assignments must give one topic per post")

    tokens, owner = _flat_tokens(dataset)
    words = float(
        np.log(np.maximum(params.topic_word[z[owner], tokens], eps)).sum()
    )
    authors = np.array([p.author for p in dataset.posts], dtype=np.int64)
    topics = float(
        np.log(np.maximum(params.user_topic[authors, z], eps)).sum()
    ) if z.size else 0.0

    log_hub = np.log(params.hub)
    log_auth = np.log(params.authority)
    gauss_hub = gauss_log_density(log_hub, params.user_topic, hp.delta)
    gauss_auth = gauss_log_density(log_auth, params.user_topic, hp.sigma)

    if pairs.n_pairs:
        scores = np.einsum(
            "ij,ij->i", params.hub[pairs.src], params.authority[pairs.dst]
        )
        q = squash(scores, hp.lam)
        r = pairs.label.astype(np.float64)
        links = float(
            (
                r * np.log(np.maximum(q, eps))
                + (1.0 - r) * np.log(np.maximum(1.0 - q, eps))
            ).sum()
        )
    else:
        links = 0.0

    return LikelihoodTerms(
        words=words,
        topics=topics,
        gauss_hub=gauss_hub,
        gauss_auth=gauss_auth,
        jacobian_hub=-float(log_hub.sum()),
        jacobian_auth=-float(log_auth.sum()),
        links=links,
        prior_user_topic=_dirichlet_log_density(params.user_topic, hp.alpha, eps),
        prior_topic_word=_dirichlet_log_density(params.topic_word, hp.gamma, eps),
    )


def joint_log_likelihood(
    dataset: Dataset,
    pairs: PairSample,
    params: ModelParams,
    assignments: np.ndarray,
    hp: HyperParams,
    eps: float = PROB_FLOOR,
) -> float:
    """Joint log-likelihood of posts, links and parameters in one pass.

    Equals LikelihoodTerms.total() up to floating-point reassociation. Always
    finite for valid inputs thanks to the eps floor inside every log.
    """
    z = np.asarray(assignments, dtype=np.int64)
    if z.shape != (dataset.n_posts,):
        raise ValueError("assignments must give one topic per post")
    total = 0.0

    tokens, owner = _flat_tokens(dataset)
    if tokens.size:
        total += float(
            np.log(np.maximum(params.topic_word[z[owner], tokens], eps)).sum()
        )
    if z.size:
        authors = np.array([p.author for p in dataset.posts], dtype=np.int64)
        total += float(np.log(np.maximum(params.user_topic[authors, z], eps)).sum())

    n, k = params.user_topic.shape
    log_hub = np.log(params.hub)
    log_auth = np.log(params.authority)
    dh = log_hub - params.user_topic
    da = log_auth - params.user_topic
    total -= float((dh * dh).sum()) / (2.0 * hp.delta * hp.delta)
    total -= float((da * da).sum()) / (2.0 * hp.sigma * hp.sigma)
    total -= n * k * (math.log(hp.delta) + math.log(hp.sigma) + _LOG_2PI)
    total -= float(log_hub.sum()) + float(log_auth.sum())

    if pairs.n_pairs:
        scores = np.einsum(
            "ij,ij->i", params.hub[pairs.src], params.authority[pairs.dst]
        )
        q = squash(scores, hp.lam)
        r = pairs.label.astype(np.float64)
        total += float(
            (
                r * np.log(np.maximum(q, eps))
                + (1.0 - r) * np.log(np.maximum(1.0 - q, eps))
            ).sum()
        )

    total += _dirichlet_log_density(params.user_topic, hp.alpha, eps)
    total += _dirichlet_log_density(params.topic_word, hp.gamma, eps)
    return total


def generate(
    hp: HyperParams,
    n_users: int,
    n_posts_per_user: int,
    n_words_per_post: int,
    vocab_size: int,
    seed: int,
    complement_links: bool = False,
) -> tuple[Dataset, ModelParams, np.ndarray]:
    """Sample a synthetic dataset plus the parameters and topics behind it.

    Draw order is fixed (topic_word rows, user_topic rows, hub, authority,
    then posts user by user, then the full link matrix), so one seed always
    yields the same dataset. complement_links=True samples each link with
    probability 1 - squash(score) instead of squash(score), matching a
    published pseudocode variant kept for comparison.
    """
    if min(n_users, n_posts_per_user, n_words_per_post, vocab_size) < 1:
        raise ValueError("all sizes must be >= 1")
    rng = np.random.default_rng(seed)
    k, w = hp.n_topics, vocab_size

    topic_word = floor_normalize(
        rng.dirichlet(np.full(w, hp.gamma), size=k)
    )
    user_topic = floor_normalize(
        rng.dirichlet(np.full(k, hp.alpha), size=n_users)
    )
    hub = np.exp(user_topic + hp.delta * rng.standard_normal((n_users, k)))
    authority = np.exp(user_topic + hp.sigma * rng.standard_normal((n_users, k)))
    params = ModelParams(
        topic_word=topic_word,
        user_topic=user_topic,
        authority=authority,
        hub=hub,
    )

    posts = []
    assignments = []
    for u in range(n_users):
        zs = rng.choice(k, size=n_posts_per_user, p=user_topic[u])
        assignments.extend(int(z) for z in zs)
        for z in zs:
            toks = rng.choice(w, size=n_words_per_post, p=topic_word[z])
            posts.append(Post(author=u, tokens=toks.astype(np.int32)))

    q = squash(hub @ authority.T, hp.lam)
    if complement_links:
        q = 1.0 - q
    draws = rng.random((n_users, n_users))
    np.fill_diagonal(draws, 1.0)  # never a self-loop
    src, dst = np.nonzero(draws < q)
    edges = np.stack([src, dst], axis=1).astype(np.int32)

    users = tuple(f"u{i:06d}" for i in range(n_users))
    vocab = Vocabulary.from_words(f"w{i:06d}" for i in range(w))
    dataset = Dataset(
        users=users,
        vocabulary=vocab,
        graph=FollowGraph(n_users, edges),
        posts=tuple(posts),
    )
    return dataset, params, np.array(assignments, dtype=np.int32)


# ---------------------------------------------------------------------------
# serialization


def _write_matrix(fh, name: str, mat: np.ndarray) -> None:
    fh.write(f"{name}\n")
    for row in mat:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_model(params: ModelParams, path) -> None:
    """Write a HATMODEL v1 file; floats use shortest round-trip notation."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC}\n")
        fh.write(f"users {params.n_users}\n")
        fh.write(f"topics {params.n_topics}\n")
        fh.write(f"words {params.n_words}\n")
        _write_matrix(fh, "topic_word", params.topic_word)
        _write_matrix(fh, "user_topic", params.user_topic)
        _write_matrix(fh, "authority", params.authority)
        _write_matrix(fh, "hub", params.hub)


def _read_header(lines: list[str], path, magic: str) -> tuple[int, int, int]:
    if not lines or lines[0] != magic:
        raise CorpusFormatError(f"{path}:1: expected magic '{magic}'")
    vals = {}
    for i, key in enumerate(("users", "topics", "words"), start=1):
        parts = lines[i].split() if i < len(lines) else []
        if len(parts) != 2 or parts[0] != key:
            raise CorpusFormatError(f"{path}:{i + 1}: expected '{key} <int>'")
        vals[key] = int(parts[1])
    return vals["users"], vals["topics"], vals["words"]


def _read_matrix(lines, cursor, name, shape, path):
    if cursor >= len(lines) or lines[cursor] != name:
        raise CorpusFormatError(f"{path}:{cursor + 1}: expected section '{name}'")
    cursor += 1
    rows = []
    for r in range(shape[0]):
        try:
            row = [float(v) for v in lines[cursor + r].split()]
        except (IndexError, ValueError):
            raise CorpusFormatError(
                f"{path}:{cursor + r + 1}: bad row in section '{name}'"
            ) from None
        if len(row) != shape[1]:
            raise CorpusFormatError(
                f"{path}:{cursor + r + 1}: expected {shape[1]} values"
            )
        rows.append(row)
    mat = np.asarray(rows, dtype=np.float64).reshape(shape)
    return mat, cursor + shape[0]


def load_model(path) -> ModelParams:
    """Read a HATMODEL v1 file and validate the parameter invariants."""
    p = Path(path)
    lines = p.read_text(encoding="utf-8").splitlines()
    n, k, w = _read_header(lines, p, MODEL_MAGIC)
    cursor = 4
    topic_word, cursor = _read_matrix(lines, cursor, "topic_word", (k, w), p)
    user_topic, cursor = _read_matrix(lines, cursor, "user_topic", (n, k), p)
    authority, cursor = _read_matrix(lines, cursor, "authority", (n, k), p)
    hub, cursor = _read_matrix(lines, cursor, "hub", (n, k), p)
    try:
        return ModelParams(
            topic_word=topic_word,
            user_topic=user_topic,
            authority=authority,
            hub=hub,
        )
    except ValueError as exc:
        raise CorpusFormatError(f"{p}: invalid model: {exc}") from None
