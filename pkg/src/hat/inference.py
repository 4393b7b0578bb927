"""Gibbs-EM fitting of the joint topic/hub/authority model.

Each outer iteration draws post topics from their exact conditional (they
are mutually independent given the parameters, so one sweep is an exact
sample) and then improves the four parameter blocks in a fixed order:
topic_word, user_topic, authority, hub. Simplex blocks take exponentiated-
gradient steps, score blocks take additive steps in log space; every block
runs a backtracking line search that only accepts non-decreasing moves of
its partial objective, which makes the EM side monotone in the joint
log-likelihood at fixed assignments.

Determinism: all Gibbs randomness is precomputed into per-post uniform
arrays from seeds derived off FitConfig.seed, and parallel workers only
ever write disjoint row ranges, so results are bit-identical for any
worker count and for either kernel backend.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hat import _kernels
from hat.corpus import Dataset, PairSample
from hat.errors import CorpusFormatError, NumericalError
from hat.model import (
    PROB_FLOOR,
    HyperParams,
    ModelParams,
    floor_normalize,
    joint_log_likelihood,
)

# Per-row max-norm clip applied to gradients before a step; keeps one badly
# scaled row from stalling the line search for the whole block.
GRAD_CAP = 10.0
MAX_HALVINGS = 20
CONVERGENCE_PATIENCE = 3

_GIBBS_STREAM = 3
_INIT_STREAM = 4


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings; see fit() for how each field is used."""

    max_iters: int = 200
    em_steps_per_iter: int = 1
    learning_rate: float = 0.5
    convergence_tol: float = 1e-4
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.em_steps_per_iter < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class IterationStat:
    iteration: int
    objective: float
    gibbs_ms: float
    em_ms: float


@dataclass
class FitTrace:
    """Per-iteration objective and stage timings plus the converged flag."""

    iterations: list[IterationStat] = field(default_factory=list)
    converged: bool = False

    def objectives(self) -> np.ndarray:
        return np.array([s.objective for s in self.iterations])

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for s in self.iterations:
                fh.write(
                    f"{s.iteration}\t{s.objective!r}\t{s.gibbs_ms!r}\t{s.em_ms!r}\n"
                )

    @classmethod
    def load(cls, path) -> "FitTrace":
        trace = cls()
        for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), 1
        ):
            parts = line.split("\t")
            try:
                trace.iterations.append(
                    IterationStat(
                        iteration=int(parts[0]),
                        objective=float(parts[1]),
                        gibbs_ms=float(parts[2]),
                        em_ms=float(parts[3]),
                    )
                )
            except (IndexError, ValueError):
                raise CorpusFormatError(f"{path}:{lineno}: bad trace line") from None
        return trace


class _Workspace:
    """Flattened dataset/pair views shared by the kernels.

    Post tokens are concatenated with a CSR pointer; pairs are kept in two
    CSR layouts (by source for hub updates, by target for authority
    updates) so each row of a gradient is owned by exactly one worker.
    """

    def __init__(self, dataset: Dataset, pairs: PairSample | None, workers: int = 1):
        self.n_users = dataset.n_users
        self.n_posts = dataset.n_posts
        self.workers = max(1, workers)
        self.authors = np.array(
            [p.author for p in dataset.posts], dtype=np.int32
        )
        lengths = np.array([p.tokens.size for p in dataset.posts], dtype=np.int64)
        self.post_ptr = np.zeros(dataset.n_posts + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.post_ptr[1:])
        self.tokens = (
            np.concatenate([p.tokens for p in dataset.posts]).astype(np.int32)
            if dataset.n_posts
            else np.empty(0, dtype=np.int32)
        )
        self.token_owner = np.repeat(
            np.arange(dataset.n_posts, dtype=np.int64), lengths
        ) if dataset.n_posts else np.empty(0, dtype=np.int64)
        if pairs is not None:
            self.s_ptr = pairs.ptr.astype(np.int64)
            self.s_dst = pairs.dst.astype(np.int32)
            self.s_lbl = pairs.label.astype(np.int8)
            t_ptr, t_src, t_lbl = pairs.by_target()
            self.t_ptr = t_ptr.astype(np.int64)
            self.t_src = t_src.astype(np.int32)
            self.t_lbl = t_lbl.astype(np.int8)
        self._executor: ThreadPoolExecutor | None = None

    def shard(self, fn, n_rows: int) -> None:
        """Run fn(start, stop) over [0, n_rows) in disjoint chunks."""
        if self.workers <= 1 or n_rows < 2 * self.workers:
            fn(0, n_rows)
            return
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.workers)
        step = math.ceil(n_rows / self.workers)
        spans = [(a, min(a + step, n_rows)) for a in range(0, n_rows, step)]
        futures = [self._executor.submit(fn, a, b) for a, b in spans]
        for f in futures:
            f.result()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


def init_params(
    dataset: Dataset, hp: HyperParams, seed: int
) -> tuple[ModelParams, np.ndarray]:
    """Random starting point drawn from the model priors, plus uniform topics.

    Simplex rows come from their Dirichlet priors, log-scores from their
    Gaussians around the drawn interests, and every post gets a uniformly
    random topic. The RNG stream is tagged so that fitting with the same
    seed that generated a synthetic dataset never replays the generator's
    draws.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_INIT_STREAM,))
    )
    k, w, n = hp.n_topics, dataset.n_words, dataset.n_users
    topic_word = floor_normalize(rng.dirichlet(np.full(w, hp.gamma), size=k))
    user_topic = floor_normalize(rng.dirichlet(np.full(k, hp.alpha), size=n))
    hub = np.exp(user_topic + hp.delta * rng.standard_normal((n, k)))
    authority = np.exp(user_topic + hp.sigma * rng.standard_normal((n, k)))
    z = rng.integers(0, k, size=dataset.n_posts).astype(np.int32)
    params = ModelParams(
        topic_word=topic_word,
        user_topic=user_topic,
        authority=authority,
        hub=hub,
    )
    return params, z


def sample_topics(
    dataset: Dataset,
    params: ModelParams,
    seed,
    workers: int = 1,
    _ws: _Workspace | None = None,
) -> np.ndarray:
    """Draw one topic per post from the exact conditional given params.

    seed may be an int or a numpy SeedSequence; the same seed gives the
    same assignments for any worker count and kernel backend.
    """
    ws = _ws if _ws is not None else _Workspace(dataset, None, workers)
    log_theta = np.log(np.maximum(params.user_topic, PROB_FLOOR))
    log_tau = np.log(np.maximum(params.topic_word, PROB_FLOOR))
    uniforms = np.random.default_rng(seed).random(ws.n_posts)
    z = np.empty(ws.n_posts, dtype=np.int32)
    try:
        ws.shard(
            lambda a, b: _kernels.hat_gibbs_sweep(
                ws.authors, ws.post_ptr, ws.tokens, log_theta, log_tau,
                uniforms, z, a, b,
            ),
            ws.n_posts,
        )
    finally:
        if _ws is None:
            ws.close()
    return z


def _topic_counts(ws: _Workspace, z: np.ndarray, k: int, w: int):
    """(C_kw, P_uk): token counts per (topic, word), post counts per (user, topic)."""
    z = np.asarray(z, dtype=np.int64)
    c_kw = np.bincount(
        z[ws.token_owner] * w + ws.tokens, minlength=k * w
    ).reshape(k, w).astype(np.float64)
    p_uk = np.bincount(
        ws.authors.astype(np.int64) * k + z, minlength=ws.n_users * k
    ).reshape(ws.n_users, k).astype(np.float64)
    return c_kw, p_uk


def _clip(g: np.ndarray, cap: float = GRAD_CAP) -> np.ndarray:
    return np.clip(g, -cap, cap)


def _simplex_direction(mat: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Scale-robust ascent direction for simplex blocks.

    Dirichlet-style gradients have 1/x geometry: a coordinate at the
    probability floor sees ~1e12 while a settled one sees O(1), so any
    fixed per-row rescaling freezes all but the extreme coordinate and a
    plain elementwise cap saturates the whole support to one value, which
    row normalization then cancels outright. A signed log compresses the
    range while preserving order and sign, and maps constant gradients
    (interior stationary points) to constant vectors that normalization
    absorbs. Descent components of floored coordinates are unrealizable
    and dropped.
    """
    g = np.where((mat <= 2.0 * PROB_FLOOR) & (grad < 0.0), 0.0, grad)
    return _clip(np.sign(g) * np.log1p(np.abs(g)))


def _slack(base: float) -> float:
    return 1e-12 * max(1.0, abs(base))


def _link_pass(ws, ptr, cols, lbl, rowmat, colmat, lam, ll, grad, want_grad):
    n = ws.n_users
    ws.shard(
        lambda a, b: _kernels.link_terms(
            ptr, cols, lbl, rowmat, colmat, lam, PROB_FLOOR, ll, grad,
            want_grad, a, b,
        ),
        n,
    )


_DUMMY_GRAD = np.zeros((1, 1))


def log_likelihood_gradients(
    dataset: Dataset,
    pairs: PairSample,
    params: ModelParams,
    assignments: np.ndarray,
    hp: HyperParams,
    workers: int = 1,
    _ws: _Workspace | None = None,
) -> dict[str, np.ndarray]:
    """Analytic partials of the joint log-likelihood.

    Keys: topic_word, user_topic (simplex coordinates), log_hub,
    log_authority (log-space scores). These are the exact gradients away
    from the probability floors; where a link probability is clipped the
    link contribution is zero, matching the floored objective.
    """
    ws = _ws if _ws is not None else _Workspace(dataset, pairs, workers)
    k, w = params.n_topics, params.n_words
    z = np.asarray(assignments, dtype=np.int64)
    c_kw, p_uk = _topic_counts(ws, z, k, w)
    log_hub = np.log(params.hub)
    log_auth = np.log(params.authority)
    theta = params.user_topic

    g_tau = (c_kw + (hp.gamma - 1.0)) / params.topic_word
    g_theta = (
        (p_uk + (hp.alpha - 1.0)) / theta
        + (log_hub - theta) / (hp.delta * hp.delta)
        + (log_auth - theta) / (hp.sigma * hp.sigma)
    )

    n = ws.n_users
    ll = np.zeros(n)
    grad_h = np.zeros((n, k))
    grad_a = np.zeros((n, k))
    try:
        _link_pass(ws, ws.s_ptr, ws.s_dst, ws.s_lbl, params.hub,
                   params.authority, hp.lam, ll, grad_h, 1)
        _link_pass(ws, ws.t_ptr, ws.t_src, ws.t_lbl, params.authority,
                   params.hub, hp.lam, ll, grad_a, 1)
    finally:
        if _ws is None:
            ws.close()
    g_log_hub = grad_h - (log_hub - theta) / (hp.delta * hp.delta) - 1.0
    g_log_auth = grad_a - (log_auth - theta) / (hp.sigma * hp.sigma) - 1.0
    return {
        "topic_word": g_tau,
        "user_topic": g_theta,
        "log_hub": g_log_hub,
        "log_authority": g_log_auth,
    }


def _step_simplex(mat, grad, partial_fn, lr, block):
    """One exponentiated-gradient step with backtracking on partial_fn."""
    if not np.isfinite(grad).all():
        raise NumericalError(f"non-finite gradient in block '{block}'")
    ghat = _simplex_direction(mat, grad)
    base = partial_fn(mat)
    eta = lr
    for _ in range(MAX_HALVINGS + 1):
        cand = floor_normalize(mat * np.exp(eta * ghat))
        val = partial_fn(cand)
        if np.isfinite(val) and val >= base - _slack(base):
            return cand
        eta *= 0.5
    return mat


def _step_log_scores(log_m, theta, dev, other, ptr, cols, lbl, lam, lr, ws, block):
    """One additive log-space step with backtracking on the block objective."""
    n, k = log_m.shape

    def partial(lm, m):
        ll = np.zeros(n)
        _link_pass(ws, ptr, cols, lbl, m, other, lam, ll, _DUMMY_GRAD, 0)
        quad = float(((lm - theta) ** 2).sum()) / (2.0 * dev * dev)
        return float(ll.sum()) - quad - float(lm.sum())

    m0 = np.exp(log_m)
    ll = np.zeros(n)
    grad = np.zeros((n, k))
    _link_pass(ws, ptr, cols, lbl, m0, other, lam, ll, grad, 1)
    g = grad - (log_m - theta) / (dev * dev) - 1.0
    if not np.isfinite(g).all():
        raise NumericalError(f"non-finite gradient in block '{block}'")
    ghat = _clip(g)
    base = float(ll.sum()) - float(
        ((log_m - theta) ** 2).sum()
    ) / (2.0 * dev * dev) - float(log_m.sum())
    eta = lr
    for _ in range(MAX_HALVINGS + 1):
        cand = log_m + eta * ghat
        m = np.exp(cand)
        if np.isfinite(m).all():
            val = partial(cand, m)
            if np.isfinite(val) and val >= base - _slack(base):
                return cand
        eta *= 0.5
    return log_m


def em_step(
    dataset: Dataset,
    pairs: PairSample,
    params: ModelParams,
    assignments: np.ndarray,
    hp: HyperParams,
    config: FitConfig,
    _ws: _Workspace | None = None,
) -> ModelParams:
    """Run em_steps_per_iter rounds of block updates at fixed assignments.

    Block order within a round: topic_word, user_topic, authority, hub.
    Every block keeps its partial objective non-decreasing (backtracking
    line search, at most MAX_HALVINGS halvings), so the joint
    log-likelihood at the given assignments never decreases. Raises
    NumericalError naming the block if a gradient goes non-finite.
    """
    ws = _ws if _ws is not None else _Workspace(dataset, pairs, config.workers)
    k, w = params.n_topics, params.n_words
    z = np.asarray(assignments, dtype=np.int64)
    if z.shape != (dataset.n_posts,):
        raise ValueError("assignments must give one topic per post")
    if z.size and (z.min() < 0 or z.max() >= k):
        raise ValueError("assignment out of range")
    c_kw, p_uk = _topic_counts(ws, z, k, w)

    tau = params.topic_word.copy()
    theta = params.user_topic.copy()
    log_hub = np.log(params.hub)
    log_auth = np.log(params.authority)
    lr = config.learning_rate
    d2 = hp.delta * hp.delta
    s2 = hp.sigma * hp.sigma

    def tau_partial(m):
        return float(
            ((c_kw + (hp.gamma - 1.0)) * np.log(np.maximum(m, PROB_FLOOR))).sum()
        )

    def theta_partial(m):
        logp = np.log(np.maximum(m, PROB_FLOOR))
        val = float(((p_uk + (hp.alpha - 1.0)) * logp).sum())
        val -= float(((log_hub - m) ** 2).sum()) / (2.0 * d2)
        val -= float(((log_auth - m) ** 2).sum()) / (2.0 * s2)
        return val

    try:
        # overflow/zero-division here is deliberate: _step_* raise a named
        # NumericalError on any non-finite gradient instead of warning
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for _ in range(config.em_steps_per_iter):
                g_tau = (c_kw + (hp.gamma - 1.0)) / tau
                tau = _step_simplex(tau, g_tau, tau_partial, lr, "topic_word")

                g_theta = (
                    (p_uk + (hp.alpha - 1.0)) / theta
                    + (log_hub - theta) / d2
                    + (log_auth - theta) / s2
                )
                theta = _step_simplex(
                    theta, g_theta, theta_partial, lr, "user_topic"
                )

                log_auth = _step_log_scores(
                    log_auth, theta, hp.sigma, np.exp(log_hub), ws.t_ptr,
                    ws.t_src, ws.t_lbl, hp.lam, lr, ws, "authority",
                )
                log_hub = _step_log_scores(
                    log_hub, theta, hp.delta, np.exp(log_auth), ws.s_ptr,
                    ws.s_dst, ws.s_lbl, hp.lam, lr, ws, "hub",
                )
    finally:
        if _ws is None:
            ws.close()
    return ModelParams(
        topic_word=tau,
        user_topic=theta,
        authority=np.exp(log_auth),
        hub=np.exp(log_hub),
    )


def fit(
    dataset: Dataset,
    pairs: PairSample,
    hp: HyperParams,
    config: FitConfig,
) -> tuple[ModelParams, np.ndarray, FitTrace]:
    """Alternate exact topic sampling and monotone EM until convergence.

    Stops early once |objective change| / max(1, |objective|) stays below
    convergence_tol for CONVERGENCE_PATIENCE consecutive iterations. The
    per-iteration Gibbs seeds derive from config.seed, so a fit is fully
    reproducible; timings in the trace are the only non-deterministic
    output.
    """
    ws = _Workspace(dataset, pairs, config.workers)
    trace = FitTrace()
    params, z = init_params(dataset, hp, config.seed)
    prev = None
    streak = 0
    try:
        for it in range(1, config.max_iters + 1):
            t0 = time.perf_counter()
            gibbs_seed = np.random.SeedSequence(
                entropy=config.seed, spawn_key=(_GIBBS_STREAM, it)
            )
            z = sample_topics(dataset, params, gibbs_seed, _ws=ws)
            t1 = time.perf_counter()
            params = em_step(dataset, pairs, params, z, hp, config, _ws=ws)
            t2 = time.perf_counter()
            obj = joint_log_likelihood(dataset, pairs, params, z, hp)
            if not np.isfinite(obj):
                raise NumericalError("non-finite objective during fit")
            trace.iterations.append(
                IterationStat(
                    iteration=it,
                    objective=obj,
                    gibbs_ms=(t1 - t0) * 1e3,
                    em_ms=(t2 - t1) * 1e3,
                )
            )
            if prev is not None:
                rel = abs(obj - prev) / max(1.0, abs(prev))
                streak = streak + 1 if rel < config.convergence_tol else 0
                if streak >= CONVERGENCE_PATIENCE:
                    trace.converged = True
                    break
            prev = obj
    finally:
        ws.close()
    return params, z, trace
