"""Link recommendation evaluation and topical reporting.

For every user with held-out links, the candidate set is the union of
their test-link targets and the users exactly two hops away in the train
graph that they do not already follow. Candidates are ranked by a scorer
(higher is better; ties break by ascending user id) and summarized with
precision@k and mean reciprocal rank.

precision@k counts, among users holding at least k positive candidates,
the fraction for whom at least one positive appears in the top k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hat.corpus import Dataset, TrainTestSplit, two_hop_candidates
from hat.errors import CompatibilityError
from hat.model import ModelParams

Scorer = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Candidate:
    source: int
    target: int
    score: float
    relevant: bool


@dataclass(frozen=True)
class RankedUser:
    """One user's candidates, sorted by descending score then ascending id."""

    user: int
    targets: np.ndarray
    scores: np.ndarray
    relevant: np.ndarray

    def candidates(self) -> list[Candidate]:
        return [
            Candidate(
                source=self.user,
                target=int(t),
                score=float(s),
                relevant=bool(r),
            )
            for t, s, r in zip(self.targets, self.scores, self.relevant)
        ]

    def first_relevant_rank(self) -> int | None:
        hits = np.nonzero(self.relevant)[0]
        return int(hits[0]) + 1 if hits.size else None


@dataclass(frozen=True)
class RankingResult:
    users: tuple[RankedUser, ...]
    n_skipped: int


def hat_scorer(params: ModelParams) -> Scorer:
    """Rank targets by hub(source) . authority(target)."""

    def score(u: int, targets: np.ndarray) -> np.ndarray:
        return params.authority[targets] @ params.hub[u]

    return score


def hits_scorer(scores) -> Scorer:
    """Rank targets by hub(source) * authority(target) from HITS."""

    def score(u: int, targets: np.ndarray) -> np.ndarray:
        return scores.hub[u] * scores.authority[targets]

    return score


def interest_scorer(user_topic: np.ndarray) -> Scorer:
    """Rank targets by the dot product of topical interest vectors."""
    user_topic = np.asarray(user_topic, dtype=np.float64)

    def score(u: int, targets: np.ndarray) -> np.ndarray:
        return user_topic[targets] @ user_topic[u]

    return score


def rank_candidates(split: TrainTestSplit, scorer: Scorer) -> RankingResult:
    """Score and sort each test user's candidate set.

    Users are processed in ascending id order. A user with held-out links
    but an empty candidate list would be skipped and counted; by
    construction the positives are always candidates, so n_skipped stays 0
    unless a scorer filters them out upstream.
    """
    if split.test_links.size == 0:
        return RankingResult(users=(), n_skipped=0)
    sources = np.unique(split.test_links[:, 0])
    ranked = []
    skipped = 0
    for u in sources.tolist():
        pos = split.test_targets_of(u)
        cands = np.union1d(pos, two_hop_candidates(split.train.graph, u))
        if cands.size == 0:
            skipped += 1
            continue
        scores = np.asarray(scorer(u, cands), dtype=np.float64)
        if scores.shape != cands.shape:
            raise ValueError("scorer returned wrong number of scores")
        order = np.lexsort((cands, -scores))
        ranked.append(
            RankedUser(
                user=int(u),
                targets=cands[order].astype(np.int32),
                scores=scores[order],
                relevant=np.isin(cands[order], pos),
            )
        )
    return RankingResult(users=tuple(ranked), n_skipped=skipped)


def precision_at_k(result: RankingResult, k: int) -> float | None:
    """Fraction of k-eligible users with a positive ranked in the top k.

    A user is k-eligible when their candidate list holds at least k
    positives. Returns None when no user is eligible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eligible = [ru for ru in result.users if int(ru.relevant.sum()) >= k]
    if not eligible:
        return None
    hit = sum(1 for ru in eligible if bool(ru.relevant[:k].any()))
    return hit / len(eligible)


def mrr(result: RankingResult) -> float | None:
    """Mean reciprocal rank of the first positive; None without test users."""
    ranks = [ru.first_relevant_rank() for ru in result.users]
    ranks = [r for r in ranks if r is not None]
    if not ranks:
        return None
    return float(np.mean([1.0 / r for r in ranks]))


@dataclass(frozen=True)
class TopicReport:
    """Top keywords plus the strongest hub and authority users of a topic."""

    topic: int
    keywords: tuple[tuple[str, float], ...]
    top_hubs: tuple[tuple[str, float], ...]
    top_authorities: tuple[tuple[str, float], ...]


def _top_entries(values: np.ndarray, names, limit: int):
    order = np.lexsort((np.arange(values.shape[0]), -values))[:limit]
    return tuple((names[i], float(values[i])) for i in order.tolist())


def topic_report(
    params: ModelParams,
    dataset: Dataset,
    topic: int,
    n_keywords: int = 10,
    n_users: int = 10,
) -> TopicReport:
    """Summarize one topic; ties break on ascending word/user id."""
    if not 0 <= topic < params.n_topics:
        raise ValueError(f"topic {topic} out of range")
    if params.n_users != dataset.n_users or params.n_words != dataset.n_words:
        raise CompatibilityError("model and dataset shapes disagree")
    if n_keywords < 0 or n_users < 0:
        raise ValueError("limits must be non-negative")
    return TopicReport(
        topic=topic,
        keywords=_top_entries(
            params.topic_word[topic], dataset.vocabulary.words, n_keywords
        ),
        top_hubs=_top_entries(params.hub[:, topic], dataset.users, n_users),
        top_authorities=_top_entries(
            params.authority[:, topic], dataset.users, n_users
        ),
    )


def metrics_rows(
    method: str,
    result: RankingResult | None,
    ppl: float | None,
    k_max: int = 4,
) -> list[str]:
    """Tab-separated metric lines: method, key, value ("n/a" when undefined)."""

    def fmt(v):
        return "n/a" if v is None else repr(float(v))

    rows = []
    if result is not None:
        for k in range(1, k_max + 1):
            rows.append(f"{method}\t{k}\t{fmt(precision_at_k(result, k))}")
        rows.append(f"{method}\tmrr\t{fmt(mrr(result))}")
    rows.append(f"{method}\tperplexity\t{fmt(ppl)}")
    return rows
