"""Corpus handling: ingestion, train/test splitting, candidate generation.

A dataset couples a directed follow graph with short posts written by the
same users. All entities are referenced by dense integer ids: users are
numbered by sorted external name, words by sorted surface form. Datasets,
splits and pair samples are immutable once built and safe to share across
threads.

On-disk format is a directory bundle ("HATDATA v1"): manifest.txt plus
users.txt, vocab.txt, edges.txt and posts.txt. All files are plain UTF-8
text, one record per line, so bundles diff cleanly and round-trip exactly.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hat.errors import CorpusFormatError

DATA_MAGIC = "HATDATA v1"
SPLIT_MAGIC = "HATSPLIT v1"

# Stream tags keep the per-user RNG streams used for splitting and pair
# subsampling disjoint even when both are called with the same seed.
_SPLIT_STREAM = 1
_PAIR_STREAM = 2

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Split raw post text into lowercase alphanumeric tokens.

    URLs and @-mentions are removed; hashtags keep their text ("#nba" ->
    "nba"); everything else is split on non-alphanumeric characters.
    """
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Post:
    """One post: an author id plus a token-id multiset (order preserved)."""

    author: int
    tokens: np.ndarray  # int32, non-empty

    def __post_init__(self):
        toks = np.asarray(self.tokens, dtype=np.int32)
        toks.setflags(write=False)
        object.__setattr__(self, "tokens", toks)
        if toks.ndim != 1 or toks.size == 0:
            raise ValueError("post needs a non-empty 1-d token array")


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between word ids [0, W) and surface forms."""

    words: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        words = tuple(words)
        index = {w: i for i, w in enumerate(words)}
        if len(index) != len(words):
            raise ValueError("duplicate words in vocabulary")
        return cls(words=words, index=index)

    @property
    def size(self) -> int:
        return len(self.words)


class FollowGraph:
    """Directed follow graph over users 0..n_users-1.

    Edges are stored sorted by (source, target) with CSR indexes for both
    out- and in-neighborhoods. No self-loops, no duplicates.
    """

    def __init__(self, n_users: int, edges):
        edges = np.asarray(edges, dtype=np.int32).reshape(-1, 2)
        if n_users < 0:
            raise ValueError("n_users must be >= 0")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n_users:
                raise ValueError("edge endpoint out of range")
            if (edges[:, 0] == edges[:, 1]).any():
                raise ValueError("self-loops are not allowed")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            dup = (np.diff(edges[:, 0]) == 0) & (np.diff(edges[:, 1]) == 0)
            if dup.any():
                raise ValueError("duplicate edges are not allowed")
        self.n_users = int(n_users)
        self.edges = edges
        self.edges.setflags(write=False)
        self._out_ptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(edges[:, 0], minlength=n_users), out=self._out_ptr[1:])
        self._out_idx = edges[:, 1].copy()
        in_order = np.lexsort((edges[:, 0], edges[:, 1]))
        self._in_ptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(edges[:, 1], minlength=n_users), out=self._in_ptr[1:])
        self._in_idx = edges[in_order, 0].copy()
        for arr in (self._out_ptr, self._out_idx, self._in_ptr, self._in_idx):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def out_neighbors(self, u: int) -> np.ndarray:
        """Targets followed by u, ascending."""
        return self._out_idx[self._out_ptr[u]:self._out_ptr[u + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        """Sources following v, ascending."""
        return self._in_idx[self._in_ptr[v]:self._in_ptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        out = self.out_neighbors(u)
        i = np.searchsorted(out, v)
        return bool(i < out.size and out[i] == v)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(s), int(t)) for s, t in self.edges}


@dataclass(frozen=True)
class Dataset:
    """A follow graph plus posts over a shared user/vocabulary registry.

    posts are grouped by author: sorted by author id, original order kept
    within each author.
    """

    users: tuple[str, ...]
    vocabulary: Vocabulary
    graph: FollowGraph
    posts: tuple[Post, ...]

    def __post_init__(self):
        if self.graph.n_users != len(self.users):
            raise ValueError("graph/user registry size mismatch")
        w = self.vocabulary.size
        last_author = -1
        for p in self.posts:
            if not 0 <= p.author < len(self.users):
                raise ValueError("post author out of range")
            if p.author < last_author:
                raise ValueError("posts must be grouped by author")
            last_author = p.author
            if p.tokens.size and int(p.tokens.max()) >= w:
                raise ValueError("post token id out of range")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_words(self) -> int:
        return self.vocabulary.size

    @property
    def n_posts(self) -> int:
        return len(self.posts)

    def posts_of(self, u: int) -> list[Post]:
        return [p for p in self.posts if p.author == u]

    def user_id(self, name: str) -> int:
        try:
            return self.users.index(name)
        except ValueError:
            raise KeyError(f"unknown user {name!r}") from None


@dataclass(frozen=True)
class TrainTestSplit:
    """Per-user holdout of posts and out-links.

    train is a full Dataset over the same registries; test_links is an
    (E', 2) array of held-out edges and test_posts the held-out posts.
    """

    train: Dataset
    test_links: np.ndarray
    test_posts: tuple[Post, ...]
    fraction: float
    seed: int

    def test_targets_of(self, u: int) -> np.ndarray:
        links = self.test_links
        if links.size == 0:
            return np.empty(0, dtype=np.int32)
        return np.sort(links[links[:, 0] == u, 1])


@dataclass(frozen=True)
class PairSample:
    """Training pairs for the link likelihood, grouped by source user.

    For each user the positives (all retained out-links) come first, then
    the retained two-hop non-link targets, both ascending by target id.
    """

    n_users: int
    ptr: np.ndarray  # int64 (n_users+1,)
    dst: np.ndarray  # int32
    label: np.ndarray  # int8, 1 positive / 0 negative
    src: np.ndarray = field(init=False)  # int32, repeat-expanded sources

    def __post_init__(self):
        src = np.repeat(
            np.arange(self.n_users, dtype=np.int32), np.diff(self.ptr)
        )
        for arr in (self.ptr, self.dst, self.label, src):
            arr.setflags(write=False)
        object.__setattr__(self, "src", src)

    @property
    def n_pairs(self) -> int:
        return self.dst.shape[0]

    def positives_of(self, u: int) -> np.ndarray:
        lo, hi = self.ptr[u], self.ptr[u + 1]
        return self.dst[lo:hi][self.label[lo:hi] == 1]

    def negatives_of(self, u: int) -> np.ndarray:
        lo, hi = self.ptr[u], self.ptr[u + 1]
        return self.dst[lo:hi][self.label[lo:hi] == 0]

    def by_target(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR view keyed by target: (ptr, src, label), sources ascending."""
        order = np.lexsort((self.src, self.dst))
        tptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(
            np.bincount(self.dst, minlength=self.n_users), out=tptr[1:]
        )
        return tptr, self.src[order].copy(), self.label[order].copy()


def _user_rng(seed: int, stream: int, user: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream, user))
    )


def ingest(edge_file, post_file, min_word_count: int = 1) -> Dataset:
    """Build a Dataset from an edge list and a post file.

    Parameters
    ----------
    edge_file : path
        One "follower<TAB>followee" pair of user names per line. Both names
        must appear as authors in the post file. Duplicate lines are merged;
        self-loops are rejected.
    post_file : path
        One "user<TAB>raw text" post per line. The authors of this file
        define the user registry.
    min_word_count : int
        Words seen fewer times across the whole corpus are dropped. Posts
        left empty after filtering are dropped; their authors stay
        registered.
    """
    if min_word_count < 1:
        raise ValueError("min_word_count must be >= 1")
    post_path, edge_path = Path(post_file), Path(edge_file)

    raw_posts: list[tuple[str, list[str]]] = []
    with post_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            user, sep, text = line.partition("\t")
            if not sep or not user:
                raise CorpusFormatError(
                    f"{post_path}:{lineno}: expected 'user<TAB>text'"
                )
            raw_posts.append((user, tokenize(text)))

    names = sorted({u for u, _ in raw_posts})
    name_to_id = {n: i for i, n in enumerate(names)}

    raw_edges: set[tuple[int, int]] = set()
    with edge_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusFormatError(
                    f"{edge_path}:{lineno}: expected 'follower<TAB>followee'"
                )
            try:
                src, dst = name_to_id[parts[0]], name_to_id[parts[1]]
            except KeyError as exc:
                raise CorpusFormatError(
                    f"{edge_path}:{lineno}: unknown user {exc.args[0]!r}"
                ) from None
            if src == dst:
                raise CorpusFormatError(
                    f"{edge_path}:{lineno}: self-loop on {parts[0]!r}"
                )
            raw_edges.add((src, dst))

    counts: Counter[str] = Counter()
    for _, toks in raw_posts:
        counts.update(toks)
    kept = sorted(w for w, c in counts.items() if c >= min_word_count)
    vocab = Vocabulary.from_words(kept)

    posts = []
    for user, toks in raw_posts:
        ids = [vocab.index[w] for w in toks if w in vocab.index]
        if ids:
            posts.append((name_to_id[user], np.asarray(ids, dtype=np.int32)))

    # Users with neither a surviving post nor an edge carry no signal.
    active = {a for a, _ in posts}
    active.update(s for s, _ in raw_edges)
    active.update(t for _, t in raw_edges)
    keep_ids = sorted(active)
    remap = {old: new for new, old in enumerate(keep_ids)}

    users = tuple(names[i] for i in keep_ids)
    edges = sorted((remap[s], remap[t]) for s, t in raw_edges)
    graph = FollowGraph(len(users), np.asarray(edges, dtype=np.int32).reshape(-1, 2))
    grouped = sorted(
        (Post(author=remap[a], tokens=t) for a, t in posts),
        key=lambda p: p.author,
    )
    return Dataset(users=users, vocabulary=vocab, graph=graph, posts=tuple(grouped))


def dataset_stats(dataset: Dataset) -> dict[str, float]:
    """Summary counts used by the CLI: users, links, posts, per-user extremes."""
    per_user = np.zeros(dataset.n_users, dtype=np.int64)
    for p in dataset.posts:
        per_user[p.author] += 1
    n = dataset.n_users
    return {
        "total_users": n,
        "total_links": dataset.graph.n_edges,
        "avg_links": dataset.graph.n_edges / n if n else 0.0,
        "total_posts": dataset.n_posts,
        "min_posts": int(per_user.min()) if n else 0,
        "max_posts": int(per_user.max()) if n else 0,
        "vocabulary": dataset.n_words,
    }


def split(dataset: Dataset, fraction: float, seed: int) -> TrainTestSplit:
    """Hold out posts and out-links per user.

    For every user, ceil(fraction * n) of their posts and of their out-links
    are kept for training (at least one of each whenever the user has any);
    the rest form the test side. Selection is driven by a per-user RNG
    stream derived from (seed, user id), so results do not depend on user
    iteration order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")

    post_idx_of_user: dict[int, list[int]] = {}
    for i, p in enumerate(dataset.posts):
        post_idx_of_user.setdefault(p.author, []).append(i)

    train_post_idx: list[int] = []
    test_post_idx: list[int] = []
    train_edges: list[tuple[int, int]] = []
    test_edges: list[tuple[int, int]] = []
    for u in range(dataset.n_users):
        rng = _user_rng(seed, _SPLIT_STREAM, u)
        mine = post_idx_of_user.get(u, [])
        if mine:
            k = math.ceil(fraction * len(mine))
            perm = rng.permutation(len(mine))
            chosen = set(perm[:k].tolist())
            for j, idx in enumerate(mine):
                (train_post_idx if j in chosen else test_post_idx).append(idx)
        outs = dataset.graph.out_neighbors(u)
        if outs.size:
            k = math.ceil(fraction * outs.size)
            perm = rng.permutation(outs.size)
            chosen = set(perm[:k].tolist())
            for j, v in enumerate(outs.tolist()):
                (train_edges if j in chosen else test_edges).append((u, v))

    train_posts = tuple(dataset.posts[i] for i in sorted(train_post_idx))
    test_posts = tuple(dataset.posts[i] for i in sorted(test_post_idx))
    train = Dataset(
        users=dataset.users,
        vocabulary=dataset.vocabulary,
        graph=FollowGraph(
            dataset.n_users, np.asarray(sorted(train_edges), dtype=np.int32).reshape(-1, 2)
        ),
        posts=train_posts,
    )
    test_links = np.asarray(sorted(test_edges), dtype=np.int32).reshape(-1, 2)
    test_links.setflags(write=False)
    return TrainTestSplit(
        train=train,
        test_links=test_links,
        test_posts=test_posts,
        fraction=fraction,
        seed=seed,
    )


def two_hop_candidates(graph: FollowGraph, u: int) -> np.ndarray:
    """Users reachable from u in exactly two hops that u does not follow.

    Returns a sorted unique id array; u itself and its direct followees are
    excluded.
    """
    outs = graph.out_neighbors(u)
    if outs.size == 0:
        return np.empty(0, dtype=np.int32)
    second = np.concatenate([graph.out_neighbors(v) for v in outs])
    if second.size == 0:
        return np.empty(0, dtype=np.int32)
    cands = np.unique(second)
    return np.setdiff1d(cands, np.append(outs, u), assume_unique=False).astype(np.int32)


def subsample_pairs(graph: FollowGraph, pct: float, seed: int) -> PairSample:
    """Build link-likelihood pairs: all out-links plus sampled non-links.

    For each user all followees become positive pairs; ceil(pct/100 * m) of
    the m two-hop non-followed candidates are kept as negatives, sampled
    without replacement from the per-user stream (seed, user id). Negatives
    never collide with existing edges by construction.
    """
    if not 0.0 <= pct <= 100.0:
        raise ValueError("pct must be in [0, 100]")
    ptr = np.zeros(graph.n_users + 1, dtype=np.int64)
    dst_parts: list[np.ndarray] = []
    lbl_parts: list[np.ndarray] = []
    for u in range(graph.n_users):
        pos = graph.out_neighbors(u)
        cands = two_hop_candidates(graph, u)
        take = math.ceil(pct / 100.0 * cands.size)
        if take > 0:
            rng = _user_rng(seed, _PAIR_STREAM, u)
            neg = np.sort(rng.choice(cands, size=take, replace=False))
        else:
            neg = np.empty(0, dtype=np.int32)
        ptr[u + 1] = ptr[u] + pos.size + neg.size
        dst_parts.append(pos)
        dst_parts.append(neg.astype(np.int32))
        lbl_parts.append(np.ones(pos.size, dtype=np.int8))
        lbl_parts.append(np.zeros(neg.size, dtype=np.int8))
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int32)
    lbl = np.concatenate(lbl_parts) if lbl_parts else np.empty(0, dtype=np.int8)
    return PairSample(n_users=graph.n_users, ptr=ptr, dst=dst.astype(np.int32), label=lbl)


# ---------------------------------------------------------------------------
# serialization


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write the HATDATA v1 bundle. Same dataset -> byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(
        f"{DATA_MAGIC}\n"
        f"users {dataset.n_users}\n"
        f"words {dataset.n_words}\n"
        f"edges {dataset.graph.n_edges}\n"
        f"posts {dataset.n_posts}\n",
        encoding="utf-8",
    )
    (out / "users.txt").write_text(
        "".join(f"{u}\n" for u in dataset.users), encoding="utf-8"
    )
    (out / "vocab.txt").write_text(
        "".join(f"{w}\n" for w in dataset.vocabulary.words), encoding="utf-8"
    )
    (out / "edges.txt").write_text(
        "".join(f"{s}\t{t}\n" for s, t in dataset.graph.edges), encoding="utf-8"
    )
    with (out / "posts.txt").open("w", encoding="utf-8") as fh:
        for p in dataset.posts:
            fh.write(f"{p.author}\t{' '.join(map(str, p.tokens.tolist()))}\n")


def _manifest_entry(lines, key, path):
    for line in lines:
        parts = line.split()
        if len(parts) == 2 and parts[0] == key:
            try:
                return int(parts[1])
            except ValueError:
                break
    raise CorpusFormatError(f"{path}: missing or bad manifest entry '{key}'")


def load_dataset(in_dir) -> Dataset:
    """Read a HATDATA v1 bundle written by save_dataset."""
    src = Path(in_dir)
    man_path = src / "manifest.txt"
    if not man_path.is_file():
        raise CorpusFormatError(f"{man_path}: not found")
    lines = man_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != DATA_MAGIC:
        raise CorpusFormatError(f"{man_path}:1: expected magic '{DATA_MAGIC}'")
    n_users = _manifest_entry(lines, "users", man_path)
    n_words = _manifest_entry(lines, "words", man_path)
    n_edges = _manifest_entry(lines, "edges", man_path)
    n_posts = _manifest_entry(lines, "posts", man_path)

    users = (src / "users.txt").read_text(encoding="utf-8").splitlines()
    words = (src / "vocab.txt").read_text(encoding="utf-8").splitlines()
    if len(users) != n_users:
        raise CorpusFormatError(f"{src / 'users.txt'}: expected {n_users} users")
    if len(words) != n_words:
        raise CorpusFormatError(f"{src / 'vocab.txt'}: expected {n_words} words")

    edges = []
    epath = src / "edges.txt"
    for lineno, line in enumerate(epath.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except (ValueError, IndexError):
            raise CorpusFormatError(f"{epath}:{lineno}: bad edge line") from None
    if len(edges) != n_edges:
        raise CorpusFormatError(f"{epath}: expected {n_edges} edges")

    posts = []
    ppath = src / "posts.txt"
    for lineno, line in enumerate(ppath.read_text(encoding="utf-8").splitlines(), 1):
        author, sep, rest = line.partition("\t")
        try:
            if not sep:
                raise ValueError
            toks = np.asarray([int(t) for t in rest.split()], dtype=np.int32)
            posts.append(Post(author=int(author), tokens=toks))
        except ValueError:
            raise CorpusFormatError(f"{ppath}:{lineno}: bad post line") from None
    if len(posts) != n_posts:
        raise CorpusFormatError(f"{ppath}: expected {n_posts} posts")

    try:
        return Dataset(
            users=tuple(users),
            vocabulary=Vocabulary.from_words(words),
            graph=FollowGraph(n_users, np.asarray(edges, dtype=np.int32).reshape(-1, 2)),
            posts=tuple(posts),
        )
    except ValueError as exc:
        raise CorpusFormatError(f"{src}: inconsistent bundle: {exc}") from None


def save_split(sp: TrainTestSplit, path) -> None:
    """Persist which posts/links of a parent dataset are held out.

    Test posts are recorded as indices into the parent bundle's post order,
    so the split file plus the parent bundle reconstruct the split exactly.
    """
    parent_posts = _merged_posts(sp)
    test_ids = _test_post_indices(sp, parent_posts)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{SPLIT_MAGIC}\n")
        fh.write(f"fraction {sp.fraction!r}\n")
        fh.write(f"seed {sp.seed}\n")
        fh.write(f"test_links {sp.test_links.shape[0]}\n")
        for s, t in sp.test_links:
            fh.write(f"{s}\t{t}\n")
        fh.write(f"test_posts {len(test_ids)}\n")
        for i in test_ids:
            fh.write(f"{i}\n")


def _merged_posts(sp: TrainTestSplit) -> list[Post]:
    merged = list(sp.train.posts) + list(sp.test_posts)
    merged.sort(key=lambda p: p.author)
    return merged


def _test_post_indices(sp: TrainTestSplit, parent_posts) -> list[int]:
    # Match test posts back to parent positions; token arrays are compared
    # by value, consuming matches left to right within each author group.
    used = set()
    out = []
    for tp in sp.test_posts:
        for i, pp in enumerate(parent_posts):
            if i in used or pp.author != tp.author:
                continue
            if pp.tokens.shape == tp.tokens.shape and (pp.tokens == tp.tokens).all():
                out.append(i)
                used.add(i)
                break
        else:
            raise ValueError("test post not found among parent posts")
    return sorted(out)


def load_split(dataset: Dataset, path) -> TrainTestSplit:
    """Rebuild a TrainTestSplit of `dataset` from a HATSPLIT v1 file."""
    p = Path(path)
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != SPLIT_MAGIC:
        raise CorpusFormatError(f"{p}:1: expected magic '{SPLIT_MAGIC}'")
    try:
        fraction = float(lines[1].split()[1])
        seed = int(lines[2].split()[1])
        n_links = int(lines[3].split()[1])
        cursor = 4
        test_edges = []
        for i in range(n_links):
            s, t = lines[cursor + i].split("\t")
            test_edges.append((int(s), int(t)))
        cursor += n_links
        n_posts = int(lines[cursor].split()[1])
        cursor += 1
        test_idx = sorted(int(lines[cursor + i]) for i in range(n_posts))
    except (IndexError, ValueError):
        raise CorpusFormatError(f"{p}: truncated or malformed split file") from None

    test_set = set(test_idx)
    if test_set and (min(test_set) < 0 or max(test_set) >= dataset.n_posts):
        raise CorpusFormatError(f"{p}: post index out of range for dataset")
    test_pairs = set(test_edges)
    all_pairs = dataset.graph.edge_set()
    if not test_pairs <= all_pairs:
        raise CorpusFormatError(f"{p}: test link not present in dataset")

    train_edges = sorted(all_pairs - test_pairs)
    train_posts = tuple(
        post for i, post in enumerate(dataset.posts) if i not in test_set
    )
    test_posts = tuple(dataset.posts[i] for i in test_idx)
    train = Dataset(
        users=dataset.users,
        vocabulary=dataset.vocabulary,
        graph=FollowGraph(
            dataset.n_users, np.asarray(train_edges, dtype=np.int32).reshape(-1, 2)
        ),
        posts=train_posts,
    )
    test_links = np.asarray(sorted(test_edges), dtype=np.int32).reshape(-1, 2)
    test_links.setflags(write=False)
    return TrainTestSplit(
        train=train,
        test_links=test_links,
        test_posts=test_posts,
        fraction=fraction,
        seed=seed,
    )
