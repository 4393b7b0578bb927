import numpy as np
import pytest

from hat.corpus import Dataset, FollowGraph, Post, Vocabulary


def build_dataset(n_users, edges, posts, vocab_size):
    """Small dataset from explicit pieces.

    posts is a list of (author, token_id_list); vocab words are w0..w{V-1};
    users are u0..u{N-1}.
    """
    return Dataset(
        users=tuple(f"u{i}" for i in range(n_users)),
        vocabulary=Vocabulary.from_words(f"w{i}" for i in range(vocab_size)),
        graph=FollowGraph(n_users, np.array(edges, dtype=np.int32).reshape(-1, 2)),
        posts=tuple(
            Post(author=a, tokens=np.array(toks, dtype=np.int32))
            for a, toks in posts
        ),
    )


@pytest.fixture
def tiny_dataset():
    # 3 users, chain 0->1->2 plus 0->2, one post each
    return build_dataset(
        3,
        [(0, 1), (1, 2), (0, 2)],
        [(0, [0, 1]), (1, [1, 1]), (2, [2, 0])],
        vocab_size=3,
    )


@pytest.fixture
def edge_post_files(tmp_path):
    """On-disk ingest fixture: {a->b}, posts a:'x x', b:'x y'."""
    edges = tmp_path / "edges.tsv"
    posts = tmp_path / "posts.tsv"
    edges.write_text("a\tb\n", encoding="utf-8")
    posts.write_text("a\tx x\nb\tx y\n", encoding="utf-8")
    return edges, posts
