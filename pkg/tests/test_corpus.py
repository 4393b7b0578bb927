import numpy as np
import pytest

from hat import corpus
from hat.corpus import FollowGraph, PairSample
from hat.errors import CorpusFormatError

from conftest import build_dataset


# ---------------------------------------------------------------------------
# tokenize / ingest


def test_tokenize_lowercases_and_splits():
    assert corpus.tokenize("Hello,  WORLD! 2nd\ttime") == [
        "hello", "world", "2nd", "time",
    ]


def test_ingest_two_user_fixture(edge_post_files):
    ds = corpus.ingest(*edge_post_files, min_word_count=1)
    assert ds.n_users == 2
    assert ds.n_words == 2
    assert ds.graph.n_edges == 1
    assert ds.graph.has_edge(ds.user_id("a"), ds.user_id("b"))


def test_ingest_min_count_drops_rare_words(edge_post_files):
    # "x" occurs 3 times, "y" once
    ds = corpus.ingest(*edge_post_files, min_word_count=3)
    assert ds.vocabulary.words == ("x",)
    b_post = ds.posts_of(ds.user_id("b"))[0]
    assert b_post.tokens.tolist() == [0]


def test_ingest_empty_edge_file(tmp_path, edge_post_files):
    empty = tmp_path / "none.tsv"
    empty.write_text("", encoding="utf-8")
    ds = corpus.ingest(empty, edge_post_files[1], min_word_count=1)
    assert ds.graph.n_edges == 0
    assert ds.n_users == 2


def test_ingest_rejects_malformed_edge_line(tmp_path, edge_post_files):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a b c no tabs\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        corpus.ingest(bad, edge_post_files[1], min_word_count=1)


# ---------------------------------------------------------------------------
# split


def _four_post_dataset():
    # user 0: 4 posts, 2 out-links; users 1, 2 one post each
    return build_dataset(
        3,
        [(0, 1), (0, 2), (1, 2)],
        [(0, [0]), (0, [1]), (0, [0, 1]), (0, [1, 1]), (1, [0]), (2, [1])],
        vocab_size=2,
    )


def test_split_fraction_one_keeps_everything():
    ds = _four_post_dataset()
    sp = corpus.split(ds, 1.0, seed=3)
    assert sp.test_links.size == 0
    assert len(sp.test_posts) == 0
    assert sp.train.graph.n_edges == ds.graph.n_edges
    assert len(sp.train.posts) == len(ds.posts)


def test_split_half_keeps_ceil_per_user():
    ds = _four_post_dataset()
    sp = corpus.split(ds, 0.5, seed=3)
    train_posts_u0 = [p for p in sp.train.posts if p.author == 0]
    assert len(train_posts_u0) == 2
    assert len(sp.train.graph.out_neighbors(0)) == 1
    test_u0 = sp.test_links[sp.test_links[:, 0] == 0]
    assert len(test_u0) == 1
    # held-out pieces complement the retained ones
    assert len(train_posts_u0) + sum(p.author == 0 for p in sp.test_posts) == 4


def test_split_same_seed_identical():
    ds = _four_post_dataset()
    a = corpus.split(ds, 0.5, seed=11)
    b = corpus.split(ds, 0.5, seed=11)
    assert np.array_equal(a.test_links, b.test_links)
    assert [p.tokens.tolist() for p in a.test_posts] == [
        p.tokens.tolist() for p in b.test_posts
    ]
    assert a.train.graph.edge_set() == b.train.graph.edge_set()


def test_split_keeps_one_post_and_link_minimum():
    # fraction 0.5 of 1 post still leaves the post in train
    ds = build_dataset(2, [(0, 1)], [(0, [0]), (1, [0])], vocab_size=1)
    sp = corpus.split(ds, 0.5, seed=0)
    assert len(sp.train.posts) == 2
    assert sp.train.graph.n_edges == 1


def test_split_rejects_bad_fraction():
    ds = _four_post_dataset()
    for frac in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            corpus.split(ds, frac, seed=0)


# ---------------------------------------------------------------------------
# two-hop candidates


def test_two_hop_chain():
    g = FollowGraph(3, np.array([[0, 1], [1, 2]], dtype=np.int32))
    assert corpus.two_hop_candidates(g, 0).tolist() == [2]


def test_two_hop_no_out_links():
    g = FollowGraph(3, np.array([[1, 2]], dtype=np.int32))
    assert corpus.two_hop_candidates(g, 0).size == 0


def test_two_hop_complete_triangle_empty():
    edges = [(u, v) for u in range(3) for v in range(3) if u != v]
    g = FollowGraph(3, np.array(edges, dtype=np.int32))
    for u in range(3):
        assert corpus.two_hop_candidates(g, u).size == 0


def test_two_hop_excludes_self_and_followees():
    # 0->1, 1->0, 1->2: two hops from 0 reach {0, 2}; 0 itself is dropped
    g = FollowGraph(3, np.array([[0, 1], [1, 0], [1, 2]], dtype=np.int32))
    assert corpus.two_hop_candidates(g, 0).tolist() == [2]


# ---------------------------------------------------------------------------
# pair subsampling


def _star_chain():
    return FollowGraph(
        4, np.array([[0, 1], [1, 2], [1, 3]], dtype=np.int32)
    )


def test_subsample_p100_keeps_all_candidates():
    pairs = corpus.subsample_pairs(_star_chain(), 100.0, seed=5)
    assert pairs.negatives_of(0).tolist() == [2, 3]


def test_subsample_p0_keeps_none():
    pairs = corpus.subsample_pairs(_star_chain(), 0.0, seed=5)
    assert pairs.negatives_of(0).size == 0
    assert pairs.positives_of(0).tolist() == [1]


def test_subsample_p50_keeps_ceil_half():
    pairs = corpus.subsample_pairs(_star_chain(), 50.0, seed=5)
    negs = pairs.negatives_of(0)
    assert negs.size == 1
    assert negs[0] in (2, 3)


def test_subsample_deterministic_and_order_free():
    g = _star_chain()
    a = corpus.subsample_pairs(g, 50.0, seed=9)
    b = corpus.subsample_pairs(g, 50.0, seed=9)
    assert np.array_equal(a.src, b.src)
    assert np.array_equal(a.dst, b.dst)
    assert np.array_equal(a.label, b.label)


def test_pair_sample_negatives_never_edges():
    rng = np.random.default_rng(0)
    for trial in range(5):
        n = 12
        edges = np.unique(rng.integers(0, n, size=(40, 2)), axis=0)
        edges = edges[edges[:, 0] != edges[:, 1]]
        g = FollowGraph(n, edges.astype(np.int32))
        pairs = corpus.subsample_pairs(g, 75.0, seed=trial)
        eset = g.edge_set()
        for s, d, r in zip(pairs.src, pairs.dst, pairs.label):
            assert ((int(s), int(d)) in eset) == bool(r)


def test_pair_sample_by_target_regroups_everything():
    pairs = corpus.subsample_pairs(_star_chain(), 100.0, seed=1)
    ptr, src, lbl = pairs.by_target()
    assert ptr[-1] == pairs.n_pairs
    regrouped = set()
    for v in range(len(ptr) - 1):
        for i in range(ptr[v], ptr[v + 1]):
            regrouped.add((int(src[i]), v, int(lbl[i])))
    original = {
        (int(s), int(d), int(r))
        for s, d, r in zip(pairs.src, pairs.dst, pairs.label)
    }
    assert regrouped == original


# ---------------------------------------------------------------------------
# serialization


def test_dataset_roundtrip_is_byte_identical(tmp_path, tiny_dataset):
    out1 = tmp_path / "d1"
    out2 = tmp_path / "d2"
    corpus.save_dataset(tiny_dataset, out1)
    loaded = corpus.load_dataset(out1)
    assert loaded.users == tiny_dataset.users
    assert loaded.vocabulary.words == tiny_dataset.vocabulary.words
    assert loaded.graph.edge_set() == tiny_dataset.graph.edge_set()
    assert [p.tokens.tolist() for p in loaded.posts] == [
        p.tokens.tolist() for p in tiny_dataset.posts
    ]
    corpus.save_dataset(loaded, out2)
    for name in ("users.txt", "vocab.txt", "edges.txt", "posts.txt",
                 "manifest.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_load_dataset_rejects_missing_manifest(tmp_path):
    with pytest.raises(CorpusFormatError):
        corpus.load_dataset(tmp_path)


def test_split_roundtrip(tmp_path, tiny_dataset):
    sp = corpus.split(tiny_dataset, 0.5, seed=2)
    path = tmp_path / "split.txt"
    corpus.save_split(sp, path)
    back = corpus.load_split(tiny_dataset, path)
    assert np.array_equal(back.test_links, sp.test_links)
    assert [p.tokens.tolist() for p in back.test_posts] == [
        p.tokens.tolist() for p in sp.test_posts
    ]
    assert back.train.graph.edge_set() == sp.train.graph.edge_set()
    assert back.fraction == sp.fraction
    # re-save is byte identical
    path2 = tmp_path / "split2.txt"
    corpus.save_split(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_stats_counts(tiny_dataset):
    stats = corpus.dataset_stats(tiny_dataset)
    assert stats["total_users"] == 3
    assert stats["total_links"] == 3
    assert stats["total_posts"] == 3
    assert stats["vocabulary"] == 3
