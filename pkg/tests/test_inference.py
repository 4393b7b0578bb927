import numpy as np
import pytest

from hat import corpus, inference, model
from hat.corpus import PairSample
from hat.errors import NumericalError
from hat.inference import (
    FitConfig,
    FitTrace,
    em_step,
    fit,
    init_params,
    log_likelihood_gradients,
    sample_topics,
)
from hat.model import (
    HyperParams,
    ModelParams,
    floor_normalize,
    joint_log_likelihood,
)

from conftest import build_dataset


def _instance(seed=0, n=5, k=2, w=6, n_pairs=10, posts_per_user=2):
    """Random small instance with parameters away from the probability floor."""
    rng = np.random.default_rng(seed)
    posts = [
        (u, rng.integers(0, w, rng.integers(1, 4)).tolist())
        for u in range(n)
        for _ in range(posts_per_user)
    ]
    ds = build_dataset(n, [], posts, vocab_size=w)
    dst = rng.integers(0, n, n_pairs).astype(np.int32)
    label = rng.integers(0, 2, n_pairs).astype(np.int8)
    counts = np.bincount(rng.integers(0, n, n_pairs), minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    pairs = PairSample(n_users=n, ptr=ptr, dst=dst, label=label)
    params = ModelParams(
        topic_word=floor_normalize(rng.dirichlet(np.ones(w) * 5.0, size=k)),
        user_topic=floor_normalize(rng.dirichlet(np.ones(k) * 5.0, size=n)),
        authority=rng.uniform(0.5, 2.0, (n, k)),
        hub=rng.uniform(0.5, 2.0, (n, k)),
    )
    z = rng.integers(0, k, len(posts)).astype(np.int32)
    hp = HyperParams(n_topics=k, alpha=0.7, gamma=0.4, sigma=0.8,
                     delta=0.9, lam=0.3)
    return ds, pairs, params, z, hp


def _raw_params(topic_word, user_topic, authority, hub):
    """ModelParams shell that skips validation, for finite-difference probes."""
    p = ModelParams.__new__(ModelParams)
    object.__setattr__(p, "topic_word", topic_word)
    object.__setattr__(p, "user_topic", user_topic)
    object.__setattr__(p, "authority", authority)
    object.__setattr__(p, "hub", hub)
    return p


# ---------------------------------------------------------------------------
# init_params


def test_init_params_valid_and_deterministic(tiny_dataset):
    hp = HyperParams(n_topics=3, alpha=0.5, gamma=0.5, lam=0.2)
    p1, z1 = init_params(tiny_dataset, hp, seed=5)
    p2, z2 = init_params(tiny_dataset, hp, seed=5)
    p1.validate()
    assert np.array_equal(z1, z2)
    for name in ("topic_word", "user_topic", "authority", "hub"):
        assert np.array_equal(getattr(p1, name), getattr(p2, name))
    p3, _ = init_params(tiny_dataset, hp, seed=6)
    assert not np.array_equal(p1.topic_word, p3.topic_word)


def test_init_params_k1_degenerate(tiny_dataset):
    hp = HyperParams(n_topics=1, lam=0.2)
    params, z = init_params(tiny_dataset, hp, seed=0)
    assert np.allclose(params.user_topic, 1.0, atol=1e-9)
    assert (z == 0).all()


def test_init_params_assignments_cover_topics():
    ds = build_dataset(
        4, [], [(a, [0]) for a in range(4) for _ in range(100)], vocab_size=2
    )
    hp = HyperParams(n_topics=3, alpha=0.5, gamma=0.5, lam=0.2)
    _, z = init_params(ds, hp, seed=1)
    assert z.shape == (400,)
    assert set(np.unique(z).tolist()) == {0, 1, 2}
    freqs = np.bincount(z, minlength=3) / 400.0
    assert np.abs(freqs - 1.0 / 3).max() < 0.15


def test_init_params_differs_from_generate_with_same_seed():
    hp = HyperParams(n_topics=2, alpha=0.5, gamma=0.5, lam=0.2)
    ds, truth, _ = model.generate(hp, 10, 2, 3, 8, seed=77)
    params, _ = init_params(ds, hp, seed=77)
    assert not np.allclose(params.topic_word, truth.topic_word)


# ---------------------------------------------------------------------------
# sample_topics


def test_sample_topics_k1_all_zero(tiny_dataset):
    hp = HyperParams(n_topics=1, lam=0.2)
    params, _ = init_params(tiny_dataset, hp, seed=0)
    assert (sample_topics(tiny_dataset, params, 3) == 0).all()


def test_sample_topics_deterministic(tiny_dataset):
    hp = HyperParams(n_topics=3, alpha=0.5, gamma=0.5, lam=0.2)
    params, _ = init_params(tiny_dataset, hp, seed=1)
    a = sample_topics(tiny_dataset, params, 11)
    b = sample_topics(tiny_dataset, params, 11)
    c = sample_topics(tiny_dataset, params, 12)
    assert np.array_equal(a, b)
    assert a.shape == c.shape


def test_sample_topics_worker_count_irrelevant(tiny_dataset):
    hp = HyperParams(n_topics=3, alpha=0.5, gamma=0.5, lam=0.2)
    params, _ = init_params(tiny_dataset, hp, seed=1)
    a = sample_topics(tiny_dataset, params, 11, workers=1)
    b = sample_topics(tiny_dataset, params, 11, workers=4)
    assert np.array_equal(a, b)


def test_sample_topics_matches_hand_posterior():
    # theta=(.5,.5), one token with tau_0(w)=0.9, tau_1(w)=0.1 -> P(z=0)=0.9
    copies = 100_000
    ds = build_dataset(1, [], [(0, [0])] * copies, vocab_size=2)
    params = ModelParams(
        topic_word=np.array([[0.9, 0.1], [0.1, 0.9]]),
        user_topic=np.array([[0.5, 0.5]]),
        authority=np.ones((1, 2)),
        hub=np.ones((1, 2)),
    )
    z = sample_topics(ds, params, 1234)
    assert np.mean(z == 0) == pytest.approx(0.9, abs=0.01)


def test_sample_topics_uses_products_over_tokens():
    # two tokens shift the posterior to 0.81/(0.81+0.01)
    copies = 100_000
    ds = build_dataset(1, [], [(0, [0, 0])] * copies, vocab_size=2)
    params = ModelParams(
        topic_word=np.array([[0.9, 0.1], [0.1, 0.9]]),
        user_topic=np.array([[0.5, 0.5]]),
        authority=np.ones((1, 2)),
        hub=np.ones((1, 2)),
    )
    z = sample_topics(ds, params, 99)
    want = 0.81 / 0.82
    assert np.mean(z == 0) == pytest.approx(want, abs=0.01)


# ---------------------------------------------------------------------------
# gradients


def test_gaussian_pull_vanishes_at_prior_mean():
    ds, _, params, z, hp = _instance(seed=2)
    n, k = params.user_topic.shape
    pairs = PairSample(
        n_users=n,
        ptr=np.zeros(n + 1, dtype=np.int64),
        dst=np.empty(0, dtype=np.int32),
        label=np.empty(0, dtype=np.int8),
    )
    at_mean = ModelParams(
        topic_word=params.topic_word,
        user_topic=params.user_topic,
        authority=np.exp(params.user_topic),
        hub=np.exp(params.user_topic),
    )
    g = log_likelihood_gradients(ds, pairs, at_mean, z, hp)
    # no links and log A = theta: only the volume term -1 remains
    assert np.allclose(g["log_authority"], -1.0, atol=1e-12)
    assert np.allclose(g["log_hub"], -1.0, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    ds, pairs, params, z, hp = _instance(seed=seed)
    grads = log_likelihood_gradients(ds, pairs, params, z, hp)
    h = 1e-5

    def obj(p):
        return joint_log_likelihood(ds, pairs, p, z, hp)

    mats = {
        "topic_word": np.array(params.topic_word, copy=True),
        "user_topic": np.array(params.user_topic, copy=True),
        "log_hub": np.log(params.hub),
        "log_authority": np.log(params.authority),
    }

    def rebuild(name, mat):
        fields = {
            "topic_word": mats["topic_word"],
            "user_topic": mats["user_topic"],
            "hub": np.exp(mats["log_hub"]),
            "authority": np.exp(mats["log_authority"]),
        }
        if name in ("topic_word", "user_topic"):
            fields[name] = mat
        elif name == "log_hub":
            fields["hub"] = np.exp(mat)
        else:
            fields["authority"] = np.exp(mat)
        return _raw_params(
            fields["topic_word"], fields["user_topic"],
            fields["authority"], fields["hub"],
        )

    for name, mat in mats.items():
        for idx in np.ndindex(*mat.shape):
            up = np.array(mat, copy=True)
            dn = np.array(mat, copy=True)
            up[idx] += h
            dn[idx] -= h
            fd = (obj(rebuild(name, up)) - obj(rebuild(name, dn))) / (2 * h)
            got = grads[name][idx]
            denom = max(abs(fd), abs(got), 1e-3)
            assert abs(got - fd) / denom < 1e-4, (name, idx, got, fd)


# ---------------------------------------------------------------------------
# em_step


def test_em_step_monotone_at_fixed_assignments():
    ds, pairs, params, z, hp = _instance(seed=4, n=8, n_pairs=22)
    cfg = FitConfig(max_iters=1, em_steps_per_iter=1, learning_rate=0.5)
    prev = joint_log_likelihood(ds, pairs, params, z, hp)
    for _ in range(20):
        params = em_step(ds, pairs, params, z, hp, cfg)
        cur = joint_log_likelihood(ds, pairs, params, z, hp)
        assert cur >= prev - 1e-6
        prev = cur


def test_em_step_keeps_invariants():
    ds, pairs, params, z, hp = _instance(seed=5)
    cfg = FitConfig(max_iters=1, em_steps_per_iter=3, learning_rate=0.5)
    out = em_step(ds, pairs, params, z, hp, cfg)
    out.validate()


def test_em_step_zero_learning_rate_limit():
    ds, pairs, params, z, hp = _instance(seed=6)
    cfg = FitConfig(max_iters=1, em_steps_per_iter=1, learning_rate=1e-20)
    out = em_step(ds, pairs, params, z, hp, cfg)
    for name in ("topic_word", "user_topic", "authority", "hub"):
        assert np.allclose(
            getattr(out, name), getattr(params, name), atol=1e-12
        )


def test_em_step_reports_block_on_numerical_failure():
    ds, pairs, params, z, _ = _instance(seed=7)
    hp = HyperParams(n_topics=2, alpha=0.7, gamma=0.4, sigma=1e-300,
                     delta=0.9, lam=0.3)
    cfg = FitConfig(max_iters=1, em_steps_per_iter=1, learning_rate=0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(NumericalError, match="user_topic"):
            em_step(ds, pairs, params, z, hp, cfg)


def test_em_step_rejects_bad_assignments():
    ds, pairs, params, z, hp = _instance(seed=8)
    cfg = FitConfig(max_iters=1)
    with pytest.raises(ValueError):
        em_step(ds, pairs, params, z[:-1], hp, cfg)
    bad = np.array(z, copy=True)
    bad[0] = 99
    with pytest.raises(ValueError):
        em_step(ds, pairs, params, bad, hp, cfg)


# ---------------------------------------------------------------------------
# fit


def _fit_setup(seed=0, n=30, k=2):
    hp = HyperParams(n_topics=k, alpha=0.4, gamma=0.2, sigma=0.7,
                     delta=0.7, lam=0.1, subsample_pct=80.0)
    ds, _, _ = model.generate(hp, n, 3, 4, 25, seed=seed)
    pairs = corpus.subsample_pairs(ds.graph, hp.subsample_pct, seed)
    return ds, pairs, hp


def test_fit_single_iteration_trace():
    ds, pairs, hp = _fit_setup()
    cfg = FitConfig(max_iters=1, seed=3)
    params, z, trace = fit(ds, pairs, hp, cfg)
    assert len(trace.iterations) == 1
    assert trace.iterations[0].iteration == 1
    assert z.shape == (ds.n_posts,)
    params.validate()


def test_fit_deterministic_per_seed():
    ds, pairs, hp = _fit_setup()
    cfg = FitConfig(max_iters=4, seed=9)
    p1, z1, t1 = fit(ds, pairs, hp, cfg)
    p2, z2, t2 = fit(ds, pairs, hp, cfg)
    assert np.array_equal(z1, z2)
    assert t1.objectives().tolist() == t2.objectives().tolist()
    for name in ("topic_word", "user_topic", "authority", "hub"):
        assert np.array_equal(getattr(p1, name), getattr(p2, name))


def test_fit_worker_count_gives_identical_results():
    ds, pairs, hp = _fit_setup(seed=1)
    base = dict(max_iters=4, em_steps_per_iter=2, seed=5)
    p1, z1, t1 = fit(ds, pairs, hp, FitConfig(workers=1, **base))
    p4, z4, t4 = fit(ds, pairs, hp, FitConfig(workers=4, **base))
    assert np.array_equal(z1, z4)
    assert t1.objectives().tolist() == t4.objectives().tolist()
    for name in ("topic_word", "user_topic", "authority", "hub"):
        assert np.array_equal(getattr(p1, name), getattr(p4, name))


def test_fit_objective_trend_improves():
    ds, pairs, hp = _fit_setup(seed=2, n=40)
    cfg = FitConfig(max_iters=15, em_steps_per_iter=2,
                    convergence_tol=1e-12, seed=7)
    _, _, trace = fit(ds, pairs, hp, cfg)
    objs = trace.objectives()
    assert np.median(objs[-5:]) >= np.median(objs[:5])


def test_fit_convergence_flag_on_tight_tolerance():
    ds, pairs, hp = _fit_setup(seed=3)
    cfg = FitConfig(max_iters=100, convergence_tol=1e-1, seed=1)
    _, _, trace = fit(ds, pairs, hp, cfg)
    assert trace.converged
    assert len(trace.iterations) < 100


def test_fit_trace_roundtrip(tmp_path):
    ds, pairs, hp = _fit_setup()
    cfg = FitConfig(max_iters=3, seed=2)
    _, _, trace = fit(ds, pairs, hp, cfg)
    path = tmp_path / "trace.txt"
    trace.save(path)
    back = FitTrace.load(path)
    assert back.objectives().tolist() == trace.objectives().tolist()
    assert [s.iteration for s in back.iterations] == [1, 2, 3]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"max_iters": 0},
        {"em_steps_per_iter": 0},
        {"learning_rate": 0.0},
        {"convergence_tol": 0.0},
        {"workers": 0},
    ],
)
def test_fit_config_validation(kwargs):
    with pytest.raises(ValueError):
        FitConfig(**kwargs)
