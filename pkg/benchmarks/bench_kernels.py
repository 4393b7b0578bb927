"""Time the pure-Python kernels against the compiled extension.

Runs each kernel on the same inputs under both backends, checks the
outputs are bit-identical, and prints a timing table. Sizes default to a
medium synthetic workload; scale with --users/--posts/--tokens.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --users 2000 --repeats 5
"""

import argparse
import time

import numpy as np

from hat._kernels import _pure

try:
    from hat._kernels import _core
except ImportError:
    _core = None


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_gibbs(args, rng):
    n, p, k, w = args.users, args.posts, args.topics, args.vocab
    authors = np.sort(rng.integers(0, n, p)).astype(np.int32)
    lens = rng.integers(2, 12, p)
    ptr = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    tokens = rng.integers(0, w, int(ptr[-1])).astype(np.int32)
    log_theta = np.log(rng.dirichlet(np.ones(k), n))
    log_tau = np.log(rng.dirichlet(np.ones(w), k))
    uniforms = rng.random(p)

    def run(impl):
        z = np.empty(p, dtype=np.int32)
        impl.hat_gibbs_sweep(authors, ptr, tokens, log_theta, log_tau,
                             uniforms, z, 0, p)
        return z

    return f"gibbs sweep ({p} posts)", run


def bench_links(args, rng):
    n, k = args.users, args.topics
    deg = rng.integers(0, 2 * args.degree, n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=ptr[1:])
    cols = rng.integers(0, n, int(ptr[-1])).astype(np.int32)
    labels = rng.integers(0, 2, int(ptr[-1])).astype(np.int8)
    rowmat = rng.uniform(0.1, 3.0, (n, k))
    colmat = rng.uniform(0.1, 3.0, (n, k))

    def run(impl):
        ll = np.zeros(n)
        grad = np.zeros((n, k))
        impl.link_terms(ptr, cols, labels, rowmat, colmat, 0.05, 1e-10,
                        ll, grad, 1, 0, n)
        return np.concatenate([ll, grad.ravel()])

    return f"link terms ({int(ptr[-1])} pairs)", run


def bench_lda(args, rng):
    d, k, w, t = args.users, args.topics, args.vocab, args.tokens
    doc_of = np.sort(rng.integers(0, d, t)).astype(np.int32)
    word_of = rng.integers(0, w, t).astype(np.int32)
    z0 = rng.integers(0, k, t).astype(np.int32)
    uniforms = rng.random(t)

    def run(impl):
        z = z0.copy()
        n_dk = np.zeros((d, k), dtype=np.int64)
        n_kw = np.zeros((k, w), dtype=np.int64)
        np.add.at(n_dk, (doc_of, z), 1)
        np.add.at(n_kw, (z, word_of), 1)
        n_k = n_kw.sum(axis=1)
        impl.lda_sweep(doc_of, word_of, z, n_dk, n_kw, n_k, 0.5, 0.1, w,
                       uniforms)
        return z

    return f"lda sweep ({t} tokens)", run


def bench_tlda(args, rng):
    n, p, k, w = args.users, args.posts, args.topics, args.vocab
    authors = np.sort(rng.integers(0, n, p)).astype(np.int32)
    lens = rng.integers(2, 12, p)
    ptr = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    t = int(ptr[-1])
    tokens = rng.integers(0, w, t).astype(np.int32)
    z0 = rng.integers(0, k, p).astype(np.int32)
    zu, yu = rng.random(p), rng.random(t)

    def run(impl):
        z = z0.copy()
        y = np.ones(t, dtype=np.int8)
        n_uk = np.zeros((n, k), dtype=np.int64)
        np.add.at(n_uk, (authors, z), 1)
        n_kw = np.zeros((k, w), dtype=np.int64)
        np.add.at(n_kw, (np.repeat(z, lens), tokens), 1)
        n_k = n_kw.sum(axis=1)
        bg_w = np.zeros(w, dtype=np.int64)
        bg_total = np.zeros(1, dtype=np.int64)
        sw = np.array([0, t], dtype=np.int64)
        impl.tlda_sweep(authors, ptr, tokens, z, y, n_uk, n_kw, n_k, bg_w,
                        bg_total, sw, 0.5, 0.1, 1.0, 1.0, 1, w, zu, yu)
        return np.concatenate([z, y.astype(np.int32)])

    return f"per-post sweep ({t} tokens)", run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--posts", type=int, default=10_000)
    ap.add_argument("--tokens", type=int, default=80_000)
    ap.add_argument("--topics", type=int, default=8)
    ap.add_argument("--vocab", type=int, default=1_000)
    ap.add_argument("--degree", type=int, default=40)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _core is None:
        print("compiled extension not importable; timing the fallback only")

    rows = []
    for build in (bench_gibbs, bench_links, bench_lda, bench_tlda):
        name, run = build(args, np.random.default_rng(args.seed))
        t_py, out_py = _time(lambda: run(_pure), args.repeats)
        if _core is None:
            rows.append((name, t_py, None, None))
            continue
        t_cy, out_cy = _time(lambda: run(_core), args.repeats)
        if not np.array_equal(out_py, out_cy):
            raise SystemExit(f"{name}: backends disagree")
        rows.append((name, t_py, t_cy, t_py / t_cy))

    print(f"{'kernel':<28}{'python':>12}{'cython':>12}{'speedup':>10}")
    for name, t_py, t_cy, ratio in rows:
        cy = f"{t_cy * 1e3:9.2f} ms" if t_cy is not None else "         --"
        sp = f"{ratio:9.1f}x" if ratio is not None else "        --"
        print(f"{name:<28}{t_py * 1e3:9.2f} ms{cy}{sp}")
    if _core is not None:
        print("outputs bit-identical across backends for every kernel")


if __name__ == "__main__":
    main()
