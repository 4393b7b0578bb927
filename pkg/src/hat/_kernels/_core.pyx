# cython: language_level=3
"""Compiled kernels; must stay bit-compatible with hat._kernels._pure.

Every loop mirrors the pure-Python reference operation for operation: same
evaluation order, same associativity, libm exp/log on both sides. Built
with -O2 only (no -ffast-math, no -march flags) so the compiler cannot
contract or reassociate floating-point expressions. Do not "optimize" the
arithmetic here without updating the reference in lockstep.

The two hot kernels (hat_gibbs_sweep, link_terms) release the GIL so the
orchestrator can shard disjoint [start, stop) ranges across threads.
"""

from libc.math cimport exp, log, INFINITY
from libc.stdlib cimport free, malloc


def hat_gibbs_sweep(const int[::1] authors, const long long[::1] post_ptr,
                    const int[::1] tokens, const double[:, ::1] log_theta,
                    const double[:, ::1] log_tau, const double[::1] uniforms,
                    int[::1] z_out, Py_ssize_t start, Py_ssize_t stop):
    """Draw a topic for each post in [start, stop); see the pure reference."""
    cdef Py_ssize_t n_topics = log_tau.shape[0]
    cdef Py_ssize_t s, t, lo, hi
    cdef int k, znew, u
    cdef double acc, m, tot, p, r
    cdef double* scores = <double*> malloc(n_topics * sizeof(double))
    if scores == NULL:
        raise MemoryError()
    try:
        with nogil:
            for s in range(start, stop):
                u = authors[s]
                lo = post_ptr[s]
                hi = post_ptr[s + 1]
                m = -INFINITY
                for k in range(n_topics):
                    acc = log_theta[u, k]
                    for t in range(lo, hi):
                        acc += log_tau[k, tokens[t]]
                    scores[k] = acc
                    if acc > m:
                        m = acc
                tot = 0.0
                for k in range(n_topics):
                    p = exp(scores[k] - m)
                    scores[k] = p
                    tot += p
                r = uniforms[s] * tot
                acc = 0.0
                znew = <int> n_topics - 1
                for k in range(n_topics):
                    acc += scores[k]
                    if r < acc:
                        znew = k
                        break
                z_out[s] = znew
    finally:
        free(scores)


def link_terms(const long long[::1] ptr, const int[::1] cols,
               const signed char[::1] labels, const double[:, ::1] rowmat,
               const double[:, ::1] colmat, double lam,
               double eps, double[::1] ll_out, double[:, ::1] grad_out,
               int want_grad, Py_ssize_t start, Py_ssize_t stop):
    """Per-row link log-likelihood / gradient; see the pure reference."""
    cdef Py_ssize_t n_topics = rowmat.shape[1]
    cdef Py_ssize_t r_ix, i, lo, hi
    cdef int k, c
    cdef double total, x, q, dldq, coef, r
    cdef double* grow = <double*> malloc(n_topics * sizeof(double))
    if grow == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r_ix in range(start, stop):
                total = 0.0
                for k in range(n_topics):
                    grow[k] = 0.0
                lo = ptr[r_ix]
                hi = ptr[r_ix + 1]
                for i in range(lo, hi):
                    c = cols[i]
                    x = 0.0
                    for k in range(n_topics):
                        x += rowmat[r_ix, k] * colmat[c, k]
                    q = 2.0 * (1.0 / (exp(-lam * x) + 1.0) - 0.5)
                    if labels[i] == 1:
                        if q > eps:
                            total += log(q)
                            dldq = 1.0 / q
                        else:
                            total += log(eps)
                            dldq = 0.0
                    else:
                        if 1.0 - q > eps:
                            total += log(1.0 - q)
                            dldq = -1.0 / (1.0 - q)
                        else:
                            total += log(eps)
                            dldq = 0.0
                    if want_grad != 0:
                        coef = dldq * 0.5 * lam * (1.0 - q * q)
                        for k in range(n_topics):
                            grow[k] += coef * rowmat[r_ix, k] * colmat[c, k]
                ll_out[r_ix] = total
                if want_grad != 0:
                    for k in range(n_topics):
                        grad_out[r_ix, k] = grow[k]
    finally:
        free(grow)


def lda_sweep(const int[::1] doc_of, const int[::1] word_of, int[::1] z,
              long long[:, ::1] n_dk, long long[:, ::1] n_kw,
              long long[::1] n_k, double alpha, double gamma,
              Py_ssize_t n_words, const double[::1] uniforms):
    """One collapsed Gibbs pass over all tokens; see the pure reference."""
    cdef Py_ssize_t n_topics = n_kw.shape[0]
    cdef Py_ssize_t t, n_tokens = doc_of.shape[0]
    cdef int k, znew, d, w, old
    cdef double wg = n_words * gamma
    cdef double tot, p, r, acc
    cdef double* probs = <double*> malloc(n_topics * sizeof(double))
    if probs == NULL:
        raise MemoryError()
    try:
        with nogil:
            for t in range(n_tokens):
                d = doc_of[t]
                w = word_of[t]
                old = z[t]
                n_dk[d, old] -= 1
                n_kw[old, w] -= 1
                n_k[old] -= 1
                tot = 0.0
                for k in range(n_topics):
                    p = (n_dk[d, k] + alpha) * (n_kw[k, w] + gamma) / (n_k[k] + wg)
                    probs[k] = p
                    tot += p
                r = uniforms[t] * tot
                acc = 0.0
                znew = <int> n_topics - 1
                for k in range(n_topics):
                    acc += probs[k]
                    if r < acc:
                        znew = k
                        break
                z[t] = znew
                n_dk[d, znew] += 1
                n_kw[znew, w] += 1
                n_k[znew] += 1
    finally:
        free(probs)


def tlda_sweep(const int[::1] authors, const long long[::1] post_ptr,
               const int[::1] tokens,
               int[::1] z_post, signed char[::1] y_tok,
               long long[:, ::1] n_uk, long long[:, ::1] n_kw,
               long long[::1] n_k, long long[::1] bg_w,
               long long[::1] bg_total, long long[::1] sw, double alpha,
               double gamma, double pi_a, double pi_b, int use_background,
               Py_ssize_t n_words, double[::1] z_uniforms,
               double[::1] y_uniforms):
    """One Gibbs pass of the per-post model with a background channel."""
    cdef Py_ssize_t n_topics = n_kw.shape[0]
    cdef Py_ssize_t s, t, lo, hi, n_posts = authors.shape[0]
    cdef int k, znew, u, old, w
    cdef double wg = n_words * gamma
    cdef double acc, m, tot, p, r, p0, p1
    cdef double* scores = <double*> malloc(n_topics * sizeof(double))
    if scores == NULL:
        raise MemoryError()
    try:
        with nogil:
            for s in range(n_posts):
                u = authors[s]
                lo = post_ptr[s]
                hi = post_ptr[s + 1]
                old = z_post[s]
                n_uk[u, old] -= 1
                for t in range(lo, hi):
                    if y_tok[t] == 1:
                        n_kw[old, tokens[t]] -= 1
                        n_k[old] -= 1
                m = -INFINITY
                for k in range(n_topics):
                    acc = log(n_uk[u, k] + alpha)
                    for t in range(lo, hi):
                        if y_tok[t] == 1:
                            acc += log(n_kw[k, tokens[t]] + gamma) - log(n_k[k] + wg)
                    scores[k] = acc
                    if acc > m:
                        m = acc
                tot = 0.0
                for k in range(n_topics):
                    p = exp(scores[k] - m)
                    scores[k] = p
                    tot += p
                r = z_uniforms[s] * tot
                acc = 0.0
                znew = <int> n_topics - 1
                for k in range(n_topics):
                    acc += scores[k]
                    if r < acc:
                        znew = k
                        break
                z_post[s] = znew
                n_uk[u, znew] += 1
                for t in range(lo, hi):
                    if y_tok[t] == 1:
                        n_kw[znew, tokens[t]] += 1
                        n_k[znew] += 1
                if use_background == 0:
                    continue
                for t in range(lo, hi):
                    w = tokens[t]
                    if y_tok[t] == 1:
                        n_kw[znew, w] -= 1
                        n_k[znew] -= 1
                        sw[1] -= 1
                    else:
                        bg_w[w] -= 1
                        bg_total[0] -= 1
                        sw[0] -= 1
                    p0 = (sw[0] + pi_b) * (bg_w[w] + gamma) / (bg_total[0] + wg)
                    p1 = (sw[1] + pi_a) * (n_kw[znew, w] + gamma) / (n_k[znew] + wg)
                    r = y_uniforms[t] * (p0 + p1)
                    if r < p0:
                        y_tok[t] = 0
                        bg_w[w] += 1
                        bg_total[0] += 1
                        sw[0] += 1
                    else:
                        y_tok[t] = 1
                        n_kw[znew, w] += 1
                        n_k[znew] += 1
                        sw[1] += 1
    finally:
        free(scores)
