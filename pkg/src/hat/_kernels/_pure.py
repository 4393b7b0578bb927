"""Pure-Python kernels; the reference implementation for the compiled core.

Parity contract with hat._kernels._core: same operation order, same
associativity, and libm transcendentals on both sides (math.exp/math.log
here, libc.math in the extension). The compiled module is built without
-ffast-math or FMA contraction, so the two backends return bit-identical
results and all tests can run against either.

All randomness comes in through precomputed uniform arrays supplied by the
caller. Kernels never touch an RNG, which also makes results independent of
how work is sharded across threads: each call writes only rows/posts in its
own [start, stop) range.
"""

import math


def hat_gibbs_sweep(authors, post_ptr, tokens, log_theta, log_tau, uniforms,
                    z_out, start, stop):
    """Draw a topic for each post in [start, stop).

    The post-topic conditional factorizes over posts, so one pass is an
    exact sample: P(z=k) prop. to theta[author,k] * prod_w tau[k,w].
    Scores are max-shifted before exponentiation; the draw inverts the CDF
    at uniforms[post] * total.
    """
    au = authors.tolist()
    pp = post_ptr.tolist()
    tk = tokens.tolist()
    lt = log_theta.tolist()
    lw = log_tau.tolist()
    un = uniforms.tolist()
    n_topics = len(lw)
    scores = [0.0] * n_topics
    for s in range(start, stop):
        row = lt[au[s]]
        lo = pp[s]
        hi = pp[s + 1]
        m = -math.inf
        for k in range(n_topics):
            acc = row[k]
            ltk = lw[k]
            for t in range(lo, hi):
                acc += ltk[tk[t]]
            scores[k] = acc
            if acc > m:
                m = acc
        tot = 0.0
        for k in range(n_topics):
            p = math.exp(scores[k] - m)
            scores[k] = p
            tot += p
        r = un[s] * tot
        acc = 0.0
        znew = n_topics - 1
        for k in range(n_topics):
            acc += scores[k]
            if r < acc:
                znew = k
                break
        z_out[s] = znew


def link_terms(ptr, cols, labels, rowmat, colmat, lam, eps, ll_out, grad_out,
               want_grad, start, stop):
    """Per-row link log-likelihood and, optionally, its score gradient.

    Rows index one side of the pair sample (sources with rowmat=hub,
    colmat=authority; or targets with the roles swapped). For each row r the
    kernel sums r*log q + (1-r)*log(1-q) over its pairs, with q floored at
    eps on either side; grad_out[r] receives the gradient w.r.t. the
    LOG of rowmat[r] (zero where the floor clips).
    """
    pl = ptr.tolist()
    cl = cols.tolist()
    ll = labels.tolist()
    rm = rowmat.tolist()
    cm = colmat.tolist()
    n_topics = rowmat.shape[1]
    grow = [0.0] * n_topics
    for r in range(start, stop):
        total = 0.0
        for k in range(n_topics):
            grow[k] = 0.0
        rrow = rm[r]
        for i in range(pl[r], pl[r + 1]):
            crow = cm[cl[i]]
            x = 0.0
            for k in range(n_topics):
                x += rrow[k] * crow[k]
            q = 2.0 * (1.0 / (math.exp(-lam * x) + 1.0) - 0.5)
            if ll[i] == 1:
                if q > eps:
                    total += math.log(q)
                    dldq = 1.0 / q
                else:
                    total += math.log(eps)
                    dldq = 0.0
            else:
                if 1.0 - q > eps:
                    total += math.log(1.0 - q)
                    dldq = -1.0 / (1.0 - q)
                else:
                    total += math.log(eps)
                    dldq = 0.0
            if want_grad != 0:
                coef = dldq * 0.5 * lam * (1.0 - q * q)
                for k in range(n_topics):
                    grow[k] += coef * rrow[k] * crow[k]
        ll_out[r] = total
        if want_grad != 0:
            for k in range(n_topics):
                grad_out[r, k] = grow[k]


def lda_sweep(doc_of, word_of, z, n_dk, n_kw, n_k, alpha, gamma, n_words,
              uniforms):
    """One collapsed Gibbs pass over all tokens, updating counts in place.

    P(z=k) prop. to (n_dk+alpha) * (n_kw+gamma) / (n_k + W*gamma) with the
    current token removed. Sequential by token index; callers own the count
    consistency (counts must match z on entry).
    """
    dl = doc_of.tolist()
    wl = word_of.tolist()
    un = uniforms.tolist()
    n_topics = n_kw.shape[0]
    wg = n_words * gamma
    probs = [0.0] * n_topics
    for t in range(len(dl)):
        d = dl[t]
        w = wl[t]
        old = z[t]
        n_dk[d, old] -= 1
        n_kw[old, w] -= 1
        n_k[old] -= 1
        tot = 0.0
        for k in range(n_topics):
            p = (n_dk[d, k] + alpha) * (n_kw[k, w] + gamma) / (n_k[k] + wg)
            probs[k] = p
            tot += p
        r = un[t] * tot
        acc = 0.0
        znew = n_topics - 1
        for k in range(n_topics):
            acc += probs[k]
            if r < acc:
                znew = k
                break
        z[t] = znew
        n_dk[d, znew] += 1
        n_kw[znew, w] += 1
        n_k[znew] += 1


def tlda_sweep(authors, post_ptr, tokens, z_post, y_tok, n_uk, n_kw, n_k,
               bg_w, bg_total, sw, alpha, gamma, pi_a, pi_b, use_background,
               n_words, z_uniforms, y_uniforms):
    """One Gibbs pass of the per-post topic model with a background channel.

    For each post: resample its topic given the tokens currently flagged
    topical (y=1), then resample each token's channel y given the new topic.
    bg_total and the channel counts sw are 1- and 2-element arrays updated
    in place. With use_background=0 the y flags stay 1 and the background
    tables are never touched.
    """
    au = authors.tolist()
    pp = post_ptr.tolist()
    tk = tokens.tolist()
    zu = z_uniforms.tolist()
    yu = y_uniforms.tolist()
    n_topics = n_kw.shape[0]
    wg = n_words * gamma
    scores = [0.0] * n_topics
    for s in range(len(au)):
        u = au[s]
        lo = pp[s]
        hi = pp[s + 1]
        old = z_post[s]
        n_uk[u, old] -= 1
        for t in range(lo, hi):
            if y_tok[t] == 1:
                n_kw[old, tk[t]] -= 1
                n_k[old] -= 1
        m = -math.inf
        for k in range(n_topics):
            acc = math.log(n_uk[u, k] + alpha)
            for t in range(lo, hi):
                if y_tok[t] == 1:
                    acc += math.log(n_kw[k, tk[t]] + gamma) - math.log(n_k[k] + wg)
            scores[k] = acc
            if acc > m:
                m = acc
        tot = 0.0
        for k in range(n_topics):
            p = math.exp(scores[k] - m)
            scores[k] = p
            tot += p
        r = zu[s] * tot
        acc = 0.0
        znew = n_topics - 1
        for k in range(n_topics):
            acc += scores[k]
            if r < acc:
                znew = k
                break
        z_post[s] = znew
        n_uk[u, znew] += 1
        for t in range(lo, hi):
            if y_tok[t] == 1:
                n_kw[znew, tk[t]] += 1
                n_k[znew] += 1
        if use_background == 0:
            continue
        for t in range(lo, hi):
            w = tk[t]
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
            r = yu[t] * (p0 + p1)
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
