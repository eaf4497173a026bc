#!/usr/bin/env python3
"""Reference-side fixture generator.

Produces, ahead of the C++ implementation, the frozen test inputs that the
test suite checks against:

  toy.arpa            back-off model for the single-sentence toy corpus
  ref.arpa            3-gram model over a small deterministic corpus
  ref_scores.tsv      per-token log10 scores + matched order for held-out
                      lines, computed by an independent ARPA query routine
                      that reads ref.arpa back from disk
  ttest_cases.tsv     Welch two-sample two-tailed p-values from scipy
  static_lambda_cases.tsv
                      grid-search optima for fixed-weight interpolation

The language-model reference here is intentionally plain dict-based Python,
kept free of any shared code with the C++ tree.
"""

import math
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))

BOS, EOS, UNK = "<s>", "</s>", "<unk>"


# ---------------------------------------------------------------------------
# counting


def count_ngrams(sentences, order):
    """Window counts per order; short contexts padded on the left with <s>."""
    counts = [None] + [dict() for _ in range(order)]
    for words in sentences:
        seq = [BOS] + words + [EOS]
        for j in range(1, len(seq)):  # prediction positions only
            for n in range(1, order + 1):
                lo = max(0, j - n + 1)
                window = tuple(seq[lo : j + 1])
                window = (BOS,) * (n - len(window)) + window
                counts[n][window] = counts[n].get(window, 0) + 1
    return counts


def adjusted_counts(counts, order):
    """Continuation counts below the top order; grams starting with <s> keep
    raw counts (they cannot be extended to the left)."""
    adj = [None] + [dict() for _ in range(order)]
    adj[order] = dict(counts[order])
    for n in range(order - 1, 0, -1):
        cont = {}
        for gram in counts[n + 1]:
            suf = gram[1:]
            cont.setdefault(suf, set()).add(gram[0])
        for gram, c in counts[n].items():
            if gram[0] == BOS:
                adj[n][gram] = c
            else:
                adj[n][gram] = len(cont.get(gram, ()))
                assert adj[n][gram] >= 1, gram
    return adj


def discounts_for(adj_n):
    """Three-slot discounts from the count-of-counts closed form; any zero
    among n1..n4 degrades the affected slot(s) to 0.75."""
    n = [0, 0, 0, 0, 0]
    for c in adj_n.values():
        if 1 <= c <= 4:
            n[c] += 1
    n1, n2, n3, n4 = n[1], n[2], n[3], n[4]
    d = [0.75, 0.75, 0.75]
    if n1 > 0 and n2 > 0:
        y = n1 / (n1 + 2.0 * n2)
        d[0] = 1.0 - 2.0 * y * n2 / n1
        if n3 > 0:
            d[1] = 2.0 - 3.0 * y * n3 / n2
            if n4 > 0:
                d[2] = 3.0 - 4.0 * y * n4 / n3
    for k in range(3):
        if not (0.0 <= d[k] <= k + 1):
            d[k] = 0.75
    return d


def estimate(sentences, order, vocab=None):
    """Interpolated modified Kneser-Ney, emitted in back-off form.

    Returns ({gram: log10 p or None for the <s> rows}, {gram: log10 alpha}).
    """
    counts = count_ngrams(sentences, order)
    adj = adjusted_counts(counts, order)
    if vocab is None:
        vocab = set(w for g in counts[1] for w in g) | {BOS, EOS, UNK}
    prob_words = sorted(vocab - {BOS})
    v_prob = len(prob_words)

    probs, alphas = {}, {}
    # unigrams, interpolated with the uniform distribution
    d1 = discounts_for(adj[1])
    total1 = sum(adj[1].values())
    types1 = [0, 0, 0]  # N1, N2, N3+
    for c in adj[1].values():
        types1[min(c, 3) - 1] += 1
    gamma1 = (d1[0] * types1[0] + d1[1] * types1[1] + d1[2] * types1[2]) / total1
    p_low = {}
    for w in prob_words:
        a = adj[1].get((w,), 0)
        disc = 0.0 if a == 0 else d1[min(a, 3) - 1]
        p_low[(w,)] = (a - disc) / total1 + gamma1 / v_prob
        probs[(w,)] = math.log10(p_low[(w,)])
    probs[(BOS,)] = None  # no probability; written as -99

    for n in range(2, order + 1):
        dn = discounts_for(adj[n])
        ctx_tot, ctx_types = {}, {}
        for gram, a in adj[n].items():
            c = gram[:-1]
            ctx_tot[c] = ctx_tot.get(c, 0) + a
            t = ctx_types.setdefault(c, [0, 0, 0])
            t[min(a, 3) - 1] += 1
        p_cur = {}
        for gram, a in adj[n].items():
            c = gram[:-1]
            t = ctx_types[c]
            gamma = (dn[0] * t[0] + dn[1] * t[1] + dn[2] * t[2]) / ctx_tot[c]
            val = (a - dn[min(a, 3) - 1]) / ctx_tot[c] + gamma * p_low[gram[1:]]
            p_cur[gram] = val
            probs[gram] = math.log10(val)
        for c, tot in ctx_tot.items():
            t = ctx_types[c]
            alphas[c] = math.log10(
                (dn[0] * t[0] + dn[1] * t[1] + dn[2] * t[2]) / tot
            )
            if c not in probs:  # all-<s> contexts: entry with no probability
                assert all(w == BOS for w in c), c
                probs[c] = None
        if n < order:
            # the next level backs off into interpolated values of this one
            p_low = ProbChain(p_cur, p_low, alphas)
    return probs, alphas


class ProbChain:
    """Interpolated probability of suffix grams: stored value if present,
    otherwise alpha-scaled lower-order value."""

    def __init__(self, cur, lower, alphas):
        self.cur = cur
        self.lower = lower
        self.alphas = alphas

    def __getitem__(self, gram):
        if gram in self.cur:
            return self.cur[gram]
        ctx = gram[:-1]
        scale = 10.0 ** self.alphas[ctx] if ctx in self.alphas else 1.0
        low = gram[1:] if len(gram) > 1 else gram
        if len(gram) == 1:
            raise KeyError(gram)
        return scale * self.lower[low]


def write_arpa(path, probs, alphas, order):
    by_order = [dict() for _ in range(order + 1)]
    for g, p in probs.items():
        by_order[len(g)][g] = p
    with open(path, "w") as f:
        f.write("\\data\\\n")
        for n in range(1, order + 1):
            f.write("ngram %d=%d\n" % (n, len(by_order[n])))
        for n in range(1, order + 1):
            f.write("\n\\%d-grams:\n" % n)
            for g in sorted(by_order[n]):
                p = by_order[n][g]
                ps = "-99" if p is None else "%.7f" % p
                line = ps + "\t" + " ".join(g)
                if n < order and g in alphas:
                    line += "\t%.7f" % alphas[g]
                f.write(line + "\n")
        f.write("\n\\end\\\n")


# ---------------------------------------------------------------------------
# independent ARPA query (reads the file back; knows nothing of estimation)


def read_arpa(path):
    probs, alphas, order = {}, {}, 0
    with open(path) as f:
        section = 0
        for line in f:
            line = line.strip()
            if not line or line.startswith("\\data") or line.startswith("ngram "):
                continue
            if line == "\\end\\":
                break
            if line.endswith("-grams:"):
                section = int(line[1:].split("-")[0])
                order = max(order, section)
                continue
            parts = line.split("\t")
            gram = tuple(parts[1].split(" "))
            probs[gram] = float(parts[0])
            if len(parts) > 2:
                alphas[gram] = float(parts[2])
    return probs, alphas, order


def arpa_score(probs, alphas, order, context, word):
    """Back-off recursion; returns (log10 p, matched order)."""
    ctx = tuple(context[-(order - 1) :]) if order > 1 else ()
    for m in range(len(ctx) + 1, 0, -1):
        gram = ctx[len(ctx) - m + 1 :] + (word,)
        if gram in probs and probs[gram] > -90:
            total = probs[gram]
            for k in range(m, len(ctx) + 1):
                suf = ctx[len(ctx) - k :]
                total += alphas.get(suf, 0.0)
            return total, m
    raise KeyError(word)


# ---------------------------------------------------------------------------
# corpora


def toy_fixture():
    sentences = [["a", "b", "a", "b", "a", "c"]]
    probs, alphas = estimate(sentences, 2)
    write_arpa(os.path.join(HERE, "toy.arpa"), probs, alphas, 2)


NOUNS = ("market trade report price share fund bank deal rate index growth "
         "profit loss plan sale offer debt cash stake unit group firm board "
         "chief year risk cost").split()
NAMES = ("Altman Barrow Corvin Delmar Ellison Farley Grover Halden Ingram "
         "Jarvis Keller Landon Merton Norwood Osborn Prescott Quimby Ralston "
         "Sutton Thorne").split()
VERBS = ("rose fell said noted added gained slipped climbed dropped held "
         "stayed moved opened closed traded").split()


def ref_corpus(rng, n_sentences):
    out = []
    for _ in range(n_sentences):
        kind = rng.random()
        if kind < 0.35:
            s = ["the", rng.choice(NOUNS), rng.choice(VERBS), "by",
                 rng.choice(NOUNS), "points", "on", "the", rng.choice(NOUNS)]
        elif kind < 0.7:
            s = [rng.choice(NAMES), rng.choice(NAMES), "of", "the",
                 rng.choice(NOUNS), "office", rng.choice(VERBS), "that",
                 "the", rng.choice(NOUNS), rng.choice(VERBS)]
        else:
            s = ["a", rng.choice(NOUNS), "for", rng.choice(NAMES), "and",
                 rng.choice(NAMES), rng.choice(VERBS), "in", "the",
                 rng.choice(NOUNS)]
        out.append(s)
    return out


def ref_fixture():
    rng = random.Random(7)
    train = ref_corpus(rng, 90)
    held = ref_corpus(rng, 12)
    held[3][1] = "zurbifex"  # exercise the <unk> path
    held[8][0] = "Xanthor"

    vocab = set(w for s in train for w in s) | {BOS, EOS, UNK}
    probs, alphas = estimate(train, 3, vocab=vocab)
    arpa_path = os.path.join(HERE, "ref.arpa")
    write_arpa(arpa_path, probs, alphas, 3)

    probs2, alphas2, order = read_arpa(arpa_path)
    with open(os.path.join(HERE, "ref_corpus.txt"), "w") as f:
        for s in train:
            f.write(" ".join(s) + "\n")
    with open(os.path.join(HERE, "ref_held.txt"), "w") as f:
        for s in held:
            f.write(" ".join(s) + "\n")
    with open(os.path.join(HERE, "ref_scores.tsv"), "w") as f:
        f.write("# sentence\tposition\ttoken\tlog10p\tmatched_order\n")
        for i, s in enumerate(held):
            seq = [BOS] + [w if w in vocab else UNK for w in s] + [EOS]
            for t in range(1, len(seq)):
                lp, m = arpa_score(probs2, alphas2, order, seq[:t], seq[t])
                f.write("%d\t%d\t%s\t%.10f\t%d\n" % (i, t, seq[t], lp, m))


# ---------------------------------------------------------------------------
# statistics fixtures


def ttest_fixture():
    from scipy import stats

    rng = random.Random(20240517)
    with open(os.path.join(HERE, "ttest_cases.tsv"), "w") as f:
        f.write("# na\ta...\tnb\tb...\tpvalue\n")
        for _ in range(20):
            na = rng.randint(2, 12)
            nb = rng.randint(2, 12)
            mu_a = rng.choice([10.0, 10.5, 20.0])
            mu_b = rng.choice([10.0, 10.5, 20.0])
            sd = rng.uniform(0.1, 3.0)
            a = [rng.gauss(mu_a, sd) for _ in range(na)]
            b = [rng.gauss(mu_b, rng.uniform(0.1, 3.0)) for _ in range(nb)]
            p = stats.ttest_ind(a, b, equal_var=False).pvalue
            row = ([str(na)] + ["%.12g" % x for x in a] + [str(nb)]
                   + ["%.12g" % x for x in b] + ["%.12g" % p])
            f.write("\t".join(row) + "\n")


def grid_lambda(pairs):
    best = None
    losses = []
    for i in range(101):
        lam = i / 100.0
        loss = sum(-math.log(lam * pn + (1 - lam) * pg) for pn, pg in pairs)
        loss /= len(pairs)
        losses.append(loss)
    lo = min(losses)
    ties = [i / 100.0 for i, l in enumerate(losses) if l <= lo + 1e-12]
    best = min(ties, key=lambda x: (abs(x - 0.5), x))
    return best, lo


def static_lambda_fixture():
    rng = random.Random(99)
    cases = []
    equal = [(p, p) for p in (rng.uniform(0.01, 0.9) for _ in range(200))]
    cases.append(equal)
    nn_wins = [(rng.uniform(0.5, 0.9), rng.uniform(0.01, 0.3))
               for _ in range(200)]
    cases.append(nn_wins)
    mixed = []
    for _ in range(400):
        if rng.random() < 0.35:
            mixed.append((rng.uniform(0.3, 0.9), rng.uniform(0.005, 0.1)))
        else:
            mixed.append((rng.uniform(0.005, 0.2), rng.uniform(0.05, 0.6)))
    cases.append(mixed)
    with open(os.path.join(HERE, "static_lambda_cases.tsv"), "w") as f:
        f.write("# n\tp_nn p_ng pairs...\tlambda\tloss\n")
        for pairs in cases:
            lam, loss = grid_lambda(pairs)
            flat = []
            for pn, pg in pairs:
                flat.append("%.10g" % pn)
                flat.append("%.10g" % pg)
            f.write("%d\t%s\t%.2f\t%.12g\n"
                    % (len(pairs), " ".join(flat), lam, loss))


# ---------------------------------------------------------------------------


def check_toy():
    """Spot checks computed independently by hand for the toy corpus."""
    probs, alphas = estimate([["a", "b", "a", "b", "a", "c"]], 2)
    expect = {
        ("a",): 0.352, ("b",): 0.182, ("c",): 0.182,
        ("</s>",): 0.182, ("<unk>",): 0.102,
        ("a", "b"): 0.4881667, ("a", "c"): 0.2619762,
        ("b", "a"): 0.757, ("c", "</s>"): 0.6494286,
        ("<s>", "a"): 0.7222857,
    }
    for g, v in expect.items():
        got = 10.0 ** probs[g]
        assert abs(got - v) < 5e-7, (g, got, v)
    for g, v in {("<s>",): 3 / 7.0, ("a",): 0.3928571,
                 ("b",): 0.375, ("c",): 3 / 7.0}.items():
        got = 10.0 ** alphas[g]
        assert abs(got - v) < 5e-7, (g, got, v)
    for g in [("</s>",), ("<unk>",)]:
        assert g not in alphas
    print("toy model matches hand-computed table")


def check_normalization():
    rng = random.Random(3)
    train = ref_corpus(rng, 60)
    p, a = estimate(train, 3)
    pr = {g: (v if v is not None else -99.0) for g, v in p.items()}
    vocab = sorted(set(w for g in p if len(g) == 1 for w in g) - {BOS})
    contexts = set(g[:-1] for g in p if len(g) > 1) | {()}
    for ctx in contexts:
        total = 0.0
        for w in vocab:
            lp, _ = arpa_score(pr, a, 3, list(ctx), w)
            total += 10.0 ** lp
        assert abs(total - 1.0) < 1e-9, (ctx, total)
    print("normalization holds over %d contexts" % len(contexts))


if __name__ == "__main__":
    check_toy()
    check_normalization()
    toy_fixture()
    ref_fixture()
    ttest_fixture()
    static_lambda_fixture()
    print("fixtures written to", HERE)
