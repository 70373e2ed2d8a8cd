"""Caption metrics: BLEU-4, ROUGE-L, CIDEr-D and a lightweight METEOR.

All metrics take pre-tokenized sentences (lists of strings); use
:func:`tokenize` on raw text first.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from nltk.stem.porter import PorterStemmer
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

TokenSeq = list[str]

_NON_TOKEN = re.compile(r"[^a-z0-9']+")

CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
METEOR_SEARCH_BUDGET = 300

_stemmer = PorterStemmer()


def tokenize(text: str) -> TokenSeq:
    return _NON_TOKEN.sub(" ", text.lower()).split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_refs(refs):
    if len(refs) == 0:
        raise ValueError("at least one reference is required")


# --- BLEU ------------------------------------------------------------------

def bleu4(candidate: TokenSeq, refs: Sequence[TokenSeq], smoothing: bool = False) -> float:
    """Sentence-level BLEU-4 with uniform weights.

    Without smoothing the score is 0 as soon as one n-gram precision is 0.
    With ``smoothing`` n-gram orders above 1 use add-one counts.
    """
    _check_refs(refs)
    c = len(candidate)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in refs:
            max_ref |= ngrams(ref, n)
        clipped = sum(min(cnt, max_ref[g]) for g, cnt in cand.items())
        total = max(c - n + 1, 0)
        if smoothing and n > 1:
            clipped, total = clipped + 1, total + 1
        if clipped == 0 or total == 0:
            return 0.0
        log_p += math.log(clipped / total) / 4.0
    # closest reference length, shorter one on ties
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


# --- ROUGE-L ---------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rougel(candidate: TokenSeq, refs: Sequence[TokenSeq], beta: float = ROUGE_BETA) -> float:
    """Best LCS F-measure over the references."""
    _check_refs(refs)
    best = 0.0
    for ref in refs:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


# --- CIDEr-D ---------------------------------------------------------------

@dataclass(frozen=True)
class DfTable:
    """Document frequencies of 1- to 4-grams over a set of reference groups."""

    df: tuple[dict, dict, dict, dict]
    corpus_size: int

    def __post_init__(self):
        if self.corpus_size < 1:
            raise ValueError("corpus_size must be >= 1")

    def get(self, gram: tuple) -> int:
        return self.df[len(gram) - 1].get(gram, 0)


def build_df(reference_corpora: Sequence[Sequence[TokenSeq]]) -> DfTable:
    """Count, per n-gram, the number of reference groups containing it."""
    if len(reference_corpora) == 0:
        raise ValueError("reference_corpora must be nonempty")
    tables = tuple(Counter() for _ in range(4))
    for refs in reference_corpora:
        for n in range(1, 5):
            present = set()
            for ref in refs:
                present.update(ngrams(ref, n))
            tables[n - 1].update(present)
    return DfTable(tuple(dict(t) for t in tables), len(reference_corpora))


def _tfidf(tokens: Sequence[str], df: DfTable):
    log_n = math.log(float(df.corpus_size))
    vecs, norms = [], []
    for n in range(1, 5):
        vec = {g: cnt * (log_n - math.log(max(1.0, df.get(g))))
               for g, cnt in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(x * x for x in vec.values())))
    return vecs, norms


def cider_d(candidate: TokenSeq, refs: Sequence[TokenSeq], df: DfTable,
            sigma: float = CIDER_SIGMA) -> float:
    """CIDEr-D in [0, 10]: clipped TF-IDF cosine with a Gaussian length penalty."""
    if df is None:
        raise ValueError("cider_d needs a precomputed DfTable (see build_df)")
    _check_refs(refs)
    cand_vecs, cand_norms = _tfidf(candidate, df)
    score = 0.0
    for ref in refs:
        ref_vecs, ref_norms = _tfidf(ref, df)
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * sigma ** 2))
        for n in range(4):
            if cand_norms[n] == 0.0 or ref_norms[n] == 0.0:
                continue
            rv = ref_vecs[n]
            dot = sum(min(v, rv[g]) * rv[g] for g, v in cand_vecs[n].items() if g in rv)
            score += penalty * dot / (cand_norms[n] * ref_norms[n])
    return 10.0 * score / 4.0 / len(refs)


class CiderD(BaseEstimator):
    """CIDEr-D scorer whose document frequencies are fitted on reference groups.

    ``fit`` takes a list of reference groups (each a list of token lists).
    """

    def __init__(self, sigma=CIDER_SIGMA):
        self.sigma = sigma

    def fit(self, X, y=None):
        self.df_ = build_df(X)
        return self

    def score(self, candidate: TokenSeq, refs: Sequence[TokenSeq]) -> float:
        check_is_fitted(self, "df_")
        return cider_d(candidate, refs, self.df_, self.sigma)


# --- METEOR (exact + stem modules only) ------------------------------------

@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer.stem(token)


def _align(candidate: Sequence[str], ref: Sequence[str], use_stem: bool) -> dict[int, int]:
    """One-to-one alignment with the fewest chunks.

    Exact matches are maximized first, then Porter-stem matches among the
    leftovers. Both counts are fixed by the token multisets, so only the
    choice of positions is searched. The search is depth-first, trying
    chunk-extending and then leftmost reference positions first, so its
    first leaf is the greedy alignment. It stops after ``METEOR_SEARCH_BUDGET``
    nodes and keeps the best alignment found, which is exact for short
    sentences and deterministic always.
    """
    cc, rc = Counter(candidate), Counter(ref)
    exact_need = {t: min(cc[t], rc[t]) for t in cc if t in rc}
    stem_need: Counter = Counter()
    stem_of = {}
    if use_stem:
        left_c: Counter = Counter()
        left_r: Counter = Counter()
        for t in cc:
            stem_of[t] = stem(t)
            left_c[stem_of[t]] += cc[t] - exact_need.get(t, 0)
        for t in rc:
            stem_of[t] = stem(t)
            left_r[stem_of[t]] += rc[t] - exact_need.get(t, 0)
        stem_need = Counter({s: min(n, left_r[s]) for s, n in left_c.items() if left_r[s]})
    if not exact_need and not stem_need:
        return {}

    n = len(candidate)
    exact_opts = [[j for j, r in enumerate(ref) if r == tok] if tok in exact_need else []
                  for tok in candidate]
    stem_opts = [[j for j, r in enumerate(ref) if r != tok and stem_of[r] == stem_of[tok]]
                 if use_stem and stem_need.get(stem_of[tok]) else []
                 for tok in candidate]
    # positions of each exact type / stem class still ahead of i
    suffix_tok = [Counter(candidate[i:]) for i in range(n + 1)]
    exact_done: Counter = Counter()
    stem_done: Counter = Counter()
    ref_stem_used: Counter = Counter()  # stem uses per reference token type
    used = [False] * len(ref)
    cur: dict[int, int] = {}
    best: list = [None, n + 1]
    budget = [METEOR_SEARCH_BUDGET]

    def feasible(i):
        for t, need in exact_need.items():
            if need - exact_done[t] > suffix_tok[i][t]:
                return False
        if stem_need:
            spare: Counter = Counter()
            for t, k in suffix_tok[i].items():
                if t in stem_of:
                    spare[stem_of[t]] += k - (exact_need.get(t, 0) - exact_done[t])
            for s, need in stem_need.items():
                if need - stem_done[s] > spare[s]:
                    return False
        return True

    def visit(i, chunks):
        if chunks >= best[1] or budget[0] <= 0 or not feasible(i):
            return
        budget[0] -= 1
        if i == n:
            best[0], best[1] = dict(cur), chunks
            return
        tok = candidate[i]
        prev = cur.get(i - 1)
        moves = []
        if exact_done[tok] < exact_need.get(tok, 0):
            moves += [(j, True) for j in exact_opts[i] if not used[j]]
        if stem_opts[i] and stem_done[stem_of[tok]] < stem_need[stem_of[tok]]:
            moves += [(j, False) for j in stem_opts[i]
                      if not used[j] and ref_stem_used[ref[j]] < rc[ref[j]]
                      - exact_need.get(ref[j], 0)]
        moves.sort(key=lambda m: (prev is None or m[0] != prev + 1, not m[1], m[0]))
        for j, is_exact in moves:
            used[j] = True
            cur[i] = j
            if is_exact:
                exact_done[tok] += 1
            else:
                stem_done[stem_of[tok]] += 1
                ref_stem_used[ref[j]] += 1
            visit(i + 1, chunks + (prev is None or j != prev + 1))
            if is_exact:
                exact_done[tok] -= 1
            else:
                stem_done[stem_of[tok]] -= 1
                ref_stem_used[ref[j]] -= 1
            del cur[i]
            used[j] = False
        visit(i + 1, chunks)

    visit(0, 0)
    return best[0] or {}


def count_chunks(align: dict[int, int]) -> int:
    chunks, last = 0, None
    for i in sorted(align):
        j = align[i]
        if last is None or i != last[0] + 1 or j != last[1] + 1:
            chunks += 1
        last = (i, j)
    return chunks


def meteor_lite(candidate: TokenSeq, refs: Sequence[TokenSeq], use_stem: bool = True) -> float:
    """METEOR with exact and Porter-stem matching; no synonym module."""
    _check_refs(refs)
    best = 0.0
    for ref in refs:
        align = _align(candidate, ref, use_stem)
        m = len(align)
        if m == 0:
            continue
        p, r = m / len(candidate), m / len(ref)
        fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
        penalty = METEOR_GAMMA * (count_chunks(align) / m) ** METEOR_BETA
        best = max(best, fmean * (1 - penalty))
    return best


METRICS = {
    "cider_d": "C",
    "bleu4": "B-4",
    "meteor_lite": "M",
    "rougel": "R",
}


def score(metric: str, candidate: TokenSeq, refs: Sequence[TokenSeq], df: DfTable = None) -> float:
    """Dispatch by metric name (one of :data:`METRICS`)."""
    if metric == "cider_d":
        return cider_d(candidate, refs, df)
    if metric == "bleu4":
        return bleu4(candidate, refs)
    if metric == "meteor_lite":
        return meteor_lite(candidate, refs)
    if metric == "rougel":
        return rougel(candidate, refs)
    raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
