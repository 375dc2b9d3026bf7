"""Independent reference implementations used to cross-check the metric suite.

Each oracle is a direct, slow transcription of a formula (or an exhaustive
search) that shares no code with :mod:`recipe_forge.metrics`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import metrics

ALPHABET = tuple("abcdef")
TOL = 1e-9


def _grams(seq: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def lcs_enumerate(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence by trying every subsequence of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subsequence(sub: Sequence[str], seq: Sequence[str]) -> bool:
        it = iter(seq)
        return all(tok in it for tok in sub)

    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            if is_subsequence([short[i] for i in idx], long_):
                return size
    return 0


def clipped_overlap(cand: Sequence[str], ref: Sequence[str], n: int) -> int:
    cg, rg = _grams(cand, n), _grams(ref, n)
    return sum(min(cg.count(g), rg.count(g)) for g in set(cg))


def bleu_transcribed(cand: Sequence[str], ref: Sequence[str], k: int) -> float:
    if len(cand) == 0:
        return 0.0
    precisions = []
    for n in range(1, k + 1):
        total = len(_grams(cand, n))
        p = clipped_overlap(cand, ref, n) / total if total else 0.0
        if p == 0:
            return 0.0
        precisions.append(p)
    bp = min(1.0, math.exp(1 - len(ref) / len(cand)))
    return bp * math.prod(precisions) ** (1.0 / k)


def sacrebleu_transcribed(cand: Sequence[str], ref: Sequence[str]) -> float:
    """Exp smoothing over the effective order min(4, |cand|); no overlap at all scores 0."""
    if len(cand) == 0 or clipped_overlap(cand, ref, 1) == 0:
        return 0.0
    order = min(4, len(cand))
    precisions = []
    zeros = 0
    for n in range(1, order + 1):
        total = len(_grams(cand, n))
        hits = clipped_overlap(cand, ref, n)
        if hits == 0:
            zeros += 1
            precisions.append((1 / 2**zeros) / total)
        else:
            precisions.append(hits / total)
    bp = min(1.0, math.exp(1 - len(ref) / len(cand)))
    return bp * math.prod(precisions) ** (1.0 / order)


def rouge_n_transcribed(cand: Sequence[str], ref: Sequence[str], n: int) -> tuple[float, float, float]:
    cg, rg = _grams(cand, n), _grams(ref, n)
    hits = clipped_overlap(cand, ref, n)
    p = hits / len(cg) if cg else 0.0
    r = hits / len(rg) if rg else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def idf_scan(references: Sequence[Sequence[str]], max_n: int = 4) -> dict[tuple[str, ...], int]:
    """Document frequency by testing every candidate n-gram against every document."""
    universe = {g for ref in references for n in range(1, max_n + 1) for g in _grams(ref, n)}
    return {g: sum(g in _grams(ref, len(g)) for ref in references) for g in universe}


def cider_dense(cand: Sequence[str], ref: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """CIDEr with explicit dense TF-IDF vectors indexed over every n-gram seen."""
    df = idf_scan(references, max_n)
    N = len(references)
    scores = []
    for n in range(1, max_n + 1):
        index = sorted({g for g in _grams(cand, n) + _grams(ref, n)})
        pos = {g: i for i, g in enumerate(index)}
        vc = np.zeros(len(index))
        vr = np.zeros(len(index))
        for g in _grams(cand, n):
            vc[pos[g]] += 1
        for g in _grams(ref, n):
            vr[pos[g]] += 1
        w = np.array([math.log(N / max(1, df.get(g, 0))) for g in index])
        vc, vr = vc * w, vr * w
        nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
        scores.append(float(vc @ vr / (nc * nr)) if nc > 0 and nr > 0 else 0.0)
    return 10.0 * sum(scores) / max_n


def random_instances(seed: int, count: int, max_len: int = 8) -> list[tuple[list[str], list[str]]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = [ALPHABET[i] for i in rng.integers(len(ALPHABET), size=int(rng.integers(0, max_len + 1)))]
        b = [ALPHABET[i] for i in rng.integers(len(ALPHABET), size=int(rng.integers(0, max_len + 1)))]
        out.append((a, b))
    return out


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _close(x: float, y: float, tol: float = TOL) -> bool:
    return abs(x - y) <= tol


def check_random_metrics(seed: int = 0, count: int = 60) -> list[CheckResult]:
    """Compare the metric suite against the oracles above on random small instances."""
    cases = random_instances(seed, count)
    failures: dict[str, list[str]] = {k: [] for k in ("lcs", "bleu", "sacrebleu", "rouge_n", "idf", "cider")}
    for i, (a, b) in enumerate(cases):
        if metrics.lcs_length(a, b) != lcs_enumerate(a, b):
            failures["lcs"].append(f"case {i}")
        for k in range(1, 5):
            if not _close(metrics.bleu_k(a, b, k), bleu_transcribed(a, b, k)):
                failures["bleu"].append(f"case {i} k={k}")
        if not _close(metrics.sacrebleu(a, b), sacrebleu_transcribed(a, b)):
            failures["sacrebleu"].append(f"case {i}")
        for n in (1, 2, 3):
            got = metrics.rouge_n(a, b, n)
            want = rouge_n_transcribed(a, b, n)
            if not all(_close(x, y) for x, y in zip((got.precision, got.recall, got.f1), want)):
                failures["rouge_n"].append(f"case {i} n={n}")
    # CIDEr needs a corpus: group the instances into corpora of five pairs
    for start in range(0, len(cases) - 4, 5):
        group = cases[start : start + 5]
        refs = [b for _, b in group]
        idf = metrics.build_idf(refs)
        if dict(idf.doc_counts) != idf_scan(refs):
            failures["idf"].append(f"group {start // 5}")
        for j, (a, b) in enumerate(group):
            if not _close(metrics.cider(a, b, idf), cider_dense(a, b, refs)):
                failures["cider"].append(f"case {start + j}")
    return [
        CheckResult(f"{name} vs oracle ({count} instances)", not bad, ", ".join(bad[:5]))
        for name, bad in failures.items()
    ]


def derived_points() -> list[tuple[str, Callable[[], float], float]]:
    """Hand-derived metric values: (name, thunk, expected)."""
    abcd = ["a", "b", "c", "d"]
    corpus = [["the", "cat", "sat", "on", "mats"], ["a", "dog", "ran", "off", "far"], ["we", "ate", "rice", "with", "tea"]]
    return [
        ("bleu1 clipped", lambda: metrics.bleu_k(["a"] * 4, abcd, 1), 0.25),
        ("bleu1 brevity", lambda: metrics.bleu_k(["a", "b"], abcd, 1), math.exp(-1)),
        ("sacrebleu smoothing", lambda: metrics.sacrebleu(list("abcde"), list("abcdf")),
         sacrebleu_transcribed(list("abcde"), list("abcdf"))),
        ("rouge2 hand count", lambda: metrics.rouge_n(["a", "b", "c"], ["a", "b", "d"], 2).f1, 0.5),
        ("rougeL transposition", lambda: metrics.rouge_l(["a", "b", "c"], ["a", "c", "b"]).f1, 2 / 3),
        ("meteor two tokens", lambda: metrics.meteor(["the", "cat"], ["the", "cat"]), 0.9375),
        ("meteor one token", lambda: metrics.meteor(["a"], ["a"]), 0.5),
        ("perplexity uniform", lambda: metrics.perplexity([math.log(0.1)] * 7), 10.0),
        ("perplexity mixed", lambda: metrics.perplexity([math.log(0.5), math.log(0.25)]), math.sqrt(8)),
        ("cider self match", lambda: metrics.cider(corpus[0], corpus[0], metrics.build_idf(corpus)), 10.0),
    ]


def check_derived_points() -> list[CheckResult]:
    out = []
    for name, thunk, expected in derived_points():
        got = thunk()
        out.append(CheckResult(name, _close(got, expected), f"got {got!r}, expected {expected!r}"))
    return out


def run_all(seed: int = 0, count: int = 60) -> list[CheckResult]:
    return check_derived_points() + check_random_metrics(seed, count)
