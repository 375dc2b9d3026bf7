"""BLEU, SacreBLEU-style smoothed BLEU, ROUGE, METEOR, CIDEr and perplexity.

All scorers take pre-tokenized sequences (see :mod:`recipe_forge.textnorm`)
and work against a single reference.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .textnorm import NGram, ngrams

MAX_ORDER = 4
THREADS_ENV = "RECIPE_FORGE_THREADS"


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision, recall, f1)


ZERO_PRF = PRF(0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _clipped_counts(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram total) for order ``n``."""
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    matches = sum(min(c, ref[g]) for g, c in cand.items())
    return matches, max(0, len(candidate) - n + 1)


def _brevity_penalty(c: int, r: int) -> float:
    return min(1.0, math.exp(1 - r / c))


def bleu_k(candidate: Sequence[str], reference: Sequence[str], k: int) -> float:
    """Unsmoothed sentence BLEU with uniform weights over orders 1..k."""
    if not 1 <= k <= MAX_ORDER:
        raise ValueError(f"BLEU order must be in 1..{MAX_ORDER}, got {k}")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, k + 1):
        matches, total = _clipped_counts(candidate, reference, n)
        if matches == 0 or total == 0:
            return 0.0
        log_sum += math.log(matches / total)
    return _brevity_penalty(len(candidate), len(reference)) * math.exp(log_sum / k)


def sacrebleu(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """BLEU-4 with exponential ("exp") smoothing of zero-match orders.

    The j-th order with no matches gets a numerator of ``1 / 2**j``.
    Orders longer than the candidate are dropped (effective order), so short
    candidates are not forced to zero. With no matching n-gram at all the
    score is 0 rather than a smoothed positive value.
    """
    c = len(candidate)
    if c == 0:
        return 0.0
    order = min(MAX_ORDER, c)
    counts = [_clipped_counts(candidate, reference, n) for n in range(1, order + 1)]
    if counts[0][0] == 0:
        return 0.0
    smooth = 1.0
    log_sum = 0.0
    for matches, total in counts:
        if matches == 0:
            smooth *= 2.0
            log_sum += math.log(1.0 / (smooth * total))
        else:
            log_sum += math.log(matches / total)
    return _brevity_penalty(c, len(reference)) * math.exp(log_sum / order)


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> PRF:
    if n < 1:
        raise ValueError(f"ROUGE order must be >= 1, got {n}")
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    c_total = sum(cand.values())
    r_total = sum(ref.values())
    precision = overlap / c_total if c_total else 0.0
    recall = overlap / r_total if r_total else 0.0
    return PRF.from_pr(precision, recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of a longest common subsequence, O(|a|·|b|) time, O(|b|) memory."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PRF:
    if not candidate or not reference:
        return ZERO_PRF
    lcs = lcs_length(candidate, reference)
    return PRF.from_pr(lcs / len(candidate), lcs / len(reference))


# ---------------------------------------------------------------------------
# METEOR
# ---------------------------------------------------------------------------

METEOR_ALPHA = 0.9  # Fmean = PR / (alpha P + (1 - alpha) R)  ->  10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
_ALIGN_BUDGET = 20_000

_SUFFIXES = sorted(
    ["ations", "ation", "ings", "ing", "edly", "ed", "ies", "es", "s", "ly", "ers", "er", "est", "ness", "ment"],
    key=len,
    reverse=True,
)


def stem(token: str) -> str:
    """Strip the longest known suffix, keeping a stem of at least three characters."""
    for suffix in _SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            base = token[: -len(suffix)]
            return base + "y" if suffix == "ies" else base
    return token


def _count_bonds(pairs: Mapping[int, int]) -> int:
    return sum(1 for i, j in pairs.items() if pairs.get(i - 1) == j - 1)


def _align_stage(
    cand_keys: Sequence[Optional[str]],
    ref_keys: Sequence[Optional[str]],
    fixed: dict[int, int],
) -> dict[int, int]:
    """Add a maximum matching between equal keys to ``fixed``.

    Among maximum matchings, search for the one with the most bonds (adjacent
    pairs (i, j), (i+1, j+1)), i.e. the fewest chunks overall. The search is
    depth-first branch and bound with a node budget; the first leaf it reaches
    is the greedy run-extending alignment, so the budget only limits how far
    beyond greedy it improves.
    """
    used_refs = set(fixed.values())
    cand_by_key: dict[str, list[int]] = {}
    for i, k in enumerate(cand_keys):
        if k is not None and i not in fixed:
            cand_by_key.setdefault(k, []).append(i)
    ref_by_key: dict[str, list[int]] = {}
    for j, k in enumerate(ref_keys):
        if k is not None and j not in used_refs:
            ref_by_key.setdefault(k, []).append(j)

    need = {k: min(len(v), len(ref_by_key[k])) for k, v in cand_by_key.items() if k in ref_by_key}
    if not need:
        return dict(fixed)
    positions = sorted(i for k in need for i in cand_by_key[k])
    avail = {k: len(cand_by_key[k]) for k in need}

    pairs = dict(fixed)
    ref_used = set(used_refs)
    best_bonds = -1
    best: dict[int, int] = {}
    nodes = 0

    def gain(i: int, j: int) -> int:
        g = 1 if pairs.get(i - 1) == j - 1 else 0
        if (i + 1) in fixed and fixed[i + 1] == j + 1:
            g += 1
        return g

    def dfs(pos: int, bonds: int, remaining: int) -> None:
        nonlocal best_bonds, best, nodes
        nodes += 1
        if bonds + 2 * remaining <= best_bonds:
            return
        if pos == len(positions):
            best_bonds = bonds
            best = dict(pairs)
            return
        if nodes > _ALIGN_BUDGET and best_bonds >= 0:
            return
        i = positions[pos]
        k = cand_keys[i]
        options = []
        if need[k] > 0:
            for j in ref_by_key[k]:
                if j in ref_used:
                    continue
                g = gain(i, j)
                ahead = (
                    1
                    if i + 1 < len(cand_keys)
                    and j + 1 < len(ref_keys)
                    and cand_keys[i + 1] is not None
                    and cand_keys[i + 1] == ref_keys[j + 1]
                    else 0
                )
                options.append((-g, -ahead, j, g))
            options.sort()
        for _, _, j, g in options:
            pairs[i] = j
            ref_used.add(j)
            need[k] -= 1
            avail[k] -= 1
            dfs(pos + 1, bonds + g, remaining - 1)
            avail[k] += 1
            need[k] += 1
            ref_used.discard(j)
            del pairs[i]
        if avail[k] - 1 >= need[k]:
            avail[k] -= 1
            dfs(pos + 1, bonds, remaining)
            avail[k] += 1

    dfs(0, _count_bonds(fixed), sum(need.values()))
    return best


def meteor_alignment(candidate: Sequence[str], reference: Sequence[str]) -> dict[int, int]:
    """Candidate index -> reference index, exact matches first, then stems."""
    exact = _align_stage(list(candidate), list(reference), {})
    used_r = set(exact.values())
    cand_stems = [None if i in exact else stem(t) for i, t in enumerate(candidate)]
    ref_stems = [None if j in used_r else stem(t) for j, t in enumerate(reference)]
    return _align_stage(cand_stems, ref_stems, exact)


def count_chunks(alignment: Mapping[int, int]) -> int:
    return len(alignment) - _count_bonds(alignment)


def meteor(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate or not reference:
        return 0.0
    alignment = meteor_alignment(candidate, reference)
    m = len(alignment)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (count_chunks(alignment) / m) ** METEOR_BETA
    return fmean * (1 - penalty)


# ---------------------------------------------------------------------------
# CIDEr
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdfTable:
    n: int
    doc_counts: Mapping[NGram, int]
    num_docs: int

    def idf(self, gram: NGram) -> float:
        return math.log(self.num_docs / max(1, self.doc_counts.get(gram, 0)))


def build_idf(references: Sequence[Sequence[str]], n: int = MAX_ORDER) -> IdfTable:
    if not references:
        raise ValueError("cannot build document frequencies from an empty corpus")
    counts: Counter[NGram] = Counter()
    for ref in references:
        for order in range(1, n + 1):
            counts.update(ngrams(ref, order).keys())
    return IdfTable(n=n, doc_counts=dict(counts), num_docs=len(references))


def _tfidf(seq: Sequence[str], order: int, idf: IdfTable) -> dict[NGram, float]:
    return {g: c * idf.idf(g) for g, c in ngrams(seq, order).items()}


def _cosine(u: Mapping[NGram, float], v: Mapping[NGram, float]) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    if len(v) < len(u):
        u, v = v, u
    dot = sum(x * v.get(g, 0.0) for g, x in u.items())
    return dot / (nu * nv)


def cider(candidate: Sequence[str], reference: Sequence[str], idf: IdfTable) -> float:
    """Plain CIDEr (no length penalty or count clipping): 10 x mean n-gram TF-IDF cosine."""
    scores = [_cosine(_tfidf(candidate, n, idf), _tfidf(reference, n, idf)) for n in range(1, idf.n + 1)]
    return 10.0 * sum(scores) / idf.n


# ---------------------------------------------------------------------------
# Perplexity and corpus reports
# ---------------------------------------------------------------------------


def perplexity(token_logprobs: Sequence[float]) -> float:
    if len(token_logprobs) == 0:
        raise ValueError("perplexity needs at least one token log-probability")
    return math.exp(-math.fsum(token_logprobs) / len(token_logprobs))


# report column order
COLUMNS = (
    ("bleu1", "BLEU-1"),
    ("bleu2", "BLEU-2"),
    ("bleu3", "BLEU-3"),
    ("bleu4", "BLEU-4"),
    ("sacrebleu", "SacreBLEU"),
    ("meteor", "METEOR"),
    ("rouge1", "ROUGE-1"),
    ("rouge2", "ROUGE-2"),
    ("rougeL", "ROUGE-L"),
    ("cider", "CIDEr"),
    ("perplexity", "Perplexity"),
)


@dataclass(frozen=True)
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    sacrebleu: float
    meteor: float
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    cider: float
    perplexity: Optional[float] = None
    num_pairs: int = field(default=0, compare=False)

    def value(self, key: str) -> Optional[float]:
        v = getattr(self, key)
        return v.f1 if isinstance(v, PRF) else v

    def to_dict(self) -> dict:
        """Flat JSON-ready mapping; ROUGE fields carry F1, with P/R alongside."""
        out: dict = {}
        for key, _ in COLUMNS:
            out[key] = self.value(key)
            v = getattr(self, key)
            if isinstance(v, PRF):
                out[f"{key}_precision"] = v.precision
                out[f"{key}_recall"] = v.recall
        out["num_pairs"] = self.num_pairs
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricReport":
        kwargs = {}
        for key, _ in COLUMNS:
            if key.startswith("rouge"):
                kwargs[key] = PRF(data[f"{key}_precision"], data[f"{key}_recall"], data[key])
            else:
                kwargs[key] = data.get(key)
        return cls(num_pairs=data.get("num_pairs", 0), **kwargs)

    def row(self) -> list[Optional[float]]:
        return [self.value(key) for key, _ in COLUMNS]


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def format_markdown(rows: Iterable[tuple[str, Optional[MetricReport]]], label: str = "Split") -> str:
    """One row per report; a ``None`` report renders as an unavailable row."""
    header = [label] + [name for _, name in COLUMNS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for name, report in rows:
        cells = [_fmt(v) for v in report.row()] if report is not None else ["n/a"] * len(COLUMNS)
        lines.append("| " + " | ".join([name] + cells) + " |")
    return "\n".join(lines) + "\n"


def format_csv(rows: Iterable[tuple[str, Optional[MetricReport]]], label: str = "split") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([label] + [name for _, name in COLUMNS])
    for name, report in rows:
        if report is None:
            writer.writerow([name] + ["n/a"] * len(COLUMNS))
        else:
            writer.writerow([name] + ["" if v is None else repr(v) for v in report.row()])
    return buf.getvalue()


def report_json(rows: Iterable[tuple[str, Optional[MetricReport]]]) -> str:
    data = {name: None if r is None else r.to_dict() for name, r in rows}
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _pair_scores(pair: tuple[Sequence[str], Sequence[str]], idf: IdfTable) -> dict:
    cand, ref = pair
    return {
        "bleu1": bleu_k(cand, ref, 1),
        "bleu2": bleu_k(cand, ref, 2),
        "bleu3": bleu_k(cand, ref, 3),
        "bleu4": bleu_k(cand, ref, 4),
        "sacrebleu": sacrebleu(cand, ref),
        "meteor": meteor(cand, ref),
        "rouge1": rouge_n(cand, ref, 1),
        "rouge2": rouge_n(cand, ref, 2),
        "rougeL": rouge_l(cand, ref),
        "cider": cider(cand, ref, idf),
    }


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def evaluate_corpus(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    logprobs: Optional[Sequence[Sequence[float]]] = None,
    workers: Optional[int] = None,
) -> MetricReport:
    """Macro-average every metric over (candidate, reference) pairs.

    CIDEr document frequencies come from this corpus's references. Perplexity
    pools all log-probabilities when given. Per-pair scores are reduced in
    input order, so the result does not depend on ``workers``.
    """
    if not pairs:
        raise ValueError("evaluate_corpus needs at least one pair")
    idf = build_idf([ref for _, ref in pairs])
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_pair = list(pool.map(lambda p: _pair_scores(p, idf), pairs))
    else:
        per_pair = [_pair_scores(p, idf) for p in pairs]

    n = len(per_pair)
    fields: dict = {}
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "sacrebleu", "meteor", "cider"):
        total = 0.0
        for s in per_pair:
            total += s[key]
        fields[key] = total / n
    for key in ("rouge1", "rouge2", "rougeL"):
        p = r = f = 0.0
        for s in per_pair:
            p += s[key].precision
            r += s[key].recall
            f += s[key].f1
        fields[key] = PRF(p / n, r / n, f / n)

    ppl = None
    if logprobs is not None:
        pooled = [lp for seq in logprobs for lp in seq]
        ppl = perplexity(pooled) if pooled else None
    return MetricReport(perplexity=ppl, num_pairs=n, **fields)
