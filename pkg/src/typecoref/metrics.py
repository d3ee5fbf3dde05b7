"""Coreference scorers and experiment reports.

MUC counts minimal links, B-cubed averages per-mention cluster overlap, and
CEAFE aligns clusters one-to-one with an optimal-assignment solver under the
similarity 2|K∩R| / (|K|+|R|).  Counts aggregate across documents before the
final precision/recall division, matching reference-scorer behavior.  Twinless
mentions (present on one side only) are scored as singletons on the side that
lacks them, so the module also stands up to non-gold mention sets.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import genre_of

ClusterSet = Sequence[Iterable[Hashable]]


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricCounts:
    """Precision/recall numerators and denominators, addable across documents."""

    p_num: float = 0.0
    p_den: float = 0.0
    r_num: float = 0.0
    r_den: float = 0.0

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        return MetricCounts(
            self.p_num + other.p_num,
            self.p_den + other.p_den,
            self.r_num + other.r_num,
            self.r_den + other.r_den,
        )

    @property
    def degenerate(self) -> bool:
        return self.p_den == 0 or self.r_den == 0

    def prf(self) -> PRF:
        p = self.p_num / self.p_den if self.p_den > 0 else 0.0
        r = self.r_num / self.r_den if self.r_den > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return PRF(p, r, f1)


def _normalize(key: ClusterSet, response: ClusterSet) -> tuple[list[frozenset], list[frozenset]]:
    """Shared-universe view: twinless mentions become singletons on the bare side."""
    key_sets = [frozenset(c) for c in key if len(frozenset(c))]
    response_sets = [frozenset(c) for c in response if len(frozenset(c))]
    for sets in (key_sets, response_sets):
        counts = Counter(m for c in sets for m in c)
        clash = [m for m, n in counts.items() if n > 1]
        if clash:
            raise ValueError(f"not a partition: mentions {clash} appear in two clusters")
    key_universe = {m for c in key_sets for m in c}
    response_universe = {m for c in response_sets for m in c}
    key_sets += [frozenset([m]) for m in sorted(response_universe - key_universe, key=repr)]
    response_sets += [frozenset([m]) for m in sorted(key_universe - response_universe, key=repr)]
    return key_sets, response_sets


# ---------------------------------------------------------------------------
# The three scorers
# ---------------------------------------------------------------------------


def _vilain_half(clusters: list[frozenset], assignment: Mapping[Hashable, int]) -> tuple[float, float]:
    num = 0.0
    den = 0.0
    for cluster in clusters:
        partitions = {assignment[m] for m in cluster if m in assignment}
        partitions_count = len(partitions) + sum(1 for m in cluster if m not in assignment)
        num += len(cluster) - partitions_count
        den += len(cluster) - 1
    return num, den


def muc_counts(key: ClusterSet, response: ClusterSet) -> MetricCounts:
    key_sets, response_sets = _normalize(key, response)
    key_of = {m: i for i, c in enumerate(key_sets) for m in c}
    response_of = {m: i for i, c in enumerate(response_sets) for m in c}
    r_num, r_den = _vilain_half(key_sets, response_of)
    p_num, p_den = _vilain_half(response_sets, key_of)
    return MetricCounts(p_num, p_den, r_num, r_den)


def muc(key: ClusterSet, response: ClusterSet) -> PRF:
    """Link-based scorer; degenerate all-singleton inputs score 0."""
    return muc_counts(key, response).prf()


def _b_cubed_half(of_a: list[frozenset], of_b: list[frozenset]) -> tuple[float, float]:
    b_of = {m: c for c in of_b for m in c}
    num = 0.0
    count = 0
    for cluster in of_a:
        for m in cluster:
            other = b_of.get(m, frozenset())
            num += len(cluster & other) / len(cluster)
            count += 1
    return num, count


def b_cubed_counts(key: ClusterSet, response: ClusterSet) -> MetricCounts:
    key_sets, response_sets = _normalize(key, response)
    r_num, r_den = _b_cubed_half(key_sets, response_sets)
    p_num, p_den = _b_cubed_half(response_sets, key_sets)
    return MetricCounts(p_num, p_den, r_num, r_den)


def b_cubed(key: ClusterSet, response: ClusterSet) -> PRF:
    """Mention-based scorer averaging per-mention cluster overlap."""
    return b_cubed_counts(key, response).prf()


def phi4(a: frozenset, b: frozenset) -> float:
    return 2.0 * len(a & b) / (len(a) + len(b))


def ceaf_e_counts(key: ClusterSet, response: ClusterSet) -> MetricCounts:
    key_sets, response_sets = _normalize(key, response)
    if not key_sets or not response_sets:
        return MetricCounts(0.0, len(response_sets), 0.0, len(key_sets))
    similarity = np.zeros((len(key_sets), len(response_sets)))
    for i, k in enumerate(key_sets):
        for j, r in enumerate(response_sets):
            similarity[i, j] = phi4(k, r)
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    total = float(similarity[rows, cols].sum())
    return MetricCounts(total, len(response_sets), total, len(key_sets))


def ceaf_e(key: ClusterSet, response: ClusterSet) -> PRF:
    """Entity-based scorer over the optimal one-to-one cluster alignment."""
    return ceaf_e_counts(key, response).prf()


METRIC_COUNTS = {"muc": muc_counts, "b_cubed": b_cubed_counts, "ceaf_e": ceaf_e_counts}


# ---------------------------------------------------------------------------
# Cluster impurity
# ---------------------------------------------------------------------------


def impure_clusters(clusters: ClusterSet, types: Mapping[Hashable, str | None]) -> int:
    """Clusters whose members carry two or more distinct types (None acts as NA)."""
    count = 0
    for cluster in clusters:
        distinct = {types.get(m) or "NA" for m in cluster}
        if len(distinct) >= 2:
            count += 1
    return count


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ScoredDocument:
    """One document's gold and predicted partitions plus mention types."""

    doc_id: str
    key: ClusterSet
    response: ClusterSet
    types: Mapping[Hashable, str | None] = field(default_factory=dict)


@dataclass
class ScoreReport:
    muc: PRF
    b_cubed: PRF
    ceaf_e: PRF
    avg_f1: float
    impure_cluster_count: int
    document_count: int
    flags: list[str] = field(default_factory=list)
    type_ratios: dict[str, float] | None = None
    by_genre: dict[str, "ScoreReport"] | None = None

    def to_dict(self) -> dict:
        out = {
            "muc": self.muc._asdict(),
            "b_cubed": self.b_cubed._asdict(),
            "ceaf_e": self.ceaf_e._asdict(),
            "avg_f1": self.avg_f1,
            "impure_clusters": self.impure_cluster_count,
            "documents": self.document_count,
            "flags": self.flags,
        }
        if self.type_ratios is not None:
            out["type_ratios"] = self.type_ratios
        if self.by_genre is not None:
            out["by_genre"] = {g: r.to_dict() for g, r in self.by_genre.items()}
        return out

    def format_row(self, label: str) -> str:
        return (
            f"{label:<24} {100 * self.b_cubed.f1:>6.2f} {100 * self.muc.f1:>6.2f} "
            f"{100 * self.ceaf_e.f1:>6.2f} {100 * self.avg_f1:>7.2f} {self.impure_cluster_count:>5}"
        )

    def format_table(self, label: str = "scores") -> str:
        header = f"{'':<24} {'B3':>6} {'MUC':>6} {'CEAFE':>6} {'Avg F1':>7} {'#IC':>5}"
        lines = [header, self.format_row(label)]
        if self.by_genre:
            for genre in sorted(self.by_genre):
                lines.append(self.by_genre[genre].format_row(f"  {genre}"))
        if self.flags:
            lines.append("flags: " + "; ".join(self.flags))
        return "\n".join(lines)


def score_documents(items: Sequence[ScoredDocument]) -> ScoreReport:
    """Corpus-level report: counts summed across documents, then divided."""
    totals = {name: MetricCounts() for name in METRIC_COUNTS}
    impure = 0
    flags: list[str] = []
    for item in items:
        for name, counter in METRIC_COUNTS.items():
            totals[name] = totals[name] + counter(item.key, item.response)
        impure += impure_clusters(item.response, item.types)
    for name, counts in totals.items():
        if counts.degenerate:
            flags.append(f"{name}: zero denominator scored as 0")
    muc_prf = totals["muc"].prf()
    b3_prf = totals["b_cubed"].prf()
    ceafe_prf = totals["ceaf_e"].prf()
    return ScoreReport(
        muc=muc_prf,
        b_cubed=b3_prf,
        ceaf_e=ceafe_prf,
        avg_f1=(muc_prf.f1 + b3_prf.f1 + ceafe_prf.f1) / 3.0,
        impure_cluster_count=impure,
        document_count=len(items),
        flags=flags,
    )


def document_avg_f1(item: ScoredDocument) -> float:
    """Per-document mean F1 of the three metrics (bootstrap unit)."""
    values = [counter(item.key, item.response).prf().f1 for counter in METRIC_COUNTS.values()]
    return sum(values) / len(values)


def type_frequency_ratios(items: Sequence[ScoredDocument],
                          exclude: tuple[str, ...] = ("OTHER",)) -> dict[str, float]:
    """Share of each type among typed mentions, minus the excluded labels."""
    counts: Counter[str] = Counter()
    for item in items:
        for label in item.types.values():
            if label is not None:
                counts[label] += 1
    total = sum(counts.values())
    if total == 0:
        return {}
    return {
        label: counts[label] / total
        for label in sorted(counts, key=lambda l: (-counts[l], l))
        if label not in exclude
    }


def score_by_group(items: Sequence[ScoredDocument],
                   key_fn: Callable[[str], str] = genre_of) -> dict[str, ScoreReport]:
    """One report per group of documents (genre by default), with type ratios."""
    groups: dict[str, list[ScoredDocument]] = {}
    for item in items:
        groups.setdefault(key_fn(item.doc_id), []).append(item)
    out = {}
    for group, members in sorted(groups.items()):
        report = score_documents(members)
        report.type_ratios = type_frequency_ratios(members)
        out[group] = report
    return out


# ---------------------------------------------------------------------------
# Paired bootstrap
# ---------------------------------------------------------------------------


def bootstrap_significance(scores_a: Sequence[float], scores_b: Sequence[float],
                           resamples: int = 10000, seed: int = 0) -> float:
    """Paired bootstrap over documents: P(mean(a - b) <= 0 under resampling).

    Resample means exactly at zero count half, so identical score lists give
    the null value 0.5 instead of saturating at 1.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired score lists must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 paired documents")
    diffs = a - b
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    idx = rng.integers(0, n, size=(resamples, n))
    means = diffs[idx].mean(axis=1)
    return float(np.mean(means < 0.0) + 0.5 * np.mean(means == 0.0))
