"""KL-divergence-matched subset selection over token-length distributions.

Benchmark prompts are reduced to their token lengths; a subset is chosen
so that its length histogram stays close (in KL divergence, subset
against full corpus) to the full dataset. Selection runs in two stages:
proportional stratified allocation per histogram bin, then greedy
selected/unselected swaps that each strictly reduce the divergence.
Everything is deterministic given (lengths, fraction, num_bins, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BinMismatch, EmptyDataset, FractionOutOfRange, UnsupportedZero


@dataclass(frozen=True)
class TokenLengthHistogram:
    """Equal-width histogram with additive smoothing.

    Smoothed bin probabilities are (count + alpha) / (N + alpha * B); with
    alpha > 0 they are strictly positive everywhere, which keeps the KL
    divergence finite.
    """

    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    smoothing_alpha: float

    def __post_init__(self) -> None:
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("need exactly len(counts)+1 bin edges")
        if any(b >= a for a, b in zip(self.bin_edges[1:], self.bin_edges)):
            raise ValueError("bin edges must be strictly increasing")
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be nonnegative")

    @property
    def total(self) -> int:
        return sum(self.counts)

    def probabilities(self) -> np.ndarray:
        alpha = self.smoothing_alpha
        n_bins = len(self.counts)
        counts = np.asarray(self.counts, dtype=float)
        return (counts + alpha) / (self.total + alpha * n_bins)


@dataclass(frozen=True)
class SubsetPlan:
    indices: tuple[int, ...]
    achieved_kl_nats: float
    fraction: float


def _bin_indices(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # Values on an interior edge fall into the lower bin; the global max
    # (equal to the last edge) falls into the last bin.
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


def histogram(
    lengths: Sequence[int], num_bins: int, smoothing_alpha: float = 0.5
) -> TokenLengthHistogram:
    """Equal-width histogram of token lengths spanning [min, max].

    When every length is identical the span degenerates; the edges are
    widened by one so a single bin holds everything.
    """
    if len(lengths) == 0:
        raise EmptyDataset("no token lengths supplied")
    if num_bins < 2:
        raise ValueError("num_bins must be at least 2")
    values = np.asarray(lengths, dtype=float)
    if np.any(values <= 0):
        raise ValueError("token lengths must be positive")
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, num_bins + 1)
    idx = _bin_indices(values, edges)
    counts = np.bincount(idx, minlength=num_bins)
    return TokenLengthHistogram(
        bin_edges=tuple(edges.tolist()),
        counts=tuple(int(c) for c in counts),
        smoothing_alpha=smoothing_alpha,
    )


def kl_divergence(p: TokenLengthHistogram, q: TokenLengthHistogram) -> float:
    """KL(p || q) in nats over the shared bins.

    Requires identical bin edges. Where p has mass, q must too: either both
    histograms are smoothed or q is strictly positive on p's support.
    """
    if p.bin_edges != q.bin_edges:
        raise BinMismatch("histograms use different bin edges")
    pp = p.probabilities()
    qq = q.probabilities()
    mask = pp > 0
    if np.any(qq[mask] == 0):
        raise UnsupportedZero("q has zero mass where p > 0 and no smoothing is in effect")
    return float(np.sum(pp[mask] * np.log(pp[mask] / qq[mask])))


def _smoothed_kl_from_counts(
    subset_counts: np.ndarray, full_counts: np.ndarray, alpha: float
) -> float:
    n_bins = len(full_counts)
    p = (subset_counts + alpha) / (subset_counts.sum() + alpha * n_bins)
    q = (full_counts + alpha) / (full_counts.sum() + alpha * n_bins)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _stratified_quotas(full_counts: np.ndarray, fraction: float, target: int) -> np.ndarray:
    """Largest-remainder allocation of the subset size across bins."""
    raw = fraction * full_counts
    quotas = np.floor(raw).astype(int)
    remainders = raw - quotas
    remaining = target - int(quotas.sum())
    order = sorted(range(len(full_counts)), key=lambda b: (-remainders[b], b))
    for b in order:
        if remaining == 0:
            break
        if quotas[b] < full_counts[b]:
            quotas[b] += 1
            remaining -= 1
    if remaining > 0:  # capacity spill: top up any bin with room, low index first
        for b in range(len(full_counts)):
            while remaining > 0 and quotas[b] < full_counts[b]:
                quotas[b] += 1
                remaining -= 1
    return quotas


def _greedy_swaps(
    chosen: np.ndarray,
    members: list[np.ndarray],
    full_counts: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    max_iterations: int,
) -> list[float]:
    """Swap one selected/unselected pair at a time, always the bin move that
    reduces KL the most, until no move improves. Returns the KL after each
    accepted state (including the initial one), which is non-increasing."""
    n_bins = len(full_counts)
    subset_counts = np.array(
        [int(chosen[m].sum()) for m in members], dtype=float
    )
    history = [_smoothed_kl_from_counts(subset_counts, full_counts, alpha)]
    for _ in range(max_iterations):
        current = history[-1]
        best_kl = current
        best_move = None
        for a in range(n_bins):
            if subset_counts[a] == 0:
                continue
            for b in range(n_bins):
                if a == b or subset_counts[b] >= full_counts[b]:
                    continue
                subset_counts[a] -= 1
                subset_counts[b] += 1
                trial = _smoothed_kl_from_counts(subset_counts, full_counts, alpha)
                subset_counts[a] += 1
                subset_counts[b] -= 1
                if trial < best_kl - 1e-15:
                    best_kl = trial
                    best_move = (a, b)
        if best_move is None:
            break
        a, b = best_move
        drop_pool = members[a][chosen[members[a]]]
        add_pool = members[b][~chosen[members[b]]]
        chosen[rng.choice(drop_pool)] = False
        chosen[rng.choice(add_pool)] = True
        subset_counts[a] -= 1
        subset_counts[b] += 1
        history.append(best_kl)
    return history


def sample_subset(
    lengths: Sequence[int],
    fraction: float,
    num_bins: int = 30,
    seed: int = 0,
    smoothing_alpha: float = 0.5,
) -> SubsetPlan:
    """Select round(fraction * N) prompts whose length histogram matches the
    full corpus, reporting the achieved KL divergence in nats."""
    if not 0.0 < fraction <= 1.0:
        raise FractionOutOfRange(f"fraction={fraction} must be in (0, 1]")
    n = len(lengths)
    if n == 0:
        raise EmptyDataset("no token lengths supplied")
    target = int(math.floor(fraction * n + 0.5))
    if target < 1:
        raise FractionOutOfRange(f"fraction={fraction} selects no items from {n}")

    full = histogram(lengths, num_bins, smoothing_alpha)
    values = np.asarray(lengths, dtype=float)
    edges = np.asarray(full.bin_edges)
    idx = _bin_indices(values, edges)
    full_counts = np.asarray(full.counts, dtype=int)
    members = [np.flatnonzero(idx == b) for b in range(num_bins)]

    quotas = _stratified_quotas(full_counts, fraction, target)
    rng = np.random.default_rng(seed)
    chosen = np.zeros(n, dtype=bool)
    for b in range(num_bins):
        if quotas[b] > 0:
            picked = rng.choice(members[b], size=int(quotas[b]), replace=False)
            chosen[picked] = True

    history = _greedy_swaps(
        chosen, members, full_counts.astype(float), smoothing_alpha, rng, 10 * target
    )
    indices = tuple(int(i) for i in np.flatnonzero(chosen))
    return SubsetPlan(indices=indices, achieved_kl_nats=history[-1], fraction=fraction)


# -- file interfaces ----------------------------------------------------------

def read_lengths_file(path: str) -> list[int]:
    """Read newline-delimited positive integer token lengths."""
    lengths = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                lengths.append(int(text))
            except ValueError:
                raise ValueError(f"line {lineno}: not an integer: {text!r}") from None
    return lengths


def write_plan_file(plan: SubsetPlan, path: str) -> None:
    """One-line JSON header, then one selected index per line."""
    header = {
        "fraction": plan.fraction,
        "size": len(plan.indices),
        "achieved_kl_nats": plan.achieved_kl_nats,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for i in plan.indices:
            f.write(f"{i}\n")


def read_plan_file(path: str) -> SubsetPlan:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        indices = tuple(int(line) for line in f if line.strip())
    return SubsetPlan(
        indices=indices,
        achieved_kl_nats=float(header["achieved_kl_nats"]),
        fraction=float(header["fraction"]),
    )
