"""Domain types for histograms, ranked views, candidate domains, and queries.

Counts are non-negative integers keyed by opaque string labels. Ranked views
use a fixed, data-independent tie-break (count descending, then label
ascending) so that every downstream selection rule is reproducible.
"""

from __future__ import annotations

import dataclasses
import itertools
from typing import Iterable, Iterator, Mapping, Optional, Sequence, TextIO, Tuple, Union

__all__ = [
    "BOTTOM",
    "MECHANISMS",
    "ConfigurationError",
    "Histogram",
    "ParseError",
    "PrivacyParams",
    "SensitivitySetting",
    "SortedView",
    "TopKOutput",
    "TopKRequest",
    "UNRESTRICTED",
    "default_pad_labels",
    "ingest_csv",
    "limited_domain",
    "sorted_view",
    "strict_limited_domain",
]

# Sentinel label for the early-stop symbol in outcome sequences. Data labels
# must not collide with it.
BOTTOM = "⊥"

# Mechanism selectors accepted by TopKRequest.
MECHANISMS = ("limited", "strict", "laplace", "optimal", "fixed")


class ParseError(ValueError):
    """Malformed input line. Carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigurationError(RuntimeError):
    """A configurable resource (e.g. the pad-label reserve) is unusable."""


@dataclasses.dataclass(frozen=True)
class Histogram:
    """Immutable label -> count map.

    Labels absent from the map have count 0. Explicitly stored zero counts
    are legal; ranked views ignore them but they still document the label as
    observed.
    """

    counts: Mapping[str, int]

    def __post_init__(self):
        frozen = dict(self.counts)
        for label, count in frozen.items():
            if not isinstance(label, str):
                raise ValueError(f"label {label!r} is not a string")
            if label == BOTTOM:
                raise ValueError(f"label {label!r} collides with the stop symbol")
            if isinstance(count, bool) or not isinstance(count, int):
                raise ValueError(f"count for {label!r} is not an integer")
            if count < 0:
                raise ValueError(f"count for {label!r} is negative")
        object.__setattr__(self, "counts", frozen)

    def get(self, label: str) -> int:
        return self.counts.get(label, 0)

    def __iter__(self) -> Iterator[str]:
        return iter(self.counts)


@dataclasses.dataclass(frozen=True)
class SortedView:
    """Nonzero histogram entries in rank order.

    entries[j - 1] is the j-th largest (label, count) pair under the fixed
    tie-break. rank_count(j) extends past the stored entries with 0.
    """

    entries: Tuple[Tuple[str, int], ...]

    def rank_count(self, j: int) -> int:
        """Returns the j-th largest count, 0 beyond the stored entries."""
        if j < 1:
            raise ValueError("rank index must be >= 1")
        if j > len(self.entries):
            return 0
        return self.entries[j - 1][1]

    def labels(self) -> Tuple[str, ...]:
        return tuple(label for label, _ in self.entries)


@dataclasses.dataclass(frozen=True)
class SensitivitySetting:
    """Per-user contribution model.

    Unrestricted: one user may move every count by at most 1. Restricted(d):
    one user moves at most d distinct counts, each by at most 1.
    """

    delta: Optional[int] = None

    def __post_init__(self):
        if self.delta is not None:
            if isinstance(self.delta, bool) or not isinstance(self.delta, int):
                raise ValueError("restricted sensitivity must be an integer")
            if self.delta < 1:
                raise ValueError("restricted sensitivity must be >= 1")

    @property
    def is_restricted(self) -> bool:
        return self.delta is not None

    @classmethod
    def restricted(cls, delta: int) -> "SensitivitySetting":
        return cls(delta=delta)

    def effective_min(self, kbar: int) -> int:
        """Returns min(delta, kbar) when restricted, else kbar."""
        if self.delta is None:
            return kbar
        return min(self.delta, kbar)


UNRESTRICTED = SensitivitySetting()


@dataclasses.dataclass(frozen=True)
class PrivacyParams:
    """Per-call privacy parameters plus composition slack.

    eps and delta are spent by each top-k call; delta_prime is the extra
    slack consumed once by the composition bound over a whole session.
    """

    eps: float
    delta: float
    delta_prime: float = 0.0
    sensitivity: SensitivitySetting = UNRESTRICTED

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.delta_prime < 0:
            raise ValueError("delta_prime must be non-negative")


@dataclasses.dataclass(frozen=True)
class TopKRequest:
    """One top-k query: how many indices, over how wide a candidate cut.

    For the optimal-threshold mechanism, kbar is the upper end of the cut
    search range rather than the cut itself. The fixed-threshold mechanism
    operates at cut k and requires kbar == k.
    """

    k: int
    kbar: int
    mechanism: str = "limited"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kbar < self.k:
            raise ValueError("kbar must be >= k")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism == "fixed" and self.kbar != self.k:
            raise ValueError("fixed-threshold mechanism requires kbar == k")


@dataclasses.dataclass(frozen=True)
class TopKOutput:
    """Released indices, ranked unless produced by the fixed-threshold rule.

    terminated means the stop symbol cut the output short of k; it is always
    False for the fixed-threshold mechanism, whose result is a set.
    """

    indices: Tuple[str, ...]
    terminated: bool

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(self.indices))
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("output indices must be distinct")

    @property
    def cost(self) -> int:
        """Budget charge: released indices plus one for an early stop."""
        return len(self.indices) + (1 if self.terminated else 0)


def ingest_csv(stream: Union[TextIO, Iterable[str]]) -> Histogram:
    """Parses "label,count" lines into a Histogram, summing repeated labels.

    A leading "label,count" header row is tolerated. Blank lines are
    skipped.

    Args:
      stream: text stream or iterable of lines.

    Returns:
      Histogram with per-label summed counts.

    Raises:
      ParseError: a line is not "label,count" with an integer count.
      ValueError: a count is negative.
    """
    totals: dict[str, int] = {}
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(line_number, f"expected 'label,count', got {line!r}")
        label, count_text = parts[0].strip(), parts[1].strip()
        if line_number == 1 and (label.lower(), count_text.lower()) == ("label", "count"):
            continue
        try:
            count = int(count_text)
        except ValueError:
            raise ParseError(line_number, f"count {count_text!r} is not an integer") from None
        if count < 0:
            raise ValueError(f"line {line_number}: negative count for label {label!r}")
        if not label:
            raise ParseError(line_number, "empty label")
        totals[label] = totals.get(label, 0) + count
    return Histogram(totals)


def sorted_view(h: Histogram) -> SortedView:
    """Ranks the nonzero entries of h: count descending, label ascending."""
    entries = sorted(
        ((label, count) for label, count in h.counts.items() if count > 0),
        key=lambda entry: (-entry[1], entry[0]),
    )
    return SortedView(entries=tuple(entries))


def default_pad_labels(h: Histogram) -> Iterator[str]:
    """Yields reserve labels "__pad_0", "__pad_1", ... absent from h."""
    for i in itertools.count():
        label = f"__pad_{i}"
        if label not in h.counts:
            yield label


def limited_domain(
    h: Histogram,
    kbar: int,
    reserve: Optional[Iterable[str]] = None,
) -> Tuple[str, ...]:
    """Returns the kbar highest-ranked labels, padded to exactly kbar.

    When fewer than kbar labels have nonzero counts, the tail is filled from
    a fixed, data-independent reserve so the candidate list always has size
    kbar. Reserve labels carry count 0.

    Args:
      h: input histogram.
      kbar: candidate cut, >= 1.
      reserve: optional iterable of pad labels; defaults to "__pad_i".
        Labels already stored in h or already chosen are skipped.

    Returns:
      Tuple of exactly kbar distinct labels in rank order, pads last.

    Raises:
      ConfigurationError: the reserve ran out before the domain was full.
      ValueError: kbar < 1.
    """
    if kbar < 1:
        raise ValueError("kbar must be >= 1")
    domain = list(sorted_view(h).labels()[:kbar])
    if len(domain) < kbar:
        pads = default_pad_labels(h) if reserve is None else iter(reserve)
        chosen = set(domain)
        for label in pads:
            if label in h.counts or label in chosen:
                continue
            domain.append(label)
            chosen.add(label)
            if len(domain) == kbar:
                break
        else:
            raise ConfigurationError(
                f"pad reserve exhausted: needed {kbar} labels, have {len(domain)}"
            )
    return tuple(domain)


def strict_limited_domain(h: Histogram, kbar: int) -> Tuple[str, ...]:
    """Returns labels whose count strictly exceeds the (kbar+1)-th largest.

    At most kbar labels qualify; no padding is applied, so the result may be
    empty (e.g. on a flat histogram).
    """
    if kbar < 1:
        raise ValueError("kbar must be >= 1")
    view = sorted_view(h)
    cutoff = view.rank_count(kbar + 1)
    return tuple(label for label, count in view.entries if count > cutoff)
