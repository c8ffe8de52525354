"""Seeded Gumbel and Laplace samplers shared by every mechanism.

Sampling is idealized real-valued inverse-CDF transformation of uniforms;
floating-point artifacts of that representation are documented, not
mitigated. The generator is counter-based and splittable so parallel
Monte-Carlo runs stay reproducible.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Union

import numpy as np

__all__ = [
    "NoiseScale",
    "SeededRng",
    "gumbel_from_uniform",
    "laplace_from_uniform",
    "sample_gumbel",
    "sample_laplace",
]

# Smallest margins keeping uniforms strictly inside (0, 1).
_U_LO = math.nextafter(0.0, 1.0)
_U_HI = math.nextafter(1.0, 0.0)


@dataclasses.dataclass(frozen=True)
class NoiseScale:
    """Noise scale b, typically 1/eps."""

    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("noise scale must be positive")


class SeededRng:
    """Deterministic, splittable random source.

    The same seed and call sequence reproduce the same sample stream. split()
    derives independent child generators whose streams are themselves a pure
    function of the parent seed and split order.
    """

    def __init__(self, seed: Optional[int] = None, _sequence: Optional[np.random.SeedSequence] = None):
        if _sequence is None:
            _sequence = np.random.SeedSequence(seed)
        self._sequence = _sequence
        self.seed = seed
        self._generator = np.random.Generator(np.random.Philox(_sequence))

    def split(self, n: int) -> list["SeededRng"]:
        """Returns n independent child generators."""
        if n < 1:
            raise ValueError("split count must be >= 1")
        return [SeededRng(seed=None, _sequence=child) for child in self._sequence.spawn(n)]

    def uniform_open(self, size: Optional[Union[int, tuple]] = None) -> Union[float, np.ndarray]:
        """Uniform draws clamped to the open interval (0, 1)."""
        u = self._generator.random(size)
        return np.clip(u, _U_LO, _U_HI)


def gumbel_from_uniform(u: Union[float, np.ndarray], b: float) -> Union[float, np.ndarray]:
    """Maps uniform u in (0, 1) to a Gumbel(b) variate: -b*ln(-ln(u))."""
    return -b * np.log(-np.log(u))


def laplace_from_uniform(u: Union[float, np.ndarray], b: float) -> Union[float, np.ndarray]:
    """Maps uniform u in (0, 1) to a Laplace(b) variate.

    Inverse CDF: -b*sign(u - 1/2)*ln(1 - 2*|u - 1/2|). The lower branch is
    evaluated as ln(2u) (the same quantity) so subnormal u stays finite; the
    upper branch uses log1p for accuracy near the median.
    """
    arr = np.asarray(u, dtype=float)
    shifted = arr - 0.5
    # 1 - 2|u - 1/2| equals 2u below the median and 1 - 2(u - 1/2) above it.
    # where() still evaluates the discarded branch, so silence its warning.
    with np.errstate(divide="ignore"):
        log_term = np.where(
            shifted < 0,
            np.log(2.0 * arr),
            np.log1p(-2.0 * np.abs(shifted)),
        )
    out = -b * np.sign(shifted) * log_term
    if np.ndim(u) == 0:
        return float(out)
    return out


def sample_gumbel(
    rng: SeededRng,
    scale: NoiseScale,
    size: Optional[Union[int, tuple]] = None,
) -> Union[float, np.ndarray]:
    """Draws Gumbel(scale.b) noise; a scalar when size is None."""
    u = rng.uniform_open(size)
    out = gumbel_from_uniform(u, scale.b)
    return float(out) if size is None else out


def sample_laplace(
    rng: SeededRng,
    scale: NoiseScale,
    size: Optional[Union[int, tuple]] = None,
) -> Union[float, np.ndarray]:
    """Draws Laplace(scale.b) noise; a scalar when size is None."""
    u = rng.uniform_open(size)
    out = laplace_from_uniform(u, scale.b)
    return float(out) if size is None else out
