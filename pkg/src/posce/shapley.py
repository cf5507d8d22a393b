"""Cooperative-game engine: exact and sampled Shapley values over word positions.

Players are identified by indices 0..n-1 and coalitions by ``frozenset`` of
indices. The characteristic (payoff) function must be total and deterministic:
within one game instance, identical coalitions yield identical payoffs. Exact
computation enumerates all 2^n coalitions and is capped at n = 20; beyond the
cap use :func:`shapley_permutation`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np

from .errors import CapExceededError, ValidationError

PayoffFn = Callable[[frozenset[int]], float]

#: Hard cap on exact enumeration: 2^20 coalitions (~1M payoff evaluations).
ENUMERATION_CAP = 20


class EstimationMethod(Enum):
    EXACT = "exact"
    PERMUTATION = "permutation"


@dataclass(frozen=True)
class CoalitionGame:
    """A set of players plus a payoff function over subsets of them.

    ``payoff`` maps a frozenset of player indices (a subset of
    ``{0, ..., player_count - 1}``, including the empty set) to a real number.
    """

    player_count: int
    payoff: PayoffFn

    def __post_init__(self) -> None:
        if self.player_count < 0:
            raise ValidationError(f"player_count must be >= 0, got {self.player_count}")


@dataclass(frozen=True)
class ShapleyValues:
    """Per-player attribution vector with estimator metadata.

    ``sample_count`` and ``seed`` are 0 for exact results.
    """

    values: np.ndarray
    method: EstimationMethod
    sample_count: int = 0
    seed: int = 0


@dataclass(frozen=True)
class AxiomReport:
    """Pass/fail flags for the exhaustively checkable Shapley axioms.

    Additivity spans two games and is checked by the caller on paired games;
    it has no single-game test.
    """

    efficiency: bool
    symmetry: bool
    dummy: bool
    efficiency_gap: float
    max_symmetry_gap: float = 0.0
    max_dummy_value: float = 0.0

    def all_pass(self) -> bool:
        return self.efficiency and self.symmetry and self.dummy


def coalition_weight(n: int, subset_size: int) -> Fraction:
    """Exact Shapley weight (n - s - 1)! * s! / n! for a subset of size s.

    Returned as an exact rational; convert to float only when multiplying a
    marginal contribution, so factorial ratios never round.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1 players, got {n}")
    if not 0 <= subset_size <= n - 1:
        raise ValidationError(
            f"subset_size must be in [0, {n - 1}] for n={n}, got {subset_size}"
        )
    return Fraction(
        math.factorial(n - subset_size - 1) * math.factorial(subset_size),
        math.factorial(n),
    )


def enumerate_coalitions(n: int) -> Iterator[frozenset[int]]:
    """Yield all 2^n subsets of {0..n-1} once, in ascending-bitmask order.

    The empty set comes first; the 2^n - 1 nonempty subsets follow.
    """
    if n < 0:
        raise ValidationError(f"player count must be >= 0, got {n}")
    if n > ENUMERATION_CAP:
        raise CapExceededError(
            f"enumeration of 2^{n} coalitions exceeds the cap of n={ENUMERATION_CAP}; "
            f"use shapley_permutation for games this large"
        )
    for mask in range(1 << n):
        yield _mask_to_subset(mask, n)


def marginal_contribution(game: CoalitionGame, subset: frozenset[int], player: int) -> float:
    """payoff(subset + player) - payoff(subset)."""
    if player in subset:
        raise ValidationError(f"player {player} is already in the coalition")
    if not 0 <= player < game.player_count:
        raise ValidationError(
            f"player {player} out of range for {game.player_count}-player game"
        )
    return game.payoff(subset | {player}) - game.payoff(subset)


def shapley_exact(game: CoalitionGame) -> ShapleyValues:
    """Exact Shapley values by full coalition enumeration.

    Each coalition's payoff is evaluated exactly once and memoized; the
    weighted marginal contributions are accumulated per player.
    """
    n = game.player_count
    if n > ENUMERATION_CAP:
        raise CapExceededError(
            f"exact Shapley needs 2^{n} payoff evaluations, over the cap of "
            f"n={ENUMERATION_CAP}; use shapley_permutation instead"
        )
    values = np.zeros(n)
    if n == 0:
        return ShapleyValues(values=values, method=EstimationMethod.EXACT)

    payoffs = np.empty(1 << n)
    for mask in range(1 << n):
        payoffs[mask] = game.payoff(_mask_to_subset(mask, n))

    weight_for_size = [float(coalition_weight(n, s)) for s in range(n)]
    for mask in range(1 << n):
        size = _popcount(mask)
        if size == n:
            continue
        w = weight_for_size[size]
        base = payoffs[mask]
        for player in range(n):
            bit = 1 << player
            if not mask & bit:
                values[player] += w * (payoffs[mask | bit] - base)
    return ShapleyValues(values=values, method=EstimationMethod.EXACT)


def shapley_permutation(game: CoalitionGame, samples: int, seed: int) -> ShapleyValues:
    """Monte Carlo estimate: mean marginal contribution over random player orderings.

    Draws ``samples`` uniformly random permutations from a generator seeded
    with ``seed``; reruns with identical inputs are bit-identical. Payoffs are
    cached per coalition across permutations, so repeated prefixes cost one
    evaluation.
    """
    if samples < 1:
        raise ValidationError(f"samples must be >= 1, got {samples}")
    n = game.player_count
    values = np.zeros(n)
    if n == 0:
        return ShapleyValues(
            values=values,
            method=EstimationMethod.PERMUTATION,
            sample_count=samples,
            seed=seed,
        )

    rng = np.random.default_rng(seed)
    cache: dict[int, float] = {}

    def payoff_of_mask(mask: int) -> float:
        got = cache.get(mask)
        if got is None:
            got = game.payoff(_mask_to_subset(mask, n))
            cache[mask] = got
        return got

    for _ in range(samples):
        order = rng.permutation(n)
        mask = 0
        previous = payoff_of_mask(0)
        for player in order:
            mask |= 1 << int(player)
            current = payoff_of_mask(mask)
            values[player] += current - previous
            previous = current
    values /= samples
    return ShapleyValues(
        values=values,
        method=EstimationMethod.PERMUTATION,
        sample_count=samples,
        seed=seed,
    )


def verify_axioms(game: CoalitionGame, values: ShapleyValues, tolerance: float) -> AxiomReport:
    """Exhaustively check Efficiency, Symmetry, and Dummy against `values`.

    Symmetric player pairs and dummy players are detected by exact payoff
    equality, which is well defined because payoffs are deterministic within a
    game instance. Requires full enumeration, so the n = 20 cap applies.
    """
    n = game.player_count
    if n > ENUMERATION_CAP:
        raise CapExceededError(
            f"axiom verification enumerates all coalitions and is capped at "
            f"n={ENUMERATION_CAP}; got n={n}"
        )
    if len(values.values) != n:
        raise ValidationError(
            f"values length {len(values.values)} does not match player count {n}"
        )

    payoffs = np.empty(1 << n) if n > 0 else np.array([game.payoff(frozenset())])
    for mask in range(1 << n):
        payoffs[mask] = game.payoff(_mask_to_subset(mask, n))

    full = (1 << n) - 1
    efficiency_gap = abs(float(np.sum(values.values)) - float(payoffs[full] - payoffs[0]))
    efficiency_ok = efficiency_gap <= tolerance

    max_symmetry_gap = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if _pair_is_symmetric(payoffs, n, i, j):
                gap = float(abs(values.values[i] - values.values[j]))
                max_symmetry_gap = max(max_symmetry_gap, gap)
    symmetry_ok = max_symmetry_gap <= tolerance

    max_dummy_value = 0.0
    for i in range(n):
        if _player_is_dummy(payoffs, n, i):
            max_dummy_value = max(max_dummy_value, float(abs(values.values[i])))
    dummy_ok = max_dummy_value <= tolerance

    return AxiomReport(
        efficiency=efficiency_ok,
        symmetry=symmetry_ok,
        dummy=dummy_ok,
        efficiency_gap=efficiency_gap,
        max_symmetry_gap=max_symmetry_gap,
        max_dummy_value=max_dummy_value,
    )


def _pair_is_symmetric(payoffs: np.ndarray, n: int, i: int, j: int) -> bool:
    """True when i and j have identical marginal contributions in every
    coalition excluding both."""
    bi, bj = 1 << i, 1 << j
    for mask in range(1 << n):
        if mask & (bi | bj):
            continue
        if payoffs[mask | bi] != payoffs[mask | bj]:
            return False
    return True


def _player_is_dummy(payoffs: np.ndarray, n: int, i: int) -> bool:
    bit = 1 << i
    for mask in range(1 << n):
        if mask & bit:
            continue
        if payoffs[mask | bit] != payoffs[mask]:
            return False
    return True


def _mask_to_subset(mask: int, n: int) -> frozenset[int]:
    return frozenset(i for i in range(n) if mask & (1 << i))


def _popcount(mask: int) -> int:
    return mask.bit_count()
