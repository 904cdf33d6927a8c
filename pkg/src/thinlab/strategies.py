"""Decision rules for the thinning engine.

A strategy answers accept/reject for the round-i offer of the current ball,
reading only the observable allocation state and (optionally) its own
auxiliary randomness stream.  Round d is always an accept and the engine
never consults the strategy there.

Strategies are immutable after construction and safe to share across trials.
Each also provides `accept_mask`, the whole-round sequential acceptance mask
used by the vectorised engine path; it must consume the aux stream exactly
as per-ball `decide` calls would.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ConfigError, occurrence_rank
from .theory import ell


class Strategy:
    """Base decision rule; subclasses set `name` and implement `decide`."""

    name = "strategy"
    deterministic = True
    accept_mask = None  # subclasses may provide a vectorised round mask

    def decide(self, i: int, bin_index: int, state, aux) -> bool:
        raise NotImplementedError


class AlwaysAccept(Strategy):
    """Accept every offer; reduces d-thinning to classical one-choice."""

    name = "always-accept"

    def decide(self, i, bin_index, state, aux):
        return True

    def accept_mask(self, i, suggestions, aux):
        return np.ones(suggestions.size, dtype=bool)


class ThresholdStrategy(Strategy):
    """Reject a round-i offer iff the bin's round-i accepted count exceeds ell.

    For integer counts "count > ell" is "count > floor(ell)", so acceptance
    is "count <= cap" with cap = floor(ell).  Each bin therefore ends a
    non-final round with at most cap+1 accepted balls.
    """

    def __init__(self, ell_value: float, name: str = "threshold"):
        if ell_value <= 0:
            raise ConfigError(f"threshold parameter must be positive, got {ell_value}")
        self.ell = float(ell_value)
        self.cap = math.floor(self.ell)
        self.name = name

    def decide(self, i, bin_index, state, aux):
        if i == state.d:
            return True
        return int(state.round_loads[i - 1][bin_index]) <= self.cap

    def accept_mask(self, i, suggestions, aux):
        # Sequentially exact: a bin's first cap+1 round-i offers are the
        # accepted ones, every later offer sees count > cap.
        return occurrence_rank(suggestions) <= self.cap


class BetaThinning(Strategy):
    """Two-round baseline: rejection needs a permission coin of rate beta.

    At round 1 each ball flips one aux coin; with probability beta the greedy
    threshold rule may reject (bin's round-1 count above cap), otherwise the
    offer must be accepted.  Round 2 always accepts.  beta=0 is one-choice;
    beta near 1 approaches the two-thinning threshold strategy.
    """

    deterministic = False

    def __init__(self, beta: float, cap: int):
        if not 0 <= beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {beta}")
        if cap < 0:
            raise ConfigError(f"cap must be >= 0, got {cap}")
        self.beta = float(beta)
        self.cap = int(cap)
        self.name = f"beta-thinning:beta={self.beta!r},cap={self.cap}"

    def decide(self, i, bin_index, state, aux):
        if i != 1:
            return True
        permitted = aux.next() < self.beta
        if not permitted:
            return True
        return int(state.round_loads[0][bin_index]) <= self.cap

    def accept_mask(self, i, suggestions, aux):
        if i != 1:
            return np.ones(suggestions.size, dtype=bool)
        u = aux.take(suggestions.size)
        return (occurrence_rank(suggestions) <= self.cap) | (u >= self.beta)


def threshold_for(n: int, d: int) -> ThresholdStrategy:
    """Threshold strategy at the optimal ell(n, d)."""
    return ThresholdStrategy(ell(n, d))


def scaled_threshold(c: float, n: int, d: int) -> ThresholdStrategy:
    """Threshold strategy with ell scaled by c; c=1 is the optimal rule.

    Used to probe empirically that no rescaling beats c=1: small c forces
    near-empty-bin acceptances (many retries), large c degenerates to
    one-choice.
    """
    if c <= 0:
        raise ConfigError(f"scale must be positive, got {c}")
    return ThresholdStrategy(c * ell(n, d), name=f"threshold-scaled:c={float(c)!r}")


def beta_thinning(beta: float, d: int, cap: int) -> BetaThinning:
    """Beta-thinning baseline; defined for two rounds only."""
    if d != 2:
        raise ConfigError(f"beta-thinning is a two-round baseline, got d={d}")
    return BetaThinning(beta, cap)


def make_strategy(spec: str, n: int, d: int) -> Strategy:
    """Build a strategy from its selection string.

    Accepted forms: "always-accept", "threshold", "threshold:ell=2.5",
    "threshold-scaled:c=1.5", "beta-thinning:beta=0.5" (optional ",cap=K").
    """
    kind, _, argstr = spec.partition(":")
    args = {}
    if argstr:
        for item in argstr.split(","):
            key, _, value = item.partition("=")
            if not _:
                raise ConfigError(f"malformed strategy argument {item!r} in {spec!r}")
            args[key.strip()] = value.strip()
    try:
        if kind == "always-accept":
            _reject_unknown(args, set(), spec)
            return AlwaysAccept()
        if kind == "threshold":
            _reject_unknown(args, {"ell"}, spec)
            if "ell" in args:
                return ThresholdStrategy(float(args["ell"]),
                                         name=f"threshold:ell={float(args['ell'])!r}")
            return threshold_for(n, d)
        if kind == "threshold-scaled":
            _reject_unknown(args, {"c"}, spec)
            return scaled_threshold(float(args["c"]), n, d)
        if kind == "beta-thinning":
            _reject_unknown(args, {"beta", "cap"}, spec)
            cap = int(args["cap"]) if "cap" in args else math.floor(ell(n, d))
            return beta_thinning(float(args["beta"]), d, cap)
    except KeyError as exc:
        raise ConfigError(f"strategy {spec!r} is missing argument {exc}") from None
    raise ConfigError(f"unknown strategy {spec!r}")


def _reject_unknown(args: dict, allowed: set, spec: str) -> None:
    extra = set(args) - allowed
    if extra:
        raise ConfigError(f"unknown arguments {sorted(extra)} for strategy {spec!r}")
