"""
Feasible-set projection of an action distribution.

Restricting a base policy to the admissible actions and renormalizing is the
distribution closest to the base policy (in KL divergence) among those that
only take admissible actions. Two special cases are provided: a hard rule
that forces one action in trigger contexts, and soft reweighting by action
scores (Gibbs form), whose ``-inf`` scores act as exclusions.

Contexts are opaque hashable keys; nothing here interprets them.

Interface
---------
"""
import logging
import math
from dataclasses import dataclass
from typing import (Dict, FrozenSet, Hashable, Iterable, Mapping, Sequence,
                    TypeVar)

import numpy as np


# Types:
class InfeasibleError(ValueError): pass
class SupportError(ValueError): pass


K = TypeVar('K', bound=Hashable)
logger = logging.getLogger(__name__)

# normalizers below this count as zero
Z_TOL = 1e-12
SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PolicyDistribution:
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("Need a non-empty vector of probabilities")
        if (p < 0).any() or abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError("Probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, 'probs', p)

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> 'PolicyDistribution':
        w = np.asarray(weights, dtype=float)
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("Weights must be >= 0 with a positive sum")
        return cls(w / w.sum())

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, a: int) -> float:
        return float(self.probs[a])

    def support(self) -> FrozenSet[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.probs > 0))


@dataclass(frozen=True)
class FeasibleSet:
    allowed: FrozenSet[int]

    def __post_init__(self) -> None:
        if not self.allowed:
            raise InfeasibleError("Feasible set is empty")

    @classmethod
    def full(cls, n: int) -> 'FeasibleSet':
        return cls(frozenset(range(n)))

    def mask(self, n: int) -> np.ndarray:
        if any(a < 0 or a >= n for a in self.allowed):
            raise ValueError("Feasible action outside 0..{}".format(n - 1))
        m = np.zeros(n, dtype=bool)
        m[sorted(self.allowed)] = True
        return m


def normalizer(pi0: PolicyDistribution, feas: FeasibleSet) -> float:
    """Base mass of the feasible actions."""
    return float(pi0.probs[feas.mask(len(pi0))].sum())


def project(pi0: PolicyDistribution, feas: FeasibleSet) -> PolicyDistribution:
    """
    ``pi[a] = pi0[a] / Z`` for feasible `a` and 0 otherwise, where `Z` is
    the base mass of the feasible set.

    Raises:
        InfeasibleError: if `Z` is (numerically) zero.
    """
    mask = feas.mask(len(pi0))
    z = float(pi0.probs[mask].sum())
    if z < Z_TOL:
        raise InfeasibleError("Feasible actions have no base mass")
    return PolicyDistribution(np.where(mask, pi0.probs, 0.0) / z)


def kl_divergence(p: PolicyDistribution, q: PolicyDistribution,
                  strict: bool = False) -> float:
    """
    ``sum p log(p/q)`` with ``0 log 0 = 0``. Returns ``inf`` when `p` puts
    mass where `q` has none, or raises `SupportError` if `strict`.
    """
    if len(p) != len(q):
        raise ValueError("Distributions over different action sets")
    on = p.probs > 0
    if (q.probs[on] == 0).any():
        if strict:
            raise SupportError("Support of p not contained in support of q")
        return math.inf
    return float(np.sum(p.probs[on] * np.log(p.probs[on] / q.probs[on])))


def project_contextual(pi_by_context: Mapping[K, PolicyDistribution],
                       feasible_by_context: Mapping[K, FeasibleSet]
                       ) -> Dict[K, PolicyDistribution]:
    """Per-context projection; contexts without a feasible set are kept."""
    return {h: (project(pi, feasible_by_context[h])
                if h in feasible_by_context else pi)
            for h, pi in pi_by_context.items()}


def hard_rule_policy(pi0_by_context: Mapping[K, PolicyDistribution],
                     trigger_contexts: Iterable[K], q: int
                     ) -> Dict[K, PolicyDistribution]:
    """
    The policy that must take action `q` in every trigger context and
    follows `pi0` elsewhere.

    Raises:
        InfeasibleError: if `pi0` gives `q` no mass in some trigger context.
    """
    triggers = set(trigger_contexts)
    missing = triggers - set(pi0_by_context)
    if missing:
        raise KeyError("Trigger contexts without a base policy: {}"
                       .format(sorted(map(str, missing))))
    only_q = FeasibleSet(frozenset([q]))
    return project_contextual(pi0_by_context, {h: only_q for h in triggers})


def gibbs_reweight(pi0: PolicyDistribution, scores: Sequence[float],
                   tau: float) -> PolicyDistribution:
    """
    ``pi[a] ~ pi0[a] exp(tau * r[a])``; actions scored ``-inf`` get exactly 0.

    Raises:
        InfeasibleError: if no action keeps positive mass.
    """
    r = np.asarray(scores, dtype=float)
    if len(r) != len(pi0):
        raise ValueError("One score per action required")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if np.isnan(r).any() or np.isposinf(r).any():
        raise ValueError("Scores must be finite or -inf")
    if not np.isfinite(r).any():
        raise InfeasibleError("Every action is excluded")
    live = np.isfinite(r) & (pi0.probs > 0)
    if not live.any():
        raise InfeasibleError("Reweighting removed all mass")
    # normalize in log space over the actions that can keep mass
    logw = np.log(pi0.probs[live]) + tau * r[live]
    w = np.zeros(len(r))
    w[live] = np.exp(logw - logw.max())
    return PolicyDistribution(w / w.sum())
