"""
Graph evolution under API churn.

- `integrate_node` adds a new API, clustering its parameters into the
  existing parameter nodes.
- `apply_pruning` soft-deletes APIs that fail often or are rarely used
  within the last ``tau_days``; searches stop admitting them.
- `reactivate` probes a random fraction of pruned APIs and restores the ones
  that answer again.
- `propagate_weights` blends each edge weight with its recent success ratio.

All of these mutate the graph in one batch each, so they can be applied
through `toolgraph.GraphStore.apply` while searches keep reading the previous
snapshot.

Interface
---------
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from linkscore import StatisticalScorer, score_edges, sigmoid
from toolgraph import (ApiNode, ApiSpec, SimilarityProvider, ToolGraph,
                       DEFAULT_THRESHOLD, expire_events, integrate_spec)
from toolsearch import coerce_config, read_config_file


# Types:
class EvolutionConfigError(ValueError): pass


Prober = Callable[[str], bool]

logger = logging.getLogger(__name__)

FREQ_INV_CAP = 20.0


@dataclass
class EvolutionConfig:
    lam: float = 0.7
    prune_threshold: float = 0.7
    reactivate_frac: float = 0.1
    eta_prop: float = 0.5
    tau_days: int = 7

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ('lam', 'reactivate_frac', 'eta_prop'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise EvolutionConfigError("{} must be in [0,1]".format(name))
        if self.tau_days <= 0:
            raise EvolutionConfigError("tau_days must be positive")

    @classmethod
    def from_file(cls, path: str) -> 'EvolutionConfig':
        return coerce_config(cls, read_config_file(path, EvolutionConfigError),
                             EvolutionConfigError, aliases={'lambda': 'lam'})


def prune_score(f_fail: float, f_freq: float, lam: float) -> float:
    """
    ``lam * sigmoid(f_fail) + (1 - lam) * sigmoid(1 / f_freq)``. A node with
    no recent use (``f_freq == 0``) takes the inverse frequency as 20.
    """
    inv = FREQ_INV_CAP if f_freq == 0 else 1.0 / f_freq
    return lam * sigmoid(f_fail) + (1.0 - lam) * sigmoid(inv)


def window_usage(node: ApiNode, now: float, tau_days: float
                 ) -> Tuple[float, float]:
    """(failure rate, invocations per day) over the window ending at `now`."""
    events = node.stats.window(now, tau_days)
    if not events:
        return 0.0, 0.0
    fails = sum(1 for e in events if not e.success)
    return fails / len(events), len(events) / tau_days


def latest_timestamp(g: ToolGraph) -> float:
    return max((e.timestamp for n in g.nodes.values()
                for e in n.stats.recent_events), default=0.0)


def apply_pruning(g: ToolGraph, cfg: EvolutionConfig,
                  now: Optional[float] = None) -> Tuple[ToolGraph, List[str]]:
    """
    Mark inactive every active API whose prune score exceeds
    ``cfg.prune_threshold``.

    Args:
        now: end of the usage window, in days; defaults to the latest event
            timestamp in the graph.

    Returns:
        The graph and the ids pruned by this call, sorted.
    """
    now = latest_timestamp(g) if now is None else now
    pruned = []
    with g.batch():
        for api_id in g.api_ids():
            node = g.api(api_id)
            if not node.active:
                continue
            f_fail, f_freq = window_usage(node, now, cfg.tau_days)
            score = prune_score(f_fail, f_freq, cfg.lam)
            if score > cfg.prune_threshold:
                node.active = False
                pruned.append(api_id)
                logger.info("Pruned {} (score {:.4f})".format(api_id, score))
    return g, pruned


def reactivate(g: ToolGraph, cfg: EvolutionConfig, prober: Prober,
               rng: np.random.Generator) -> List[str]:
    """
    Probe ``ceil(reactivate_frac * |pruned|)`` randomly chosen pruned APIs
    and restore those `prober` reports as available. A restored API keeps its
    lifetime counters but loses its recent failures.

    Returns:
        Restored ids, sorted.
    """
    pruned = [a for a in g.api_ids() if not g.api(a).active]
    if not pruned:
        return []
    n = min(len(pruned), math.ceil(round(cfg.reactivate_frac * len(pruned), 9)))
    picks = sorted(rng.choice(len(pruned), size=n, replace=False)) if n else []
    restored = []
    with g.batch():
        for i in picks:
            api_id = pruned[i]
            if prober(api_id):
                node = g.api(api_id)
                node.active = True
                node.stats.clear_failures()
                restored.append(api_id)
                logger.info("Reactivated {}".format(api_id))
            else:
                logger.debug("Probe failed for {}".format(api_id))
    return restored


def propagate_edge_weight(w_prev: float, succ_uv_window: int,
                          succ_v_window: int, eta_prop: float) -> float:
    """
    ``eta * w_prev + (1 - eta) * succ_uv / succ_v``; the recent ratio is 0
    when `succ_v_window` is 0.
    """
    if succ_uv_window > succ_v_window:
        raise ValueError("succ_uv_window exceeds succ_v_window")
    ratio = succ_uv_window / succ_v_window if succ_v_window else 0.0
    return eta_prop * w_prev + (1.0 - eta_prop) * ratio


def propagate_weights(g: ToolGraph, cfg: EvolutionConfig,
                      now: Optional[float] = None) -> ToolGraph:
    """
    Blend every edge's statistical weight with its success ratio over the
    recent window, then copy the result into the search weights.
    """
    now = latest_timestamp(g) if now is None else now
    with g.batch():
        for e in g.edges():
            recent = [ev for ev in g.nodes[e.dst].stats.window(now, cfg.tau_days)
                      if ev.success]
            via = sum(1 for ev in recent if e.src in ev.peers)
            e.w_stat = propagate_edge_weight(e.w_stat, via, len(recent),
                                             cfg.eta_prop)
        score_edges(g, StatisticalScorer())
    return g


def integrate_node(g: ToolGraph, new_api_spec: ApiSpec,
                   sim: SimilarityProvider,
                   threshold: float = DEFAULT_THRESHOLD) -> ToolGraph:
    """
    Add a new API with zeroed statistics. Its parameters join existing
    parameter nodes where similar enough; new structural edges start at
    weight 0 and no existing weight changes.
    """
    integrate_spec(g, new_api_spec, sim, threshold)
    logger.info("Integrated {}".format(new_api_spec.id))
    return g


def maintain(g: ToolGraph, cfg: EvolutionConfig, now: float, prober: Prober,
             rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    """
    One maintenance round: drop events older than the window, prune, then
    reactivate. Returns (pruned, restored).
    """
    with g.batch():
        expire_events(g, now, cfg.tau_days)
        _, pruned = apply_pruning(g, cfg, now)
        restored = reactivate(g, cfg, prober, rng)
    return pruned, restored
