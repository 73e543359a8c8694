"""
Toolchain subgraph search over a `ToolGraph` snapshot.

Four searches share one result type, `SubgraphPlan`:

- `alpha_beta_search`: breadth-first backward traversal from a target API
  that prunes weak parameter nodes and stops expanding past strong ones,
  under dynamic thresholds.
- `heuristic_search`: simulated annealing wrapped around a genetic search
  over subsets of the target's backward neighborhood, scored by `fitness`.
  Several targets are searched in parallel and their plans merged.
- `exhaustive_search`: enumerates every target-connected subset of a small
  neighborhood; used to check the other two.
- `unpruned_search`: the whole backward neighborhood with no pruning, as a
  baseline for the two pruned searches.

Usage
-----

>>> from toolsearch import SearchConfig, heuristic_search
>>> plan = heuristic_search(g, ['get_weather'], SearchConfig(rng_seed=7))
>>> sorted(plan.nodes)
['get_weather', 'p:city']

Searches never admit inactive (pruned) APIs, nor any node in `exclude`.

Interface
---------
"""
import itertools
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import (Callable, Dict, FrozenSet, Iterable, List, NamedTuple,
                    Optional, Sequence, Tuple, Type)

import networkx as nx
import numpy as np

from toolgraph import (GraphError, SubgraphPlan, ToolGraph, UnknownNodeError,
                       induced_plan, merge_plans)


# Types:
class ConfigError(ValueError): pass
class UnknownTargetError(GraphError): pass
class EmptySubgraphError(GraphError): pass


class NeighborhoodTooLargeError(GraphError):
    def __init__(self, size: int, limit: int) -> None:
        super().__init__("Neighborhood has {} nodes; exhaustive search is "
                         "limited to {}".format(size, limit))
        self.size = size
        self.limit = limit


logger = logging.getLogger(__name__)

FITNESS_WEIGHTS = (0.35, 0.15, 0.3, 0.15, 0.05)
EXHAUSTIVE_LIMIT = 20
# retrieval strategies an agent can be configured with
SEARCH_MODES = ('heur', 'ab', 'unpruned')


class GenerationLog(NamedTuple):
    generation: int
    temperature: float
    theta: int
    best_fitness: float


def read_config_file(path: str, error: Type[Exception]) -> Dict[str, str]:
    """
    Read a flat ``key=value`` file; blank lines and ``#`` comments are
    skipped.
    """
    values = {}
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise error("{}:{}: expected key=value".format(path, lineno))
            k, v = line.split('=', 1)
            values[k.strip()] = v.strip()
    return values


def coerce_config(cls, values: Dict[str, str], error: Type[Exception],
                  aliases: Optional[Dict[str, str]] = None):
    """
    Build dataclass `cls` from string values, converting each by the type of
    the field's default. Unknown keys are rejected.
    """
    aliases = aliases or {}
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = aliases.get(key, key)
        if name not in known:
            raise error("Unknown config key: {}".format(key))
        default = known[name].default
        try:
            if isinstance(default, bool):
                kwargs[name] = raw.lower() in ('1', 'true', 'yes', 'on')
            elif isinstance(default, int):
                kwargs[name] = int(raw)
            elif isinstance(default, float):
                kwargs[name] = float(raw)
            elif isinstance(default, tuple):
                kwargs[name] = tuple(float(x) for x in raw.split(','))
            else:
                kwargs[name] = raw
        except ValueError:
            raise error("Bad value for {}: {!r}".format(key, raw))
    return cls(**kwargs)


@dataclass
class SearchConfig:
    alpha0: float = 0.4
    beta0: float = 0.9
    d_max_ab: int = 5
    T0: float = 200.0
    eta: float = 0.7
    pop_size: int = 20
    d_max_h: int = 4
    max_gens: int = 10
    elite_frac: float = 0.6
    rng_seed: int = 0
    weights: Tuple[float, ...] = FITNESS_WEIGHTS
    max_workers: int = 4
    exhaustive_limit: int = EXHAUSTIVE_LIMIT

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.alpha0 < self.beta0 <= 1.0:
            raise ConfigError("Need 0 <= alpha0 < beta0 <= 1")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("eta must be in (0,1)")
        if self.pop_size < 2:
            raise ConfigError("pop_size must be at least 2")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ConfigError("elite_frac must be in (0,1]")
        if self.T0 <= 0 or self.max_gens < 0:
            raise ConfigError("T0 must be positive and max_gens >= 0")
        if self.d_max_ab < 0 or self.d_max_h < 0:
            raise ConfigError("Depth bounds must be non-negative")
        if len(self.weights) != 5 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError("Fitness needs 5 weights summing to 1")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be positive")

    @classmethod
    def from_file(cls, path: str) -> 'SearchConfig':
        return coerce_config(cls, read_config_file(path, ConfigError),
                             ConfigError)


def depth_attenuation(d: int) -> float:
    if d < 0:
        raise ValueError("Negative depth")
    return 1.0 / (1.0 + math.sqrt(d))


def dynamic_threshold(d: int) -> float:
    if d < 0:
        raise ValueError("Negative depth")
    return max(0.3, 0.5 * 0.9 ** d)


def node_score(g: ToolGraph, u: str, v: str, target_api: str,
               target_param: Optional[str] = None, d: int = 0) -> float:
    """
    Score for admitting predecessor `u` of `v` at depth `d`: the average of
    the direct edge weight and the weights of any edges from `u` to the
    target API and the target parameter, attenuated by depth. Absent edges
    contribute 0.

    Raises:
        UnknownDependencyError: if the edge u->v does not exist.
    """
    total = g.edge(u, v).w_search
    for t in (target_api, target_param):
        if t is not None and g.has_edge(u, t):
            total += g.edge(u, t).w_search
    return total / 3.0 * depth_attenuation(d)


def _admitter(g: ToolGraph, exclude: Iterable[str]) -> Callable[[str], bool]:
    banned = frozenset(exclude)
    return lambda n: n not in banned and g.is_active(n)


def _check_target(g: ToolGraph, target: str) -> None:
    if not g.is_api(target):
        raise UnknownTargetError("Unknown target API: {}".format(target))


def alpha_beta_search(g: ToolGraph, target_api: str,
                      target_param: Optional[str] = None,
                      cfg: Optional[SearchConfig] = None,
                      exclude: Iterable[str] = (),
                      trace: Optional[List[Tuple[float, float]]] = None
                      ) -> SubgraphPlan:
    """
    Alpha-beta backward pruning from `target_api`.

    Predecessors of each dequeued node are scored in id order at that node's
    depth. A parameter node scoring below both the dynamic threshold and
    alpha is skipped; one scoring above beta stops expansion of the current
    node. Every admitted node raises alpha to ``0.85 * s`` and lowers beta
    to ``1.15 * s``. Nodes farther than ``cfg.d_max_ab`` hops are dropped.

    Args:
        trace: if given, receives (alpha, beta) after every admission.

    Returns:
        The subgraph induced by the kept nodes, scored by `fitness`.

    Raises:
        UnknownTargetError: if `target_api` is not an API of `g`.
        UnknownNodeError: if `target_param` is not a parameter of `g`.
    """
    cfg = cfg or SearchConfig()
    _check_target(g, target_api)
    if target_param is not None and not g.is_param(target_param):
        raise UnknownNodeError("Unknown target parameter: {}".format(
            target_param))
    admit = _admitter(g, exclude)
    alpha, beta = cfg.alpha0, cfg.beta0
    depth = {target_api: 0}
    queue = deque([target_api])
    while queue:
        v = queue.popleft()
        d = depth[v]
        for p in g.predecessors(v):
            if p in depth or not admit(p):
                continue
            s = node_score(g, p, v, target_api, target_param, d)
            if g.is_param(p):
                if s < dynamic_threshold(d) and s < alpha:
                    logger.debug("alpha-prune {} (s={:.4f})".format(p, s))
                    continue
                if s > beta:
                    logger.debug("beta-cut at {} (s={:.4f})".format(p, s))
                    break
            alpha = max(alpha, 0.85 * s)
            beta = min(beta, 1.15 * s)
            if trace is not None:
                trace.append((alpha, beta))
            depth[p] = d + 1
            queue.append(p)
    keep = [n for n, dn in depth.items() if dn <= cfg.d_max_ab]
    plan = induced_plan(g, [target_api], keep)
    return _with_score(plan, fitness(g, plan, cfg.weights))


def _with_score(plan: SubgraphPlan, score: float) -> SubgraphPlan:
    return SubgraphPlan(plan.targets, plan.nodes, plan.edges, score,
                        plan.depth_of)


def fitness(g: ToolGraph, sub: SubgraphPlan,
            weights: Sequence[float] = FITNESS_WEIGHTS) -> float:
    """
    Composite fitness of a target-connected subgraph:

    - compactness: mean closeness centrality of its APIs (undirected view)
    - parameter density: ``log(1 + params / nodes)``
    - depth penalty: ``0.2 exp(-d/10) + 0.8 exp(-n/8)`` with `d` the mean hop
      distance to the target and `n` the node count
    - mean search weight of its edges (0 when edgeless)
    - tree-likeness: ``1 / (1 + max(0, |E| - |V| + 1))``

    Raises:
        EmptySubgraphError: if `sub` has no nodes.
    """
    n = len(sub.nodes)
    if n == 0:
        raise EmptySubgraphError("Empty subgraph")
    w_cc, w_rho, w_dc, w_wn, w_cp = weights
    apis = [v for v in sub.nodes if g.is_api(v)]
    if n > 1 and apis:
        und = nx.Graph()
        und.add_nodes_from(sub.nodes)
        und.add_edges_from(sub.edges)
        closeness = nx.closeness_centrality(und)
        cc = sum(closeness[a] for a in apis) / len(apis)
    else:
        cc = 0.0
    rho = sum(1 for v in sub.nodes if g.is_param(v)) / n
    d = sum(sub.depth_of.get(v, 0) for v in sub.nodes) / n
    dc = 0.2 * math.exp(-d / 10.0) + 0.8 * math.exp(-n / 8.0)
    wn = (sum(g.edge(u, v).w_search for u, v in sub.edges) / len(sub.edges)
          if sub.edges else 0.0)
    cp = 1.0 / (1.0 + max(0, len(sub.edges) - n + 1))
    return (w_cc * cc + w_rho * math.log(1.0 + rho) + w_dc * dc +
            w_wn * wn + w_cp * cp)


def _rank_key(fit: float, nodes: FrozenSet[str]) -> Tuple[float, Tuple[str, ...]]:
    return (-fit, tuple(sorted(nodes)))


class _Population(object):
    """Chromosome codec and fitness memo for one target."""
    def __init__(self, g: ToolGraph, target: str, cfg: SearchConfig,
                 admit: Callable[[str], bool]) -> None:
        self.g = g
        self.target = target
        self.cfg = cfg
        hood = g.backward_reachable(target, admit, cfg.d_max_h)
        self.cands = [target] + sorted(n for n in hood if n != target)
        self.memo = {}  # type: Dict[FrozenSet[str], Tuple[float, SubgraphPlan]]

    def decode(self, gene: np.ndarray) -> SubgraphPlan:
        nodes = [c for c, bit in zip(self.cands, gene) if bit]
        return induced_plan(self.g, [self.target], nodes)

    def repair(self, gene: np.ndarray) -> np.ndarray:
        gene = gene.copy()
        gene[0] = True
        kept = self.decode(gene).nodes
        return np.array([c in kept for c in self.cands], dtype=bool)

    def key(self, gene: np.ndarray) -> FrozenSet[str]:
        return frozenset(c for c, bit in zip(self.cands, gene) if bit)

    def fitness(self, gene: np.ndarray) -> float:
        k = self.key(gene)
        if k not in self.memo:
            plan = self.decode(gene)
            self.memo[k] = (fitness(self.g, plan, self.cfg.weights), plan)
        return self.memo[k][0]

    def rank(self, gene: np.ndarray) -> Tuple[float, Tuple[str, ...]]:
        return _rank_key(self.fitness(gene), self.key(gene))

    def best(self) -> SubgraphPlan:
        nodes = min(self.memo, key=lambda k: _rank_key(self.memo[k][0], k))
        fit, plan = self.memo[nodes]
        return _with_score(plan, fit)

    def initial(self, rng: np.random.Generator) -> List[np.ndarray]:
        n, size = len(self.cands), self.cfg.pop_size
        pop = [np.eye(1, n, 0, dtype=bool)[0], np.ones(n, dtype=bool)]
        direct = set(self.g.predecessors(self.target))
        for i, c in enumerate(self.cands):
            if c in direct and len(pop) < size:
                gene = np.zeros(n, dtype=bool)
                gene[[0, i]] = True
                pop.append(gene)
        while len(pop) < size:
            density = rng.random()
            pop.append(rng.random(n) < density)
        return [self.repair(gene) for gene in pop[:size]]


def _evolve(g: ToolGraph, target: str, cfg: SearchConfig, seed: int,
            admit: Callable[[str], bool],
            log: Optional[List[GenerationLog]] = None) -> SubgraphPlan:
    rng = np.random.default_rng(seed)
    P = _Population(g, target, cfg, admit)
    n = len(P.cands)
    pop = P.initial(rng)
    n_elite = max(1, min(cfg.pop_size, int(round(cfg.elite_frac * cfg.pop_size))))
    T, k = cfg.T0, 0
    while T > 1 and k <= cfg.max_gens:
        pop.sort(key=P.rank)
        elites = pop[:n_elite]
        theta = int(T // 100)
        offspring = []  # type: List[np.ndarray]
        while n_elite + len(offspring) < cfg.pop_size:
            i, j = rng.integers(0, n_elite, size=2)
            a, b = elites[i], elites[j]
            child = np.where(rng.random(n) < 0.5, a, b)
            if theta and n > 1:
                flips = rng.choice(np.arange(1, n), size=min(theta, n - 1),
                                   replace=False)
                child[flips] = ~child[flips]
            child = P.repair(child)
            worse = max(a, b, key=P.rank)
            delta = P.fitness(worse) - P.fitness(child)
            if delta > 0 and rng.random() >= math.exp(-delta * 100.0 / T):
                child = worse.copy()
            offspring.append(child)
        pop = elites + offspring
        best_fit = max(P.fitness(c) for c in pop)
        if log is not None:
            log.append(GenerationLog(k, T, theta, best_fit))
        logger.debug("{} gen {}: T={:.2f} theta={} best={:.6f}"
                     .format(target, k, T, theta, best_fit))
        T = cfg.eta ** (1 + k / 5.0) * T
        k += 1
    return P.best()


def heuristic_search(g: ToolGraph, targets: Sequence[str],
                     cfg: Optional[SearchConfig] = None,
                     exclude: Iterable[str] = (),
                     logs: Optional[Dict[str, List[GenerationLog]]] = None
                     ) -> SubgraphPlan:
    """
    Hybrid annealing/genetic search for each target, merged into one plan.

    Target ``i`` is searched with seed ``cfg.rng_seed + i`` on a thread pool,
    so the result is the same whether the pool has one worker or many.

    Args:
        g: graph snapshot; not mutated.
        targets: target API ids, in priority order.
        cfg: search configuration.
        exclude: node ids that may not appear in the plan.
        logs: if given, receives the per-generation log of each target.

    Returns:
        The merged plan; its score is the mean of the per-target best
        fitness values.
    """
    cfg = cfg or SearchConfig()
    if not targets:
        raise UnknownTargetError("No targets given")
    for t in targets:
        _check_target(g, t)
    admit = _admitter(g, exclude)
    if logs is not None:
        for t in targets:
            logs[t] = []

    def run(it: Tuple[int, str]) -> SubgraphPlan:
        i, t = it
        return _evolve(g, t, cfg, cfg.rng_seed + i, admit,
                       logs[t] if logs is not None else None)

    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        plans = list(pool.map(run, enumerate(targets)))
    return merge_plans(plans)


def exhaustive_search(g: ToolGraph, target_api: str,
                      d_max: Optional[int] = None,
                      cfg: Optional[SearchConfig] = None,
                      exclude: Iterable[str] = ()) -> SubgraphPlan:
    """
    Fitness-maximal target-connected subset of the `d_max`-hop backward
    neighborhood, ties broken by the lexicographically smallest sorted
    node-id tuple.

    Raises:
        NeighborhoodTooLargeError: if the neighborhood (target included)
            exceeds ``cfg.exhaustive_limit`` nodes.
    """
    cfg = cfg or SearchConfig()
    _check_target(g, target_api)
    d_max = cfg.d_max_h if d_max is None else d_max
    hood = g.backward_reachable(target_api, _admitter(g, exclude), d_max)
    others = sorted(n for n in hood if n != target_api)
    if len(others) + 1 > cfg.exhaustive_limit:
        raise NeighborhoodTooLargeError(len(others) + 1, cfg.exhaustive_limit)
    best = None  # type: Optional[Tuple[Tuple[float, Tuple[str, ...]], SubgraphPlan]]
    for r in range(len(others) + 1):
        for combo in itertools.combinations(others, r):
            plan = induced_plan(g, [target_api], combo)
            if len(plan.nodes) != r + 1:
                continue
            fit = fitness(g, plan, cfg.weights)
            key = _rank_key(fit, plan.nodes)
            if best is None or key < best[0]:
                best = (key, _with_score(plan, fit))
    assert best is not None
    return best[1]


def unpruned_search(g: ToolGraph, targets: Sequence[str],
                    cfg: Optional[SearchConfig] = None,
                    exclude: Iterable[str] = ()) -> SubgraphPlan:
    """
    Every admitted node within ``cfg.d_max_h`` hops upstream of each target,
    merged into one plan; its score is the mean per-target fitness.
    """
    cfg = cfg or SearchConfig()
    if not targets:
        raise UnknownTargetError("No targets given")
    admit = _admitter(g, exclude)
    plans = []
    for t in targets:
        _check_target(g, t)
        plan = induced_plan(g, [t], g.backward_reachable(t, admit, cfg.d_max_h))
        plans.append(_with_score(plan, fitness(g, plan, cfg.weights)))
    return merge_plans(plans)
