"""
The tool dependency graph: API nodes and standardized parameter nodes joined
by structural edges (derived from API schemas) and behavioral edges (derived
from invocation history). Every edge carries a statistical weight ``w_stat``
(the empirical success ratio) and a search weight ``w_search`` (whatever the
configured edge scorer says; see `linkscore`).

Usage
-----

Build a graph from API descriptions::

>>> from toolgraph import ApiSpec, ParamSpec, LexicalSimilarity, build_graph
>>> specs = [ApiSpec('get_weather', 'get_weather', 'Current weather for a city',
...                  inputs=[ParamSpec('city', 'Name of the city')],
...                  outputs=[ParamSpec('temperature', 'Temperature in celsius')])]
>>> g = build_graph(specs, LexicalSimilarity())
>>> g.version
1

Parameters of different APIs that mean the same thing are clustered into a
single `ParamNode` (see `ParamClusterer`), so that the output of one API can be
wired to the input of another even when their schemas name it differently.

Mutations happen in batches (`ToolGraph.batch`); each batch bumps `version`
exactly once. A `GraphStore` publishes immutable snapshots and hot-swaps a
new snapshot in after every batch, so readers never see a half-applied update.

Graphs are saved as line-oriented UTF-8 text (`save_graph` / `load_graph`),
and plans are rendered for the decision policy as an indented dependency tree
(`serialize_subgraph` / `parse_subgraph_tree`).

Interface
---------
"""
import copy
import logging
import re
import shlex
import threading
from collections import Counter, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import (Callable, Dict, FrozenSet, Iterable, Iterator, List,
                    Mapping, NamedTuple, Optional, Sequence, Set, Tuple,
                    Protocol, TypeVar, Union)

import networkx as nx


# Types:
class GraphError(Exception): pass
class UnknownNodeError(GraphError): pass
class UnknownDependencyError(GraphError): pass
class DuplicateNodeError(GraphError): pass
class SpecError(GraphError): pass
class SerializationError(GraphError): pass


class GraphFileError(GraphError):
    """A malformed graph file; `lineno` is 1-based."""
    def __init__(self, lineno: int, msg: str) -> None:
        super().__init__("line {}: {}".format(lineno, msg))
        self.lineno = lineno


T = TypeVar('T')
logger = logging.getLogger(__name__)

FILE_MAGIC = 'TWNM v1'
DEFAULT_THRESHOLD = 0.8
_ID_RE = re.compile(r'^[^\s:;,=]+$')
_TOKEN_RE = re.compile(r'[a-z0-9]+')
STOPWORDS = frozenset("""a an and are as at be by for from in is it of on or
the to where which with that this its into""".split())


class EdgeKind(Enum):
    STRUCTURAL = 'S'
    BEHAVIORAL = 'B'


class InvocationEvent(NamedTuple):
    timestamp: float  # days
    peers: Tuple[str, ...]
    success: bool


@dataclass
class InvocationStats:
    n_succ: int = 0
    n_fail: int = 0
    recent_events: List[InvocationEvent] = field(default_factory=list)

    @property
    def success_ratio(self) -> float:
        """n_succ / (n_succ + n_fail), or 0 for a node never invoked."""
        total = self.n_succ + self.n_fail
        return self.n_succ / total if total else 0.0

    def record(self, event: InvocationEvent) -> None:
        self.recent_events.append(event)
        if (len(self.recent_events) > 1 and
                self.recent_events[-2].timestamp > event.timestamp):
            self.recent_events.sort(key=lambda e: e.timestamp)

    def window(self, now: float, tau_days: float) -> List[InvocationEvent]:
        """Events with ``now - tau_days <= timestamp <= now``."""
        return [e for e in self.recent_events
                if now - tau_days <= e.timestamp <= now]

    def expire(self, now: float, tau_days: float) -> None:
        self.recent_events = [e for e in self.recent_events
                              if e.timestamp >= now - tau_days]

    def clear_failures(self) -> None:
        self.recent_events = [e for e in self.recent_events if e.success]


class Member(NamedTuple):
    """One raw API parameter absorbed into a standardized ParamNode."""
    api_id: str
    original_name: str
    description: str


@dataclass
class ApiNode:
    id: str
    name: str
    description: str
    stats: InvocationStats = field(default_factory=InvocationStats)
    active: bool = True


@dataclass
class ParamNode:
    id: str
    canonical_name: str
    member_params: List[Member]
    stats: InvocationStats = field(default_factory=InvocationStats)

    @property
    def description(self) -> str:
        seen = []  # type: List[str]
        for m in self.member_params:
            if m.description not in seen:
                seen.append(m.description)
        return '; '.join(seen)

    def original_name(self, api_id: str) -> Optional[str]:
        for m in self.member_params:
            if m.api_id == api_id:
                return m.original_name
        return None


Node = Union[ApiNode, ParamNode]


@dataclass
class Edge:
    src: str
    dst: str
    kind: EdgeKind
    w_stat: float = 0.0
    w_search: float = 0.0
    n_succ: int = 0


class ParamSpec(NamedTuple):
    name: str
    description: str = ''


class ApiSpec(NamedTuple):
    id: str
    name: str
    description: str
    inputs: Sequence[ParamSpec] = ()
    outputs: Sequence[ParamSpec] = ()


@dataclass(frozen=True)
class SubgraphPlan:
    """
    A pruned dependency subgraph rooted at one or more target APIs.

    A plan produced for a single target has ``targets == (target_api,)``;
    merging plans for several targets keeps them all, in order. Every node
    has a directed path (over `edges`) to some target and `depth_of` holds
    that hop distance (minimum over targets).
    """
    targets: Tuple[str, ...]
    nodes: FrozenSet[str]
    edges: FrozenSet[Tuple[str, str]]
    score: float = 0.0
    depth_of: Mapping[str, int] = field(default_factory=dict)

    @property
    def target_api(self) -> str:
        return self.targets[0]

    def predecessors(self, node_id: str) -> List[str]:
        return sorted(u for (u, v) in self.edges if v == node_id)

    def without(self, node_ids: Iterable[str]) -> FrozenSet[str]:
        return self.nodes - frozenset(node_ids)


class SimilarityProvider(Protocol):
    def similarity(self, text_a: str, text_b: str) -> float:
        ...


def tokenize(text: str) -> List[str]:
    """Lowercase word tokens (underscores split words) minus stopwords."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


class LexicalSimilarity:
    """
    Deterministic similarity: Jaccard overlap of the token sets of the two
    texts. Embedding-based providers can be swapped in behind the same
    `similarity` method.
    """
    def similarity(self, text_a: str, text_b: str) -> float:
        a, b = set(tokenize(text_a)), set(tokenize(text_b))
        if not a or not b:
            return 0.0
        return len(a & b) / len(a | b)


class ToolGraph(object):
    """
    Directed weighted graph over `ApiNode` and `ParamNode` objects.

    Adjacency is held in a `networkx.DiGraph` whose edges carry the `Edge`
    record under the 'edge' attribute, so the reverse adjacency is always the
    exact transpose of the forward one.
    """
    def __init__(self) -> None:
        self.nodes = {}  # type: Dict[str, Node]
        self.version = 0
        self._adj = nx.DiGraph()
        self._lock = threading.RLock()
        self._depth = 0

    @contextmanager
    def batch(self) -> Iterator['ToolGraph']:
        """
        Group mutations into one batch. Nested batches collapse into the
        outermost one; `version` is bumped once when it exits.
        """
        with self._lock:
            self._depth += 1
            try:
                yield self
            finally:
                self._depth -= 1
                if self._depth == 0:
                    self.version += 1

    def copy(self) -> 'ToolGraph':
        """A deep snapshot (same version)."""
        g = ToolGraph()
        g.nodes = copy.deepcopy(self.nodes)
        g._adj = copy.deepcopy(self._adj)
        g.version = self.version
        return g

    # -- nodes --
    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise DuplicateNodeError("Duplicate node id: {}".format(node.id))
        with self.batch():
            self.nodes[node.id] = node
            self._adj.add_node(node.id)

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError("Unknown node: {}".format(node_id))

    def api(self, node_id: str) -> ApiNode:
        n = self.node(node_id)
        if not isinstance(n, ApiNode):
            raise UnknownNodeError("Not an API node: {}".format(node_id))
        return n

    def param(self, node_id: str) -> ParamNode:
        n = self.node(node_id)
        if not isinstance(n, ParamNode):
            raise UnknownNodeError("Not a parameter node: {}".format(node_id))
        return n

    def is_api(self, node_id: str) -> bool:
        return isinstance(self.nodes.get(node_id), ApiNode)

    def is_param(self, node_id: str) -> bool:
        return isinstance(self.nodes.get(node_id), ParamNode)

    def is_active(self, node_id: str) -> bool:
        n = self.nodes.get(node_id)
        return n is not None and getattr(n, 'active', True)

    def api_ids(self) -> List[str]:
        return sorted(k for k, n in self.nodes.items() if isinstance(n, ApiNode))

    def param_ids(self) -> List[str]:
        return sorted(k for k, n in self.nodes.items()
                      if isinstance(n, ParamNode))

    def param_by_name(self, canonical: str) -> Optional[ParamNode]:
        for n in self.nodes.values():
            if isinstance(n, ParamNode) and n.canonical_name == canonical:
                return n
        return None

    # -- edges --
    def add_edge(self, src: str, dst: str, kind: EdgeKind, w_stat=0.0,
                 w_search=0.0, n_succ=0) -> Edge:
        if src == dst:
            raise GraphError("Self-loop on {}".format(src))
        s, d = self.node(src), self.node(dst)
        mixed = isinstance(s, ApiNode) != isinstance(d, ApiNode)
        if kind is EdgeKind.STRUCTURAL and not mixed:
            raise GraphError("Structural edge {}->{} must join a parameter "
                             "and an API".format(src, dst))
        if kind is EdgeKind.BEHAVIORAL and mixed:
            raise GraphError("Behavioral edge {}->{} must join two nodes of "
                             "the same kind".format(src, dst))
        if self._adj.has_edge(src, dst):
            raise GraphError("Duplicate edge {}->{}".format(src, dst))
        _check_weight(w_stat)
        _check_weight(w_search)
        e = Edge(src, dst, kind, w_stat, w_search, n_succ)
        with self.batch():
            self._adj.add_edge(src, dst, edge=e)
        return e

    def has_edge(self, src: str, dst: str) -> bool:
        return self._adj.has_edge(src, dst)

    def edge(self, src: str, dst: str) -> Edge:
        try:
            return self._adj.edges[src, dst]['edge']
        except KeyError:
            raise UnknownDependencyError(
                "Unknown dependency {} -> {}".format(src, dst))

    def edges(self) -> List[Edge]:
        return [self._adj.edges[u, v]['edge']
                for u, v in sorted(self._adj.edges())]

    def successors(self, node_id: str) -> List[str]:
        self.node(node_id)
        return sorted(self._adj.successors(node_id))

    def predecessors(self, node_id: str) -> List[str]:
        self.node(node_id)
        return sorted(self._adj.predecessors(node_id))

    def in_degree(self, node_id: str) -> int:
        return self._adj.in_degree(node_id)

    def out_degree(self, node_id: str) -> int:
        return self._adj.out_degree(node_id)

    def inputs_of(self, api_id: str) -> List[str]:
        return [p for p in self.predecessors(api_id) if self.is_param(p)]

    def outputs_of(self, api_id: str) -> List[str]:
        return [p for p in self.successors(api_id) if self.is_param(p)]

    def producers_of(self, param_id: str) -> List[str]:
        return [a for a in self.predecessors(param_id) if self.is_api(a)]

    def consumers_of(self, param_id: str) -> List[str]:
        return [a for a in self.successors(param_id) if self.is_api(a)]

    def set_weights(self, src: str, dst: str, w_stat: Optional[float] = None,
                    w_search: Optional[float] = None) -> Edge:
        e = self.edge(src, dst)
        with self.batch():
            if w_stat is not None:
                _check_weight(w_stat)
                e.w_stat = w_stat
            if w_search is not None:
                _check_weight(w_search)
                e.w_search = w_search
        return e

    def backward_reachable(self, target: str,
                           admit: Callable[[str], bool] = lambda n: True,
                           max_depth: Optional[int] = None) -> Dict[str, int]:
        """Hop distance to `target` of every admitted node reaching it."""
        self.node(target)
        depth = {target: 0}
        queue = deque([target])
        while queue:
            v = queue.popleft()
            if max_depth is not None and depth[v] >= max_depth:
                continue
            for p in self.predecessors(v):
                if p not in depth and admit(p):
                    depth[p] = depth[v] + 1
                    queue.append(p)
        return depth

    def __len__(self) -> int:
        return len(self.nodes)


def _check_weight(w: float) -> None:
    if not 0.0 <= w <= 1.0:
        raise GraphError("Edge weight out of [0,1]: {}".format(w))


class GraphStore(object):
    """
    Publishes immutable `ToolGraph` snapshots. `apply` stages a mutation on a
    copy of the current snapshot and swaps it in when the batch completes;
    readers holding an older snapshot are never disturbed.
    """
    def __init__(self, graph: Optional[ToolGraph] = None) -> None:
        self._current = graph if graph is not None else ToolGraph()
        self._lock = threading.Lock()

    @property
    def current(self) -> ToolGraph:
        return self._current

    def apply(self, mutator: Callable[[ToolGraph], T]) -> T:
        with self._lock:
            staged = self._current.copy()
            with staged.batch():
                result = mutator(staged)
            self._current = staged
        logger.info("Published graph snapshot version {}".format(staged.version))
        return result

    def publish(self, graph: ToolGraph) -> None:
        with self._lock:
            self._current = graph


# -- construction --

def canonical_name(members: Sequence[Member]) -> str:
    """
    Name for a parameter cluster: the shared original name when there is one,
    otherwise the two most frequent content tokens over member names and
    descriptions (most frequent first, ties by first occurrence).
    """
    names = {m.original_name for m in members}
    if len(names) == 1:
        return members[0].original_name
    tokens = []  # type: List[str]
    for m in members:
        tokens += tokenize(m.original_name) + tokenize(m.description)
    counts = Counter(tokens)
    first = {}  # type: Dict[str, int]
    for i, t in enumerate(tokens):
        first.setdefault(t, i)
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return '_'.join(ranked[:2]) or members[0].original_name


class ParamClusterer(object):
    """
    Greedy agglomeration of raw parameters in input order. A parameter joins
    the cluster with the highest single-linkage similarity at or above
    `threshold` (ties go to the earliest cluster), but never a cluster that
    already holds a parameter of the same API.
    """
    def __init__(self, sim: SimilarityProvider,
                 threshold: float = DEFAULT_THRESHOLD) -> None:
        if not 0.0 <= threshold <= 1.0:
            raise SpecError("Clustering threshold out of [0,1]: {}"
                            .format(threshold))
        self.sim = sim
        self.threshold = threshold
        # each cluster: (existing node id or None, members)
        self.clusters = []  # type: List[Tuple[Optional[str], List[Member]]]

    @classmethod
    def from_graph(cls, g: ToolGraph, sim: SimilarityProvider,
                   threshold: float = DEFAULT_THRESHOLD) -> 'ParamClusterer':
        c = cls(sim, threshold)
        for pid in g.param_ids():
            c.clusters.append((pid, list(g.param(pid).member_params)))
        return c

    @staticmethod
    def text(m: Member) -> str:
        return "{} {}".format(m.original_name, m.description)

    def assign(self, member: Member) -> int:
        for i, (_, members) in enumerate(self.clusters):
            for m in members:
                if (m.api_id, m.original_name) == (member.api_id,
                                                    member.original_name):
                    return i
        best, best_score = -1, -1.0
        for i, (_, members) in enumerate(self.clusters):
            if any(m.api_id == member.api_id for m in members):
                continue
            score = max(self.sim.similarity(self.text(m), self.text(member))
                        for m in members)
            if score >= self.threshold and score > best_score:
                best, best_score = i, score
        if best < 0:
            self.clusters.append((None, [member]))
            return len(self.clusters) - 1
        self.clusters[best][1].append(member)
        return best


def _validate_spec(spec: ApiSpec) -> None:
    if not spec.id or not _ID_RE.match(spec.id):
        raise SpecError("Invalid API id: {!r}".format(spec.id))
    if not spec.description.strip():
        raise SpecError("API {} has an empty description".format(spec.id))
    for p in list(spec.inputs) + list(spec.outputs):
        if not p.name or not p.name.strip():
            raise SpecError("API {} has a parameter with an empty name"
                            .format(spec.id))
        if not _ID_RE.match(p.name):
            raise SpecError("API {} has an invalid parameter name {!r}"
                            .format(spec.id, p.name))


def _unique_param_id(g: ToolGraph, canonical: str) -> str:
    base = "p:{}".format(canonical)
    pid, i = base, 2
    while pid in g.nodes:
        pid = "{}_{}".format(base, i)
        i += 1
    return pid


def _integrate(g: ToolGraph, specs: Sequence[ApiSpec],
               clusterer: ParamClusterer) -> None:
    """Add `specs` to `g`, clustering their parameters with `clusterer`."""
    roles = []  # type: List[Tuple[str, int, bool]]
    for spec in specs:
        for p in spec.inputs:
            idx = clusterer.assign(Member(spec.id, p.name, p.description))
            roles.append((spec.id, idx, True))
        for p in spec.outputs:
            idx = clusterer.assign(Member(spec.id, p.name, p.description))
            roles.append((spec.id, idx, False))

    with g.batch():
        for spec in specs:
            g.add_node(ApiNode(spec.id, spec.name, spec.description))
        ids = []  # type: List[str]
        for i, (existing, members) in enumerate(clusterer.clusters):
            if existing is None:
                pid = _unique_param_id(g, canonical_name(members))
                g.add_node(ParamNode(pid, canonical_name(members), members))
                clusterer.clusters[i] = (pid, members)
                ids.append(pid)
            else:
                g.param(existing).member_params = members
                ids.append(existing)
        for api_id, idx, is_input in roles:
            pid = ids[idx]
            src, dst = (pid, api_id) if is_input else (api_id, pid)
            if not g.has_edge(src, dst):
                g.add_edge(src, dst, EdgeKind.STRUCTURAL)


def build_graph(api_specs: Sequence[ApiSpec], sim: SimilarityProvider,
                threshold: float = DEFAULT_THRESHOLD) -> ToolGraph:
    """
    Build a graph from API descriptions.

    Args:
        api_specs: the APIs, each with named and described parameters.
        sim: similarity provider used to cluster parameters.
        threshold: merge parameters whose similarity is at least this.

    Returns:
        A graph at version 1 with one ApiNode per spec, one ParamNode per
        parameter cluster, structural edges param->api for inputs and
        api->param for outputs, and all weights 0.
    """
    if not api_specs:
        raise SpecError("No API specs given")
    seen = set()  # type: Set[str]
    for spec in api_specs:
        _validate_spec(spec)
        if spec.id in seen:
            raise DuplicateNodeError("Duplicate API id: {}".format(spec.id))
        seen.add(spec.id)
    g = ToolGraph()
    _integrate(g, api_specs, ParamClusterer(sim, threshold))
    logger.info("Built graph: {} APIs, {} parameters, {} edges"
                .format(len(g.api_ids()), len(g.param_ids()), len(g.edges())))
    return g


def integrate_spec(g: ToolGraph, spec: ApiSpec, sim: SimilarityProvider,
                   threshold: float = DEFAULT_THRESHOLD) -> ToolGraph:
    """Add one API to an existing graph without touching existing weights."""
    _validate_spec(spec)
    if spec.id in g.nodes:
        raise DuplicateNodeError("Duplicate API id: {}".format(spec.id))
    _integrate(g, [spec], ParamClusterer.from_graph(g, sim, threshold))
    return g


# -- statistics --

def update_statistical_weight(g: ToolGraph, src: str, dst: str) -> float:
    """
    Set and return w_stat = N(src->dst) / N(dst), where N(dst) counts the
    successful invocations of `dst`. An edge with no evidence (N(dst) = 0)
    gets 0.
    """
    e = g.edge(src, dst)
    n_dst = g.node(dst).stats.n_succ
    w = 0.0 if n_dst == 0 else min(1.0, e.n_succ / n_dst)
    with g.batch():
        e.w_stat = w
    return w


def record_invocation(g: ToolGraph, api_id: str, success: bool,
                      timestamp: float, upstream: Iterable[str] = ()) -> None:
    """
    Record one invocation of `api_id` and refresh the statistical weights it
    affects.

    Args:
        api_id: the invoked API.
        success: whether the call succeeded.
        timestamp: invocation time in days.
        upstream: APIs whose outputs supplied this call. A behavioral edge
            upstream->api is created on the first successful co-invocation.
    """
    api = g.api(api_id)
    inputs = g.inputs_of(api_id)
    upstream = [u for u in upstream if u != api_id and g.is_api(u)]
    with g.batch():
        api.stats.record(InvocationEvent(timestamp,
                                         tuple(inputs) + tuple(upstream),
                                         success))
        if not success:
            api.stats.n_fail += 1
            return
        api.stats.n_succ += 1
        for p in inputs:
            g.edge(p, api_id).n_succ += 1
        for u in upstream:
            if not g.has_edge(u, api_id):
                g.add_edge(u, api_id, EdgeKind.BEHAVIORAL)
            g.edge(u, api_id).n_succ += 1
        outputs = g.outputs_of(api_id)
        for p in outputs:
            node = g.nodes[p]
            node.stats.n_succ += 1
            node.stats.record(InvocationEvent(timestamp, (api_id,), True))
            g.edge(api_id, p).n_succ += 1
        for dst in [api_id] + outputs:
            for src in g.predecessors(dst):
                update_statistical_weight(g, src, dst)


def expire_events(g: ToolGraph, now: float, tau_days: float) -> None:
    with g.batch():
        for n in g.nodes.values():
            n.stats.expire(now, tau_days)


# -- plans --

def induced_plan(g: ToolGraph, targets: Sequence[str], nodes: Iterable[str],
                 score: float = 0.0) -> SubgraphPlan:
    """
    The subgraph induced by `nodes`, restricted to nodes that reach one of
    `targets` inside it.
    """
    keep = set(nodes) | set(targets)
    depth = {}  # type: Dict[str, int]
    queue = deque()  # type: deque
    for t in targets:
        g.node(t)
        depth[t] = 0
        queue.append(t)
    while queue:
        v = queue.popleft()
        for p in g.predecessors(v):
            if p in keep and p not in depth:
                depth[p] = depth[v] + 1
                queue.append(p)
    kept = frozenset(depth)
    edges = frozenset((u, v) for v in kept for u in g.predecessors(v)
                      if u in kept)
    return SubgraphPlan(tuple(targets), kept, edges, score, depth)


def merge_plans(plans: Sequence[SubgraphPlan]) -> SubgraphPlan:
    """Union of plans; targets keep their order, duplicates dropped."""
    targets = []  # type: List[str]
    nodes = set()  # type: Set[str]
    edges = set()  # type: Set[Tuple[str, str]]
    depth = {}  # type: Dict[str, int]
    for p in plans:
        for t in p.targets:
            if t not in targets:
                targets.append(t)
        nodes |= p.nodes
        edges |= p.edges
        for n, d in p.depth_of.items():
            depth[n] = min(d, depth.get(n, d))
    score = sum(p.score for p in plans) / len(plans) if plans else 0.0
    return SubgraphPlan(tuple(targets), frozenset(nodes), frozenset(edges),
                        score, depth)


def _tag(g: ToolGraph, node_id: str) -> str:
    return '[API]' if g.is_api(node_id) else '[PARAM]'


def _label(g: ToolGraph, node_id: str) -> str:
    n = g.node(node_id)
    return n.name if isinstance(n, ApiNode) else n.canonical_name


def serialize_subgraph(g: ToolGraph, sub: SubgraphPlan) -> str:
    """
    Render `sub` as an indented dependency tree rooted at each target:
    children of an API are its required parameters (then behavioral
    predecessor APIs), children of a parameter are its producer APIs.

    A node already expanded elsewhere, including one closing a cycle, is
    written once more with an ``@ref`` marker and not expanded again.

    Raises:
        SerializationError: if a target is missing or some node has no path
            to any target.
    """
    for t in sub.targets:
        if t not in sub.nodes:
            raise SerializationError("Target {} not in subgraph".format(t))
    preds = {n: [] for n in sub.nodes}  # type: Dict[str, List[str]]
    for u, v in sub.edges:
        if u not in sub.nodes or v not in sub.nodes:
            raise SerializationError("Edge {}->{} leaves the subgraph"
                                     .format(u, v))
        preds[v].append(u)
    reach = set(sub.targets)
    queue = deque(sub.targets)
    while queue:
        v = queue.popleft()
        for u in preds[v]:
            if u not in reach:
                reach.add(u)
                queue.append(u)
    stray = sorted(sub.nodes - reach)
    if stray:
        raise SerializationError("Disconnected from targets: {}"
                                 .format(', '.join(stray)))

    lines = []  # type: List[str]
    expanded = set()  # type: Set[str]

    def visit(node: str, depth: int) -> None:
        indent = '  ' * depth
        if node in expanded:
            lines.append("{}{} {} @ref".format(indent, _tag(g, node), node))
            return
        expanded.add(node)
        lines.append("{}{} {} - {}".format(indent, _tag(g, node), node,
                                           _label(g, node)))
        children = sorted(preds[node], key=lambda n: (g.is_api(n), n))
        for c in children:
            visit(c, depth + 1)

    for t in sub.targets:
        visit(t, 0)
    return '\n'.join(lines) + '\n'


def parse_subgraph_tree(text: str) -> Tuple[Set[str], Set[Tuple[str, str]]]:
    """
    Inverse of `serialize_subgraph` on the node and edge sets: each line
    is a node, and each indented line is an edge into the line above it at
    the previous depth.
    """
    nodes = set()  # type: Set[str]
    edges = set()  # type: Set[Tuple[str, str]]
    stack = []  # type: List[str]
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        stripped = line.lstrip(' ')
        indent = len(line) - len(stripped)
        if indent % 2:
            raise SerializationError("line {}: odd indentation".format(lineno))
        depth = indent // 2
        if depth > len(stack):
            raise SerializationError("line {}: indentation jumps a level"
                                     .format(lineno))
        parts = stripped.split()
        if len(parts) < 2 or parts[0] not in ('[API]', '[PARAM]'):
            raise SerializationError("line {}: bad node line".format(lineno))
        node = parts[1]
        nodes.add(node)
        del stack[depth:]
        if depth:
            edges.add((node, stack[-1]))
        stack.append(node)
    return nodes, edges


# -- file format --

def _fmt(x: float) -> str:
    # shortest text that parses back to the same float
    return repr(float(x))


def _q(s: str) -> str:
    return shlex.quote(s)


def save_graph(g: ToolGraph, path: str) -> None:
    """Write `g` in the line-oriented text format (see README)."""
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dump_graph(g))


def dump_graph(g: ToolGraph) -> str:
    out = ["{} version={}".format(FILE_MAGIC, g.version)]
    for nid in g.api_ids():
        n = g.api(nid)
        out.append("A {} {} succ={} fail={} active={} {}".format(
            _q(n.id), _q(n.name), n.stats.n_succ, n.stats.n_fail,
            int(n.active), _q(n.description)))
    for nid in g.param_ids():
        p = g.param(nid)
        members = ';'.join("{}:{}".format(m.api_id, m.original_name)
                           for m in p.member_params)
        descs = ' '.join(_q(m.description) for m in p.member_params)
        out.append("P {} {} members={} succ={} fail={} {}".format(
            _q(p.id), _q(p.canonical_name), _q(members),
            p.stats.n_succ, p.stats.n_fail, descs).rstrip())
    for e in g.edges():
        out.append("E {} {} kind={} wstat={} wsearch={} n={}".format(
            _q(e.src), _q(e.dst), e.kind.value, _fmt(e.w_stat),
            _fmt(e.w_search), e.n_succ))
    for nid in sorted(g.nodes):
        for ev in g.nodes[nid].stats.recent_events:
            out.append("R {} {} {} {}".format(
                _q(nid), _fmt(ev.timestamp), int(ev.success),
                _q(','.join(ev.peers) or '-')))
    return '\n'.join(out) + '\n'


def load_graph(path: str) -> ToolGraph:
    with open(path, encoding='utf-8') as f:
        return parse_graph(f.read())


def _kv(tokens: Sequence[str], lineno: int) -> Dict[str, str]:
    kv = {}
    for t in tokens:
        if '=' not in t:
            raise GraphFileError(lineno, "expected key=value, got {!r}"
                                 .format(t))
        k, v = t.split('=', 1)
        kv[k] = v
    return kv


def parse_graph(text: str) -> ToolGraph:
    """
    Parse the text format written by `dump_graph`.

    Raises:
        GraphFileError: on any malformed line, with its line number.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith(FILE_MAGIC + ' version='):
        raise GraphFileError(1, "missing '{} version=' header"
                             .format(FILE_MAGIC))
    try:
        version = int(lines[0].split('version=', 1)[1])
    except ValueError:
        raise GraphFileError(1, "bad version")

    g = ToolGraph()
    with g.batch():
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            try:
                tok = shlex.split(line)
                _parse_line(g, tok, lineno)
            except GraphFileError:
                raise
            except (GraphError, ValueError, IndexError, KeyError) as e:
                raise GraphFileError(lineno, str(e))
    g.version = version
    return g


def _parse_line(g: ToolGraph, tok: List[str], lineno: int) -> None:
    kind = tok[0]
    if kind == 'A':
        kv = _kv(tok[3:6], lineno)
        if len(tok) != 7:
            raise GraphFileError(lineno, "API line needs 7 fields")
        if tok[1] in g.nodes:
            raise GraphFileError(lineno, "duplicate node id {}".format(tok[1]))
        stats = InvocationStats(int(kv['succ']), int(kv['fail']))
        g.add_node(ApiNode(tok[1], tok[2], tok[6], stats,
                           kv['active'] == '1'))
    elif kind == 'P':
        kv = _kv(tok[3:6], lineno)
        if tok[1] in g.nodes:
            raise GraphFileError(lineno, "duplicate node id {}".format(tok[1]))
        pairs = [m.split(':', 1) for m in kv['members'].split(';')]
        descs = tok[6:]
        if len(descs) != len(pairs):
            raise GraphFileError(lineno, "member/description count mismatch")
        members = [Member(a, o, d) for (a, o), d in zip(pairs, descs)]
        stats = InvocationStats(int(kv['succ']), int(kv['fail']))
        g.add_node(ParamNode(tok[1], tok[2], members, stats))
    elif kind == 'E':
        kv = _kv(tok[3:], lineno)
        g.add_edge(tok[1], tok[2], EdgeKind(kv['kind']), float(kv['wstat']),
                   float(kv['wsearch']), int(kv.get('n', '0')))
    elif kind == 'R':
        if len(tok) != 5:
            raise GraphFileError(lineno, "event line needs 5 fields")
        peers = () if tok[4] == '-' else tuple(tok[4].split(','))
        g.node(tok[1]).stats.record(
            InvocationEvent(float(tok[2]), peers, tok[3] == '1'))
    else:
        raise GraphFileError(lineno, "unknown record type {!r}".format(kind))
