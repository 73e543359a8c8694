"""
The decision loop of a tool-using agent.

At each step a `DecisionPolicy` looks at the last three (observation,
action) pairs, the current observation and the current toolchain plan, and
picks one of four actions:

- **DirectResponse**: answer (part of) the query.
- **IntentClarification**: ask the user for missing parameter values.
- **ToolchainRetrieval**: ask for a plan; the top three matching APIs are
  searched in the tool graph (`toolsearch`) and merged into one plan.
- **ToolExecution**: call one API of the plan with bound parameters.

When a call fails, or no API of the plan can run, the loop repairs the plan
without consulting the policy (`recombine`): first by substituting an API
with the same inputs and outputs, then by rerouting through another upstream
producer, then by retrieving a fresh plan that avoids the failed API.

Queries
-------

The bundled `RulePolicy` reads a small query language: sub-intents are
separated by ``;``, ``name=value`` supplies a parameter value and ``?name``
asks for an output parameter::

    what is a healthy resting heart rate; record my heart rate user_id=u1 ?record_status

Parameter names are the graph's canonical parameter names. Sub-intents
without ``?`` outputs are answered from the policy's knowledge table.

Usage
-----

>>> rec = run_episode(query, g, RulePolicy(knowledge), executor,
...                   AgentConfig(max_steps=8))
>>> rec.completed, rec.answer, rec.llm_calls

Interface
---------
"""
import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (Any, Callable, Deque, Dict, FrozenSet, Iterable, List,
                    Mapping, NamedTuple, Optional, Protocol, Sequence, Set,
                    Tuple, Union)

import networkx as nx
import numpy as np
import requests
import requests.utils
from requests.exceptions import RequestException

from projection import FeasibleSet, InfeasibleError, PolicyDistribution, project
from toolgraph import (LexicalSimilarity, SimilarityProvider, SubgraphPlan,
                       ToolGraph, induced_plan, merge_plans,
                       record_invocation, serialize_subgraph, tokenize)
from toolsearch import (SEARCH_MODES, ConfigError, SearchConfig,
                        alpha_beta_search, heuristic_search, unpruned_search)


# Types:
class ProtocolError(Exception): pass
class EmptyPlanError(Exception): pass


class DeadlockError(Exception):
    """No API can run; `api_id` is the blocked API when there is one."""
    def __init__(self, msg: str, api_id: Optional[str] = None) -> None:
        super().__init__(msg)
        self.api_id = api_id


class Exhausted(object):
    """Returned by `recombine` when no repair strategy applies."""
    def __repr__(self) -> str:
        return 'EXHAUSTED'

    def __bool__(self) -> bool:
        return False


EXHAUSTED = Exhausted()

Bindings = Dict[str, str]
Executor = Callable[[str, Dict[str, str]], Dict[str, Any]]
Responder = Callable[[str, Sequence[str]], str]

logger = logging.getLogger(__name__)

WINDOW = 3
UNKNOWN_REPLY = "I don't know"


class ObservationKind(Enum):
    USER_QUERY = 'user_query'
    TOOL_RESULT = 'tool_result'
    TOOL_FAILURE = 'tool_failure'
    CLARIFICATION_REPLY = 'clarification_reply'


class ActionKind(Enum):
    DIRECT_RESPONSE = 'direct_response'
    INTENT_CLARIFICATION = 'clarify'
    TOOLCHAIN_RETRIEVAL = 'retrieve'
    TOOL_EXECUTION = 'call_api'


@dataclass(frozen=True)
class EpisodeView:
    """What the policy may know about the episode so far."""
    query: str
    bindings: Tuple[Tuple[str, str], ...] = ()
    answered: Tuple[str, ...] = ()
    failed: FrozenSet[str] = frozenset()
    executed: Tuple[str, ...] = ()
    asked: FrozenSet[str] = frozenset()
    no_tools: bool = False

    def binding_map(self) -> Bindings:
        return dict(self.bindings)


@dataclass(frozen=True)
class Observation:
    kind: ObservationKind
    payload: str
    step_index: int
    view: EpisodeView
    node_id: Optional[str] = None


@dataclass(frozen=True)
class DirectResponse:
    answer: str
    final: bool = True


@dataclass(frozen=True)
class Clarification:
    question: str
    params: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RetrievalRequest:
    """
    A toolchain request. Policies leave `top3_targets` empty; the loop
    resolves it to exactly three slots (unused slots are None) by ranking.
    """
    top3_targets: Tuple[Optional[str], ...] = ()
    known_inputs: FrozenSet[str] = frozenset()
    desired_outputs: FrozenSet[str] = frozenset()
    description: str = ''

    def __post_init__(self) -> None:
        if self.known_inputs & self.desired_outputs:
            raise ProtocolError("Parameters both known and desired: {}".format(
                ', '.join(sorted(self.known_inputs & self.desired_outputs))))
        if self.top3_targets:
            if len(self.top3_targets) != 3:
                raise ProtocolError("top3_targets needs exactly 3 slots")
            if not any(self.top3_targets):
                raise ProtocolError("No target in top3_targets")

    @property
    def resolved(self) -> bool:
        return bool(self.top3_targets)

    def text(self) -> str:
        return ' '.join([self.description] + sorted(self.desired_outputs))


@dataclass(frozen=True)
class ToolCall:
    """`api_id` None means: the next executable API of the plan."""
    api_id: Optional[str]
    params: Tuple[Tuple[str, str], ...] = ()


_PAYLOADS = {
    ActionKind.DIRECT_RESPONSE: DirectResponse,
    ActionKind.INTENT_CLARIFICATION: Clarification,
    ActionKind.TOOLCHAIN_RETRIEVAL: RetrievalRequest,
    ActionKind.TOOL_EXECUTION: ToolCall,
}


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    payload: Union[DirectResponse, Clarification, RetrievalRequest, ToolCall]

    def __post_init__(self) -> None:
        if not isinstance(self.payload, _PAYLOADS[self.kind]):
            raise ProtocolError("{} action with {} payload".format(
                self.kind.value, type(self.payload).__name__))

    @property
    def api_id(self) -> Optional[str]:
        if isinstance(self.payload, ToolCall):
            return self.payload.api_id
        return None


class ApiIO(NamedTuple):
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]


@dataclass(frozen=True)
class DecisionContext:
    history: Tuple[Tuple[Observation, Action], ...]
    current: Observation
    subgraph: Optional[SubgraphPlan] = None
    tree: str = ''
    schema: Mapping[str, ApiIO] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.history) > WINDOW:
            raise ValueError("History holds at most {} pairs".format(WINDOW))


@dataclass
class AgentConfig:
    max_steps: int = 10
    search_mode: str = 'heur'
    recombination: bool = True
    record_statistics: bool = True
    merge_retrieve_exec: bool = False
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.search_mode not in SEARCH_MODES:
            raise ConfigError("search_mode must be one of {}".format(
                ', '.join(SEARCH_MODES)))


@dataclass
class EpisodeRecord:
    query: str
    trace: List[Action] = field(default_factory=list)
    observations: List[Observation] = field(default_factory=list)
    llm_calls: int = 0
    completed: bool = False
    answer: Optional[str] = None
    failed_apis: List[str] = field(default_factory=list)
    executed_apis: List[str] = field(default_factory=list)
    repairs: List[str] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def steps(self) -> int:
        return self.llm_calls


class DecisionPolicy(Protocol):
    def decide(self, ctx: DecisionContext) -> Action:
        ...


# -- query language --

class SubIntent(NamedTuple):
    text: str
    inputs: Tuple[Tuple[str, str], ...]
    outputs: Tuple[str, ...]


_QUERY_TOKEN = re.compile(r'\?(\w+)|(\w+)=("[^"]*"|\S+)|(\S+)')


def normalize_text(text: str) -> str:
    """Lowercase, collapse whitespace, strip trailing punctuation."""
    return re.sub(r'\s+', ' ', text.lower()).strip().rstrip('.!?,;:').strip()


def parse_query(query: str) -> List[SubIntent]:
    subs = []
    for part in query.split(';'):
        if not part.strip():
            continue
        words, inputs, outputs = [], [], []
        for m in _QUERY_TOKEN.finditer(part):
            if m.group(1):
                outputs.append(m.group(1))
            elif m.group(2):
                inputs.append((m.group(2), m.group(3).strip('"')))
            else:
                words.append(m.group(4))
        subs.append(SubIntent(' '.join(words), tuple(inputs), tuple(outputs)))
    return subs


def format_outputs(names: Sequence[str], bindings: Mapping[str, str]) -> str:
    return ', '.join("{}={}".format(n, bindings[n]) for n in names)


def recall_description(sub: SubIntent, known: Iterable[str]) -> str:
    """
    ``Name(description: ..., input: a:type/desc, ...; output: c:type/desc)``
    """
    name = '_'.join(tokenize(sub.text)[:3]) or 'tool'
    ins = ', '.join("{}:string/provided".format(n) for n in sorted(known))
    outs = ', '.join("{}:string/requested".format(n) for n in sub.outputs)
    return "{}(description: {}, input: {}; output: {})".format(
        name, sub.text, ins, outs)


_RECALL = re.compile(r'^\s*([^\s(]+)\((.*)\)\s*$', re.S)
_RECALL_BODY = re.compile(
    r'^\s*description:\s*(.*?),\s*input:\s*(.*?);\s*output:\s*(.*?)\s*$', re.S)


def _recall_names(items: str) -> List[str]:
    return [i.split(':', 1)[0].strip() for i in items.split(',')
            if i.strip()]


def parse_recall_description(text: str) -> RetrievalRequest:
    """
    Parse a recall description into an (unresolved) `RetrievalRequest`.

    Raises:
        ProtocolError: if `text` is not in the recall format.
    """
    m = _RECALL.match(text or '')
    body = _RECALL_BODY.match(m.group(2)) if m else None
    if not m or not body:
        raise ProtocolError("Malformed recall description: {!r}".format(text))
    name, desc = m.group(1), body.group(1)
    known = frozenset(_recall_names(body.group(2)))
    desired = frozenset(_recall_names(body.group(3)))
    return RetrievalRequest((), known - desired, desired,
                            "{} {}".format(name.replace('_', ' '), desc))


def parse_clarification_reply(text: str) -> Bindings:
    """``name:value`` pairs separated by commas; anything else is ignored."""
    values = {}
    for part in text.split(','):
        if ':' in part:
            k, v = part.split(':', 1)
            if k.strip() and v.strip():
                values[k.strip()] = v.strip()
    return values


# -- plan reasoning --

class Chain(NamedTuple):
    order: Tuple[str, ...]  # APIs still to run, dependencies first
    missing: Tuple[str, ...]  # unbound inputs nothing in the plan produces
    unproducible: Tuple[str, ...]  # desired outputs nothing produces


def plan_schema(g: ToolGraph, plan: Optional[SubgraphPlan]) -> Dict[str, ApiIO]:
    """Canonical input and output names of every API in `plan`."""
    if plan is None:
        return {}
    name = lambda p: g.param(p).canonical_name
    return {a: ApiIO(tuple(name(p) for p in g.inputs_of(a)),
                     tuple(name(p) for p in g.outputs_of(a)))
            for a in sorted(plan.nodes) if g.is_api(a)}


def resolve_chain(schema: Mapping[str, ApiIO], bound: Iterable[str],
                  desired: Sequence[str], targets: Sequence[str] = (),
                  failed: Iterable[str] = ()) -> Chain:
    """
    The APIs needed to produce `desired` from `bound` values. Each unbound
    name takes one producer: a plan target if possible, otherwise the
    smallest id. Execution order is the lexicographic topological order of
    producer-consumer dependencies.
    """
    bound = set(bound)
    failed = set(failed)

    def producers(name: str) -> List[str]:
        return sorted((a for a, io in schema.items()
                       if name in io.outputs and a not in failed),
                      key=lambda a: (a not in targets, a))

    required = []  # type: List[str]
    missing, unproducible = [], []
    seen = set()  # type: Set[str]
    queue = deque((n, True) for n in desired if n not in bound)
    while queue:
        name, is_desired = queue.popleft()
        if name in seen or name in bound:
            continue
        seen.add(name)
        prods = producers(name)
        if not prods:
            (unproducible if is_desired else missing).append(name)
            continue
        a = prods[0]
        if a not in required:
            required.append(a)
            queue.extend((n, False) for n in schema[a].inputs
                         if n not in bound)

    deps = nx.DiGraph()
    deps.add_nodes_from(required)
    for a in required:
        for b in required:
            unbound_in = {n for n in schema[b].inputs if n not in bound}
            if a != b and unbound_in & set(schema[a].outputs):
                deps.add_edge(a, b)
    try:
        order = list(nx.lexicographical_topological_sort(deps))
    except nx.NetworkXUnfeasible:
        order = sorted(required)
    return Chain(tuple(order), tuple(missing), tuple(unproducible))


def next_executable(chain: Chain, schema: Mapping[str, ApiIO],
                    bound: Iterable[str]) -> Optional[str]:
    bound = set(bound)
    for a in chain.order:
        if all(n in bound for n in schema[a].inputs):
            return a
    return None


def is_resolvable(plan: SubgraphPlan, g: ToolGraph, bindings: Iterable[str],
                  desired: Optional[Sequence[str]] = None) -> bool:
    """
    Whether every input the plan needs is bound or produced inside it. With
    `desired`, only the APIs needed for those outputs are checked, and the
    outputs themselves must be producible.
    """
    schema = plan_schema(g, plan)
    bound = set(bindings)
    if desired:
        chain = resolve_chain(schema, bound, desired, plan.targets)
        return not chain.missing and not chain.unproducible
    produced = {n for io in schema.values() for n in io.outputs}
    return all(n in bound or n in produced
               for io in schema.values() for n in io.inputs)


def complete_plan(plan: SubgraphPlan, g: ToolGraph, known: Iterable[str],
                  depth: int, exclude: Iterable[str] = ()) -> SubgraphPlan:
    """
    Give every plan API all of its input parameters, and every input that is
    neither known nor produced inside the plan its best admissible producer
    (highest search weight, then smallest id), recursively up to `depth`
    producer levels.
    """
    known = set(known)
    banned = set(exclude)
    nodes = set(plan.nodes)
    frontier = deque((a, 0) for a in sorted(plan.nodes) if g.is_api(a))
    while frontier:
        a, d = frontier.popleft()
        for p in g.inputs_of(a):
            nodes.add(p)
            if g.param(p).canonical_name in known:
                continue
            if any(q in nodes for q in g.producers_of(p)):
                continue
            if d >= depth:
                continue
            prods = sorted((q for q in g.producers_of(p)
                            if q not in banned and g.is_active(q)),
                           key=lambda q: (-g.edge(q, p).w_search, q))
            if prods:
                nodes.add(prods[0])
                frontier.append((prods[0], d + 1))
    return induced_plan(g, plan.targets, nodes, plan.score)


def rank_targets(req: RetrievalRequest, g: ToolGraph,
                 ranker: SimilarityProvider,
                 exclude: Iterable[str] = ()) -> Tuple[Optional[str], ...]:
    """
    The three active APIs most similar to the request text (name,
    description and output names are compared).

    Raises:
        EmptyPlanError: if no API scores above 0.
    """
    banned = set(exclude)
    scored = []
    for a in g.api_ids():
        if a in banned or not g.is_active(a):
            continue
        node = g.api(a)
        outs = ' '.join(g.param(p).canonical_name
                        for p in g.outputs_of(a))
        s = ranker.similarity(req.text(), "{} {} {}".format(
            node.name, node.description, outs))
        if s > 0:
            scored.append((-s, a))
    if not scored:
        raise EmptyPlanError("No API matches {!r}".format(req.text()))
    top = [a for _, a in sorted(scored)[:3]]  # type: List[Optional[str]]
    return tuple(top + [None] * (3 - len(top)))


def retrieve_toolchain(req: RetrievalRequest, g: ToolGraph,
                       ranker: Optional[SimilarityProvider] = None,
                       cfg: Optional[AgentConfig] = None,
                       exclude: Iterable[str] = ()
                       ) -> Tuple[SubgraphPlan, str]:
    """
    Rank APIs against the request, search a plan from each of the top three,
    merge and complete it.

    Returns:
        The plan and its tree text.

    Raises:
        EmptyPlanError: if nothing matches the request.
    """
    cfg = cfg or AgentConfig()
    ranker = ranker or LexicalSimilarity()
    exclude = set(exclude)
    targets = (req.top3_targets if req.resolved
               else rank_targets(req, g, ranker, exclude))
    real = [t for t in targets if t]
    if cfg.search_mode == 'ab':
        plan = merge_plans([alpha_beta_search(g, t, None, cfg.search, exclude)
                            for t in real])
    elif cfg.search_mode == 'unpruned':
        plan = unpruned_search(g, real, cfg.search, exclude)
    else:
        plan = heuristic_search(g, real, cfg.search, exclude)
    plan = complete_plan(plan, g, req.known_inputs, cfg.search.d_max_h,
                         exclude)
    logger.info("Retrieved plan for {}: {} nodes".format(
        ', '.join(real), len(plan.nodes)))
    return plan, serialize_subgraph(g, plan)


# -- execution --

def invoke(g: ToolGraph, api_id: str, bindings: Mapping[str, str],
           executor: Executor, now: float = 0.0,
           provenance: Optional[Mapping[str, str]] = None,
           record: bool = True) -> Tuple[bool, Bindings, str]:
    """
    Call one API with its bound inputs and, if `record`, record the outcome
    in the graph.

    Returns:
        (success, output bindings by canonical name, error message)

    Raises:
        DeadlockError: if some input of `api_id` is unbound.
        ProtocolError: if the executor's response is malformed.
    """
    provenance = provenance or {}
    args, missing, upstream = {}, [], set()
    for pid in g.inputs_of(api_id):
        p = g.param(pid)
        name = p.canonical_name
        if name not in bindings:
            missing.append(name)
            continue
        args[p.original_name(api_id) or name] = bindings[name]
        if name in provenance:
            upstream.add(provenance[name])
    if missing:
        raise DeadlockError("{} has unbound inputs: {}".format(
            api_id, ', '.join(missing)), api_id)
    resp = executor(api_id, args)
    if not isinstance(resp, dict) or resp.get('type') not in (
            'success', 'mock', 'error'):
        raise ProtocolError("Malformed executor response: {!r}".format(resp))
    success = resp['type'] != 'error'
    if record:
        record_invocation(g, api_id, success, now, sorted(upstream))
    if not success:
        logger.info("{} failed: {}".format(api_id, resp.get('data')))
        return False, {}, str(resp.get('data'))
    data = resp.get('data') or {}
    outputs = {}
    for pid in g.outputs_of(api_id):
        p = g.param(pid)
        orig = p.original_name(api_id)
        if orig in data:
            outputs[p.canonical_name] = str(data[orig])
    return True, outputs, ''


def execute_step(plan: Optional[SubgraphPlan], bindings: Mapping[str, str],
                 executor: Executor, g: ToolGraph,
                 desired: Optional[Sequence[str]] = None, now: float = 0.0,
                 failed: Iterable[str] = (), step_index: int = 0,
                 provenance: Optional[Dict[str, str]] = None,
                 api_id: Optional[str] = None,
                 record: bool = True
                 ) -> Tuple[Observation, Bindings]:
    """
    Run `api_id`, or else the next API of `plan` whose inputs are all bound
    in dependency order, and fold its outputs into the bindings.

    Args:
        desired: output names the plan serves; defaults to every output of
            the plan targets.
        provenance: canonical name -> API that produced it; a successful
            call records itself as the producer of its outputs.
        api_id: the API to call; `plan` may be None when it is given.
        record: whether the call is recorded in the graph statistics.

    Returns:
        A ToolResult or ToolFailure observation and the updated bindings.

    Raises:
        DeadlockError: if no API of the plan can run, or `api_id` has unbound
            inputs. Its `api_id` names the blocked API.
    """
    if api_id is None:
        if plan is None:
            raise DeadlockError("No plan to execute")
        schema = plan_schema(g, plan)
        if desired is None:
            desired = [n for t in plan.targets for n in schema[t].outputs]
        chain = resolve_chain(schema, bindings, desired, plan.targets, failed)
        api_id = next_executable(chain, schema, bindings)
        if api_id is None:
            raise DeadlockError("No executable API in plan for {}".format(
                ', '.join(plan.targets)),
                chain.order[0] if chain.order else None)
    ok, outputs, msg = invoke(g, api_id, bindings, executor, now, provenance,
                              record)
    if ok and provenance is not None:
        provenance.update({n: api_id for n in outputs})
    new = dict(bindings)
    new.update(outputs)
    view = EpisodeView('', tuple(sorted(new.items())))
    if ok:
        return Observation(ObservationKind.TOOL_RESULT,
                           "{}: {}".format(api_id, format_outputs(
                               sorted(outputs), outputs)),
                           step_index, view, api_id), new
    return Observation(ObservationKind.TOOL_FAILURE,
                       "{} failed: {}".format(api_id, msg), step_index, view,
                       api_id), new


# -- recombination --

def _search(g: ToolGraph, target: str, cfg: AgentConfig,
            exclude: Set[str]) -> SubgraphPlan:
    if cfg.search_mode == 'ab':
        return alpha_beta_search(g, target, None, cfg.search, exclude)
    if cfg.search_mode == 'unpruned':
        return unpruned_search(g, [target], cfg.search, exclude)
    return heuristic_search(g, [target], cfg.search, exclude)


def _substitute(plan, failed_api, g, cfg, known, needed, banned):
    bound_in = {p for p in g.inputs_of(failed_api)
                if g.nodes[p].canonical_name in known}
    best = None
    for a in g.api_ids():
        if a in banned or not g.is_active(a):
            continue
        ins, outs = set(g.inputs_of(a)), set(g.outputs_of(a))
        if not ins <= bound_in or not needed <= outs:
            continue
        ws = ([g.edge(p, a).w_search for p in ins] +
              [g.edge(a, p).w_search for p in needed])
        key = (-(sum(ws) / len(ws) if ws else 0.0), a)
        if best is None or key < best[0]:
            best = (key, a, ins)
    if best is None:
        return None
    _, sub, ins = best
    targets = []
    for t in plan.targets:
        t = sub if t == failed_api else t
        if t not in targets:
            targets.append(t)
    nodes = (set(plan.nodes) - {failed_api}) | {sub} | ins | needed
    return induced_plan(g, targets, nodes, plan.score)


def _reroute(plan, failed_api, g, cfg, known, banned, desired):
    if failed_api in plan.targets:
        return None
    consumed = [p for p in g.outputs_of(failed_api) if p in plan.nodes and
                any(c in plan.nodes for c in g.consumers_of(p))]
    if not consumed:
        return None
    nodes = set(plan.nodes) - {failed_api}
    for p in consumed:
        prods = sorted((q for q in g.producers_of(p)
                        if q not in banned and g.is_active(q)),
                       key=lambda q: (-g.edge(q, p).w_search, q))
        if not prods:
            return None
        nodes |= _search(g, prods[0], cfg, banned).nodes | {p}
    rerouted = induced_plan(g, plan.targets, nodes, plan.score)
    rerouted = complete_plan(rerouted, g, known, cfg.search.d_max_h, banned)
    if failed_api in rerouted.nodes or not is_resolvable(rerouted, g, known,
                                                          desired):
        return None
    return rerouted


def _switch(g, cfg, known, banned, desired, request, ranker):
    if request is None:
        return None
    req = RetrievalRequest((), request.known_inputs, request.desired_outputs,
                           request.description)
    try:
        switched, _ = retrieve_toolchain(req, g, ranker, cfg, banned)
    except EmptyPlanError:
        return None
    if not is_resolvable(switched, g, known, desired or None):
        return None
    return switched


def recombine(plan: SubgraphPlan, failed_api: str, g: ToolGraph,
              cfg: Optional[AgentConfig] = None,
              bindings: Optional[Mapping[str, str]] = None,
              desired: Sequence[str] = (), failed: Iterable[str] = (),
              request: Optional[RetrievalRequest] = None,
              ranker: Optional[SimilarityProvider] = None,
              report: Optional[List[str]] = None
              ) -> Union[SubgraphPlan, Exhausted]:
    """
    Repair `plan` after `failed_api` failed, trying in order:

    1. substitution: an active API whose inputs are among the failed API's
       bound inputs and whose outputs cover what the plan needs from it;
    2. rerouting: another producer of the intermediate outputs the failed
       API fed downstream, with its own upstream path;
    3. switching: a fresh retrieval for `request` that excludes every failed
       API.

    Edge weights are not touched.

    Args:
        desired: output names the episode still needs.
        failed: APIs that already failed in this episode.
        report: if given, receives the name of the strategy that worked.

    Returns:
        A plan without `failed_api`, or `EXHAUSTED`.
    """
    if failed_api not in plan.nodes:
        raise ValueError("{} is not in the plan".format(failed_api))
    cfg = cfg or AgentConfig()
    ranker = ranker or LexicalSimilarity()
    known = set(bindings or {})
    banned = set(failed) | {failed_api}
    wanted = set(desired)
    needed = {p for p in g.outputs_of(failed_api)
              if p in plan.nodes or g.nodes[p].canonical_name in wanted}
    if not needed:
        needed = set(g.outputs_of(failed_api))
    attempts = (
        ('substitution',
         lambda: _substitute(plan, failed_api, g, cfg, known, needed, banned)),
        ('rerouting',
         lambda: _reroute(plan, failed_api, g, cfg, known, banned, desired)),
        ('switching',
         lambda: _switch(g, cfg, known, banned, desired, request, ranker)),
    )
    for name, attempt in attempts:
        repaired = attempt()
        if repaired is not None and failed_api not in repaired.nodes:
            logger.info("Recovered from {} failure by {}".format(failed_api,
                                                                 name))
            if report is not None:
                report.append(name)
            return repaired
    logger.info("No recombination for {}".format(failed_api))
    return EXHAUSTED


# -- policies --

def decide(ctx: DecisionContext, policy: DecisionPolicy) -> Action:
    """
    Ask `policy` for the next action.

    Raises:
        ProtocolError: if the policy returns something other than an Action.
    """
    action = policy.decide(ctx)
    if not isinstance(action, Action):
        raise ProtocolError("Policy returned {!r}".format(action))
    return action


class RulePolicy(object):
    """
    Deterministic policy: knowledge-table lookup, then retrieval, then
    parameter completion, then execution of the next ready API.

    Args:
        knowledge: question -> answer table for sub-intents answerable
            without tools; questions are matched after `normalize_text`.
        clarify: ask the user for missing inputs; without it the policy
            reports them as missing and stops.
    """
    def __init__(self, knowledge: Optional[Mapping[str, str]] = None,
                 clarify: bool = True) -> None:
        self.knowledge = {normalize_text(k): v
                          for k, v in (knowledge or {}).items()}
        self.clarify = clarify

    def decide(self, ctx: DecisionContext) -> Action:
        return self.candidates(ctx)[0]

    def candidates(self, ctx: DecisionContext) -> List[Action]:
        """The preferred action first, followed by fallbacks."""
        view = ctx.current.view
        subs = parse_query(view.query)
        i = len(view.answered)
        if i >= len(subs):
            return [_respond('', True)]
        sub, last = subs[i], i == len(subs) - 1
        bound = view.binding_map()
        giveup = _respond("Unable to complete: {}".format(sub.text), True)

        known = self.knowledge.get(normalize_text(sub.text))
        if known is not None:
            return [_respond(known, last)]
        if not sub.outputs:
            return [giveup]
        if all(o in bound for o in sub.outputs):
            return [_respond(format_outputs(sub.outputs, bound), last)]
        if view.no_tools:
            return [giveup]

        known_in = frozenset(bound) - frozenset(sub.outputs)
        retrieve = Action(ActionKind.TOOLCHAIN_RETRIEVAL,
                          parse_recall_description(
                              recall_description(sub, known_in)))
        plan = ctx.subgraph
        if plan is None or plan.nodes & view.failed:
            return [retrieve, giveup]
        just_retrieved = bool(ctx.history) and (
            ctx.history[-1][1].kind is ActionKind.TOOLCHAIN_RETRIEVAL)
        chain = resolve_chain(ctx.schema, bound, sub.outputs, plan.targets,
                              view.failed)
        if chain.unproducible:
            return [giveup] if just_retrieved else [retrieve, giveup]
        if chain.missing:
            ask = tuple(n for n in chain.missing if n not in view.asked)
            if not ask or not self.clarify:
                return [_respond("Missing information: {}".format(
                    ', '.join(chain.missing)), True)]
            return [Action(ActionKind.INTENT_CLARIFICATION, Clarification(
                "Please provide: {}".format(', '.join(ask)), ask)), giveup]
        api_id = next_executable(chain, ctx.schema, bound)
        if api_id is None:
            return [giveup] if just_retrieved else [retrieve, giveup]
        params = tuple((n, bound[n]) for n in ctx.schema[api_id].inputs)
        return [Action(ActionKind.TOOL_EXECUTION, ToolCall(api_id, params)),
                retrieve, giveup]


def _respond(answer: str, final: bool) -> Action:
    return Action(ActionKind.DIRECT_RESPONSE, DirectResponse(answer, final))


def action_to_record(action: Action) -> Dict[str, Any]:
    """An action in the external response format."""
    rec = {'action': action.kind.value, 'target_api': None, 'params': {},
           'recall_description': None, 'answer': None}  # type: Dict[str, Any]
    p = action.payload
    if isinstance(p, DirectResponse):
        rec.update(answer=p.answer, final=p.final)
    elif isinstance(p, Clarification):
        rec.update(answer=p.question, params={n: None for n in p.params})
    elif isinstance(p, RetrievalRequest):
        rec['recall_description'] = "{}(description: {}, input: {}; " \
            "output: {})".format(
                'request', p.description, ', '.join(sorted(p.known_inputs)),
                ', '.join(sorted(p.desired_outputs)))
    elif isinstance(p, ToolCall):
        rec.update(target_api=p.api_id, params=dict(p.params))
    return rec


def action_from_record(rec: Any) -> Action:
    """
    Parse the external response format.

    Raises:
        ProtocolError: on an unknown action or missing fields.
    """
    if not isinstance(rec, dict):
        raise ProtocolError("Response is not an object")
    try:
        kind = ActionKind(rec.get('action'))
    except ValueError:
        raise ProtocolError("Unknown action {!r}".format(rec.get('action')))
    params = rec.get('params') or {}
    if not isinstance(params, dict):
        raise ProtocolError("params must be an object")
    if kind is ActionKind.DIRECT_RESPONSE:
        if rec.get('answer') is None:
            raise ProtocolError("direct_response without answer")
        return _respond(str(rec['answer']), bool(rec.get('final', True)))
    if kind is ActionKind.INTENT_CLARIFICATION:
        return Action(kind, Clarification(str(rec.get('answer') or ''),
                                          tuple(sorted(params))))
    if kind is ActionKind.TOOLCHAIN_RETRIEVAL:
        return Action(kind, parse_recall_description(
            rec.get('recall_description') or ''))
    return Action(kind, ToolCall(rec.get('target_api') or None,
                                 tuple(sorted((str(k), str(v))
                                              for k, v in params.items()))))


def _observation_record(obs: Observation) -> Dict[str, Any]:
    return {'kind': obs.kind.value, 'payload': obs.payload,
            'step_index': obs.step_index, 'node_id': obs.node_id}


def context_to_record(ctx: DecisionContext) -> Dict[str, Any]:
    """A decision context in the external request format."""
    return {
        'history': [{'observation': _observation_record(o),
                     'action': action_to_record(a)} for o, a in ctx.history],
        'current': _observation_record(ctx.current),
        'query': ctx.current.view.query,
        'bindings': dict(ctx.current.view.bindings),
        'subgraph': ctx.tree,
    }


class ExternalPolicy(object):
    """
    Delegates decisions to a completion service: POSTs the context as JSON
    to `url` and parses one action record from the JSON reply.
    """
    def __init__(self, url: str, session: Optional[requests.Session] = None,
                 timeout: float = 60.0) -> None:
        self.url = url
        self.session = session or requests.Session()
        self.timeout = timeout
        headers = requests.utils.default_headers()
        headers.update({'User-Agent': 'toolnav'})
        self.headers = headers

    def decide(self, ctx: DecisionContext) -> Action:
        try:
            resp = self.session.post(self.url, json=context_to_record(ctx),
                                     headers=self.headers,
                                     timeout=self.timeout)
            resp.raise_for_status()
            rec = resp.json()
        except (RequestException, ValueError) as e:
            logger.warning("Completion service error: {}".format(e))
            raise ProtocolError("Completion service error: {}".format(e))
        logger.debug("Completion service replied {}".format(json.dumps(rec)))
        return action_from_record(rec)


FeasibleSupplier = Callable[[DecisionContext, Sequence[Action]], Set[int]]


def admissible_actions(g: ToolGraph) -> FeasibleSupplier:
    """
    Feasible-set supplier: every action except tool calls naming an
    inactive, unknown or episode-failed API.
    """
    def supplier(ctx: DecisionContext, actions: Sequence[Action]) -> Set[int]:
        failed = ctx.current.view.failed
        ok = set()
        for i, a in enumerate(actions):
            api = a.api_id
            if a.kind is ActionKind.TOOL_EXECUTION and api is not None and (
                    api in failed or not g.is_api(api) or
                    not g.is_active(api)):
                continue
            ok.add(i)
        return ok
    return supplier


class ProjectedPolicy(object):
    """
    Wraps a policy with a feasible-set projection. Candidate actions (the
    base policy's choice, then the fallbacks of `fallback`) get geometric
    base masses 1, 1/2, 1/4, ...; the distribution is projected onto the
    feasible candidates and the most likely one is chosen.
    """
    def __init__(self, base: DecisionPolicy, supplier: FeasibleSupplier,
                 fallback: Optional[RulePolicy] = None) -> None:
        self.base = base
        self.supplier = supplier
        self.fallback = fallback

    def candidates(self, ctx: DecisionContext) -> List[Action]:
        listed = getattr(self.base, 'candidates', None)
        if listed is not None:
            cands = list(listed(ctx))
        else:
            cands = [decide(ctx, self.base)]
        if self.fallback is not None and self.fallback is not self.base:
            cands += [a for a in self.fallback.candidates(ctx)
                      if a not in cands]
        return cands

    def decide(self, ctx: DecisionContext) -> Action:
        cands = self.candidates(ctx)
        masses = 0.5 ** np.arange(len(cands))
        pi0 = PolicyDistribution.from_weights(masses)
        allowed = self.supplier(ctx, cands)
        if not allowed:
            raise ProtocolError("No feasible action")
        try:
            pi = project(pi0, FeasibleSet(frozenset(allowed)))
        except InfeasibleError as e:
            raise ProtocolError(str(e))
        return cands[int(np.argmax(pi.probs))]


class SimulatedUser(object):
    """Answers clarification questions from a table of known values."""
    def __init__(self, facts: Optional[Mapping[str, str]] = None) -> None:
        self.facts = dict(facts or {})

    def __call__(self, question: str, params: Sequence[str]) -> str:
        known = [(p, self.facts[p]) for p in params if p in self.facts]
        if not known:
            return UNKNOWN_REPLY
        return ', '.join("{}:{}".format(p, v) for p, v in known)


# -- the loop --

def run_episode(query: str, g: ToolGraph, policy: DecisionPolicy,
                executor: Executor, limits: Optional[AgentConfig] = None,
                ranker: Optional[SimilarityProvider] = None,
                responder: Optional[Responder] = None,
                clock: Optional[Callable[[], float]] = None) -> EpisodeRecord:
    """
    Run one query to completion or until ``limits.max_steps`` policy calls.

    Args:
        query: the user query (see the module docs for its syntax).
        g: the tool graph; invocation statistics are recorded into it
            unless ``limits.record_statistics`` is off.
        policy: the decision policy.
        executor: calls an API: ``executor(api_id, args)`` returns
            ``{'status', 'data', 'type'}`` with type success, mock or error.
        limits: step limit, search mode and the loop switches of
            AgentConfig.
        ranker: similarity provider used to rank APIs for retrieval.
        responder: answers clarification questions; without one every
            question is answered "I don't know".
        clock: current time in days, for invocation records.

    Returns:
        The episode record. An episode is complete only when the policy
        gives a final DirectResponse within the step limit.
    """
    cfg = limits or AgentConfig()
    cfg.validate()
    ranker = ranker or LexicalSimilarity()
    clock = clock or (lambda: 0.0)
    subs = parse_query(query)
    bindings = {}  # type: Bindings
    for s in subs:
        bindings.update(dict(s.inputs))
    provenance = {}  # type: Dict[str, str]
    failed = set()  # type: Set[str]
    asked = set()  # type: Set[str]
    answers = []  # type: List[str]
    plan = None  # type: Optional[SubgraphPlan]
    tree = ''
    no_tools = False
    request = None  # type: Optional[RetrievalRequest]
    history = deque(maxlen=WINDOW)  # type: Deque[Tuple[Observation, Action]]
    rec = EpisodeRecord(query)

    def view() -> EpisodeView:
        return EpisodeView(query, tuple(sorted(bindings.items())),
                           tuple(answers), frozenset(failed),
                           tuple(rec.executed_apis), frozenset(asked),
                           no_tools)

    def wanted() -> List[str]:
        i = len(answers)
        return list(subs[i].outputs) if i < len(subs) else []

    def repairable(api_id: Optional[str]) -> bool:
        return cfg.recombination and plan is not None and api_id in plan.nodes

    def repair(blocked: str) -> bool:
        """Recombine the plan around `blocked`; False when nothing works."""
        nonlocal plan, tree
        assert plan is not None
        repaired = recombine(plan, blocked, g, cfg, bindings, wanted(),
                             failed, request, ranker, rec.repairs)
        if isinstance(repaired, Exhausted):
            return False
        plan, tree = repaired, serialize_subgraph(g, repaired)
        return True

    def call(api_id: Optional[str], step: int) -> Observation:
        obs, new = execute_step(plan, bindings, executor, g, wanted() or None,
                                clock(), failed, step, provenance, api_id,
                                cfg.record_statistics)
        bindings.update(new)
        if obs.kind is ObservationKind.TOOL_RESULT:
            rec.executed_apis.append(obs.node_id)
        else:
            failed.add(obs.node_id)
            rec.failed_apis.append(obs.node_id)
        return replace(obs, view=view())

    def settle(obs: Observation) -> bool:
        """Repair the plan after a failed call; False ends the episode."""
        api_id = obs.node_id
        if obs.kind is not ObservationKind.TOOL_FAILURE or api_id is None or \
                not repairable(api_id) or repair(api_id):
            return True
        rec.error = "Recombination exhausted at {}".format(api_id)
        return False

    obs = Observation(ObservationKind.USER_QUERY, query, 0, view())
    rec.observations.append(obs)
    while rec.llm_calls < cfg.max_steps:
        ctx = DecisionContext(tuple(history), obs, plan, tree,
                              plan_schema(g, plan))
        try:
            action = decide(ctx, policy)
        except ProtocolError as e:
            logger.warning("Protocol error: {}".format(e))
            rec.error = str(e)
            break
        rec.llm_calls += 1
        rec.trace.append(action)
        history.append((obs, action))
        step = rec.llm_calls
        p = action.payload

        if isinstance(p, DirectResponse):
            answers.append(p.answer)
            if p.final:
                rec.completed = True
                rec.answer = '; '.join(answers)
                break
            obs = Observation(ObservationKind.USER_QUERY, query, step, view())

        elif isinstance(p, Clarification):
            reply = responder(p.question, p.params) if responder else \
                UNKNOWN_REPLY
            asked.update(p.params)
            bindings.update(parse_clarification_reply(reply))
            obs = Observation(ObservationKind.CLARIFICATION_REPLY, reply, step,
                              view())

        elif isinstance(p, RetrievalRequest):
            request = p
            try:
                plan, tree = retrieve_toolchain(p, g, ranker, cfg, failed)
                no_tools = False
            except EmptyPlanError as e:
                plan, tree, no_tools = None, '', True
                logger.info(str(e))
            obs = Observation(ObservationKind.TOOL_RESULT,
                              tree or 'no matching tools', step, view())
            if cfg.merge_retrieve_exec and plan is not None:
                # the same step runs the first ready API of the new plan
                try:
                    obs = call(None, step)
                except DeadlockError as e:
                    logger.debug("Nothing to run yet: {}".format(e))
                except ProtocolError as e:
                    rec.error = str(e)
                    logger.warning(rec.error)
                    break
                else:
                    if not settle(obs):
                        rec.observations.append(obs)
                        break

        elif isinstance(p, ToolCall):
            if p.api_id is None and plan is None:
                rec.error = "Tool call without a plan"
                break
            if p.api_id is not None and (p.api_id in failed or
                                         not g.is_api(p.api_id) or
                                         not g.is_active(p.api_id)):
                rec.error = "Call to unavailable API {}".format(p.api_id)
                logger.warning(rec.error)
                break
            try:
                obs = call(p.api_id, step)
            except ProtocolError as e:
                rec.error = str(e)
                logger.warning(rec.error)
                break
            except DeadlockError as e:
                logger.info(str(e))
                if e.api_id is not None and repairable(e.api_id):
                    repair(e.api_id)
                obs = Observation(ObservationKind.TOOL_FAILURE,
                                  "deadlock: {}".format(e), step, view(),
                                  e.api_id)
            else:
                if not settle(obs):
                    rec.observations.append(obs)
                    break
        rec.observations.append(obs)

    logger.info("Episode finished: completed={} steps={} answer={!r}".format(
        rec.completed, rec.llm_calls, rec.answer))
    return rec
