"""
Closed-loop evaluation: a deterministic API simulator driven by authored
world files, a deterministic answer judge, TCR/TSR/Steps metrics, the
two-phase churn experiment and the single-phase ablation study.

World files
-----------

UTF-8 text, one directive per line, tokens split like a POSIX shell (quote
anything with spaces), ``#`` starts a comment::

    API <id> <name> <description>
    IN <api> <param> <description>
    OUT <api> <param> <description>
    CALL <api> <k=v,...|*> -> <k=v,...>
    OUTAGE <api>
    DOWN <api> <phase>
    KNOW <question> <answer>
    TASK <Easy|Medium|Hard> <query> <ground truth>
    FACT <name> <value>

``CALL`` rows are matched in file order against the call arguments (``*``
matches anything). ``OUTAGE`` pins the APIs that go down in the first phase
of the churn experiment; ``DOWN`` makes an API unavailable in one phase of
every run. ``FACT`` lines belong to the preceding ``TASK`` and hold what the
simulated user answers when asked for a parameter.

Usage
-----

>>> world = load_world('fixtures/churn_world.txt')
>>> g = build_world_graph(world)
>>> on, off = run_churn_experiment(world, g, ChurnConfig(), seed=0)
>>> print(on.to_table())
>>> for name, report in run_ablation(world, g):
...     print(name, report.tsr)

Interface
---------
"""
import logging
import re
import shlex
from dataclasses import dataclass, field
from typing import (Any, Dict, FrozenSet, Iterable, List, NamedTuple,
                    Optional, Sequence, Set, Tuple)

import numpy as np

from agent import (AgentConfig, DecisionPolicy, EpisodeRecord, RulePolicy,
                   SimulatedUser, normalize_text, run_episode)
from evolution import EvolutionConfig, maintain
from linkscore import StatisticalScorer, score_edges
from toolgraph import (ApiSpec, ParamSpec, SimilarityProvider, ToolGraph,
                       DEFAULT_THRESHOLD, LexicalSimilarity, build_graph)
from toolsearch import SEARCH_MODES, ConfigError, SearchConfig


# Types:
class WorldFileError(Exception):
    """A malformed world or records file; `lineno` is 1-based."""
    def __init__(self, lineno: int, msg: str) -> None:
        super().__init__("line {}: {}".format(lineno, msg))
        self.lineno = lineno


class ExperimentError(Exception): pass
class MetricsError(ValueError): pass


Pairs = Tuple[Tuple[str, str], ...]

logger = logging.getLogger(__name__)

DIFFICULTIES = ('Easy', 'Medium', 'Hard')
PHASES = (1, 2)
MIN_CHURN_APIS = 10


class CallRow(NamedTuple):
    match: Optional[Pairs]  # None matches any arguments
    outputs: Pairs


@dataclass
class ApiBehavior:
    id: str
    name: str
    description: str
    inputs: List[ParamSpec] = field(default_factory=list)
    outputs: List[ParamSpec] = field(default_factory=list)
    rows: List[CallRow] = field(default_factory=list)

    def spec(self) -> ApiSpec:
        return ApiSpec(self.id, self.name, self.description,
                       tuple(self.inputs), tuple(self.outputs))


class Task(NamedTuple):
    difficulty: str
    query: str
    truth: str
    facts: Pairs = ()


@dataclass
class FixtureWorld:
    apis: Dict[str, ApiBehavior] = field(default_factory=dict)
    down: Dict[str, Set[int]] = field(default_factory=dict)
    outage: List[str] = field(default_factory=list)
    knowledge: Dict[str, str] = field(default_factory=dict)
    tasks: List[Task] = field(default_factory=list)

    def api_specs(self) -> List[ApiSpec]:
        return [b.spec() for b in self.apis.values()]

    def available(self, api_id: str, phase: int,
                  down: Iterable[str] = ()) -> bool:
        return api_id not in down and phase not in self.down.get(api_id, ())


# -- world files --

def _pairs(text: str, lineno: int) -> Pairs:
    pairs = []
    for item in text.split(','):
        if '=' not in item:
            raise WorldFileError(lineno, "expected k=v, got {!r}".format(item))
        k, v = item.split('=', 1)
        if not k:
            raise WorldFileError(lineno, "empty name in {!r}".format(item))
        pairs.append((k, v))
    return tuple(pairs)


_ARITY = {'API': 4, 'IN': 4, 'OUT': 4, 'CALL': 5, 'OUTAGE': 2, 'DOWN': 3,
          'KNOW': 3, 'TASK': 4, 'FACT': 3}


def parse_world(text: str) -> FixtureWorld:
    """
    Parse a world file.

    Raises:
        WorldFileError: on a malformed line, with its line number.
    """
    world = FixtureWorld()
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            tok = shlex.split(line, comments=True)
        except ValueError as e:
            raise WorldFileError(lineno, str(e))
        if not tok:
            continue
        kind = tok[0]
        if kind not in _ARITY:
            raise WorldFileError(lineno, "unknown directive {!r}".format(kind))
        if len(tok) != _ARITY[kind]:
            raise WorldFileError(lineno, "{} needs {} fields, got {}".format(
                kind, _ARITY[kind], len(tok)))
        if kind in ('IN', 'OUT', 'CALL', 'OUTAGE', 'DOWN') and \
                tok[1] not in world.apis:
            raise WorldFileError(lineno, "unknown API {!r}".format(tok[1]))

        if kind == 'API':
            if tok[1] in world.apis:
                raise WorldFileError(lineno, "duplicate API {!r}".format(tok[1]))
            world.apis[tok[1]] = ApiBehavior(tok[1], tok[2], tok[3])
        elif kind == 'IN':
            world.apis[tok[1]].inputs.append(ParamSpec(tok[2], tok[3]))
        elif kind == 'OUT':
            world.apis[tok[1]].outputs.append(ParamSpec(tok[2], tok[3]))
        elif kind == 'CALL':
            if tok[3] != '->':
                raise WorldFileError(lineno, "CALL needs '->'")
            match = None if tok[2] == '*' else _pairs(tok[2], lineno)
            world.apis[tok[1]].rows.append(
                CallRow(match, _pairs(tok[4], lineno)))
        elif kind == 'OUTAGE':
            if tok[1] not in world.outage:
                world.outage.append(tok[1])
        elif kind == 'DOWN':
            try:
                phase = int(tok[2])
            except ValueError:
                phase = 0
            if phase not in PHASES:
                raise WorldFileError(lineno, "phase must be 1 or 2")
            world.down.setdefault(tok[1], set()).add(phase)
        elif kind == 'KNOW':
            world.knowledge[tok[1]] = tok[2]
        elif kind == 'TASK':
            if tok[1] not in DIFFICULTIES:
                raise WorldFileError(lineno, "difficulty must be one of {}"
                                     .format(', '.join(DIFFICULTIES)))
            world.tasks.append(Task(tok[1], tok[2], tok[3]))
        elif kind == 'FACT':
            if not world.tasks:
                raise WorldFileError(lineno, "FACT before any TASK")
            t = world.tasks[-1]
            world.tasks[-1] = t._replace(facts=t.facts + ((tok[1], tok[2]),))
    return world


def load_world(path: str) -> FixtureWorld:
    with open(path, encoding='utf-8') as f:
        world = parse_world(f.read())
    logger.info("Loaded world {}: {} APIs, {} tasks".format(
        path, len(world.apis), len(world.tasks)))
    return world


def build_world_graph(world: FixtureWorld,
                      sim: Optional[SimilarityProvider] = None,
                      threshold: float = DEFAULT_THRESHOLD) -> ToolGraph:
    """A fresh tool graph over the world's APIs."""
    return build_graph(world.api_specs(), sim or LexicalSimilarity(),
                       threshold)


# -- simulator --

def _response(status: int, data: Any, kind: str) -> Dict[str, Any]:
    return {'status': status, 'data': data, 'type': kind}


def simulate_call(world: FixtureWorld, api_id: str, bindings: Dict[str, str],
                  phase: int = 1, down: Iterable[str] = ()) -> Dict[str, Any]:
    """
    Answer one API call the way the world describes it. Never raises: bad
    calls get ``type='error'`` responses.

    Args:
        bindings: call arguments by the API's own parameter names.
        phase: experiment phase, for ``DOWN`` lines.
        down: extra APIs that are unavailable.

    Returns:
        ``{'status', 'data', 'type'}``: the first matching ``CALL`` row as a
        success, or schema-shaped placeholders as a mock when no row matches.
    """
    api = world.apis.get(api_id)
    if api is None:
        return _response(404, "unknown API {}".format(api_id), 'error')
    if not world.available(api_id, phase, down):
        return _response(503, "{} is unavailable".format(api_id), 'error')
    missing = [p.name for p in api.inputs if p.name not in bindings]
    if missing:
        return _response(400, "missing required input: {}".format(
            ', '.join(missing)), 'error')
    for row in api.rows:
        if row.match is None or all(bindings.get(k) == v for k, v in row.match):
            return _response(200, dict(row.outputs), 'success')
    return _response(200, {p.name: "<{}>".format(p.name) for p in api.outputs},
                     'mock')


class WorldExecutor(object):
    """The tool executor of an episode, backed by `simulate_call`."""
    def __init__(self, world: FixtureWorld, phase: int = 1,
                 down: Iterable[str] = ()) -> None:
        self.world = world
        self.phase = phase
        self.down = frozenset(down)

    def __call__(self, api_id: str, args: Dict[str, str]) -> Dict[str, Any]:
        return simulate_call(self.world, api_id, args, self.phase, self.down)


class WorldProber(object):
    """Availability oracle for reactivation probes."""
    def __init__(self, world: FixtureWorld, phase: int = 1,
                 down: Iterable[str] = ()) -> None:
        self.world = world
        self.phase = phase
        self.down = frozenset(down)

    def __call__(self, api_id: str) -> bool:
        return api_id in self.world.apis and \
            self.world.available(api_id, self.phase, self.down)


# -- judging and metrics --

def _facts(text: Optional[str]) -> Set[Any]:
    facts = set()  # type: Set[Any]
    for part in re.split(r'[;\n]', text or ''):
        part = normalize_text(part)
        if not part:
            continue
        if '=' in part:
            facts.add(frozenset(re.sub(r'\s*=\s*', '=', kv.strip())
                                for kv in part.split(',') if kv.strip()))
        else:
            facts.add(part)
    return facts


def judge(final_answer: Optional[str], ground_truth: str) -> bool:
    """
    Compare an answer to the ground truth after case and whitespace
    normalization. Answers are ``;``-separated facts; facts of the form
    ``name=value, ...`` compare as sets of pairs. Every fact must match and
    nothing may be missing.
    """
    truth = _facts(ground_truth)
    return bool(truth) and _facts(final_answer) == truth


class Outcome(NamedTuple):
    difficulty: str
    completed: bool
    steps: int
    answer: Optional[str]
    truth: str
    phase: int = 1

    @property
    def success(self) -> bool:
        return self.completed and judge(self.answer, self.truth)


@dataclass
class MetricsReport:
    total: int
    completed: int
    successful: int
    tcr: float
    tsr: float
    mean_steps: Optional[float]
    by_difficulty: Dict[str, 'MetricsReport'] = field(default_factory=dict)

    def to_table(self) -> str:
        rows = [('all', self)] + sorted(
            self.by_difficulty.items(),
            key=lambda kv: DIFFICULTIES.index(kv[0])
            if kv[0] in DIFFICULTIES else len(DIFFICULTIES))
        lines = ["{:<10} {:>5} {:>7} {:>7} {:>6}".format(
            'difficulty', 'tasks', 'TCR', 'TSR', 'Steps')]
        for name, r in rows:
            lines.append("{:<10} {:>5} {:>7.2f} {:>7.2f} {:>6}".format(
                name, r.total, r.tcr, r.tsr, _steps(r.mean_steps)))
        return '\n'.join(lines)

    def to_keyvalue(self, prefix: str = '') -> str:
        lines = []
        for name, r in [('', self)] + sorted(self.by_difficulty.items()):
            p = prefix + (name.lower() + '.' if name else '')
            lines += ["{}tasks={}".format(p, r.total),
                      "{}tcr={:.2f}".format(p, r.tcr),
                      "{}tsr={:.2f}".format(p, r.tsr),
                      "{}steps={}".format(p, _steps(r.mean_steps))]
        return '\n'.join(lines)


def _steps(x: Optional[float]) -> str:
    return '-' if x is None else "{:.2f}".format(x)


def compute_metrics(records: Sequence[Any], judgments: Sequence[bool],
                    difficulties: Optional[Sequence[str]] = None
                    ) -> MetricsReport:
    """
    TCR, TSR and mean Steps over `records`.

    Args:
        records: episode records (anything with `completed` and `steps`).
        judgments: one per record; a judgment on an incomplete episode is
            ignored.
        difficulties: optional difficulty per record, for the breakdown.

    Raises:
        MetricsError: on an empty record list or mismatched lengths.
    """
    if not records:
        raise MetricsError("No episode records")
    if len(judgments) != len(records):
        raise MetricsError("{} judgments for {} records".format(
            len(judgments), len(records)))
    if difficulties is not None and len(difficulties) != len(records):
        raise MetricsError("{} difficulties for {} records".format(
            len(difficulties), len(records)))
    ok = [bool(r.completed and j) for r, j in zip(records, judgments)]
    done = sum(1 for r in records if r.completed)
    steps = [r.steps for r, s in zip(records, ok) if s]
    report = MetricsReport(
        total=len(records), completed=done, successful=len(steps),
        tcr=100.0 * done / len(records), tsr=100.0 * len(steps) / len(records),
        mean_steps=float(np.mean(steps)) if steps else None)
    if difficulties is not None:
        for d in sorted(set(difficulties)):
            idx = [i for i, x in enumerate(difficulties) if x == d]
            report.by_difficulty[d] = compute_metrics(
                [records[i] for i in idx], [judgments[i] for i in idx])
    return report


def evaluate(outcomes: Sequence[Outcome]) -> MetricsReport:
    """Judge `outcomes` and compute their metrics, broken down by difficulty."""
    return compute_metrics(outcomes, [o.success for o in outcomes],
                           [o.difficulty for o in outcomes])


def format_records(outcomes: Iterable[Outcome]) -> str:
    """The records file: one ``EP`` line per episode."""
    return ''.join("EP {} completed={} steps={} {} {}\n".format(
        o.difficulty, int(o.completed), o.steps, shlex.quote(o.answer or ''),
        shlex.quote(o.truth)) for o in outcomes)


def parse_records(text: str) -> List[Outcome]:
    """
    Raises:
        WorldFileError: on a malformed line, with its line number.
    """
    outcomes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = shlex.split(line, comments=True)
        if not tok:
            continue
        if len(tok) != 6 or tok[0] != 'EP' or tok[1] not in DIFFICULTIES:
            raise WorldFileError(lineno, "expected 'EP <difficulty> "
                                 "completed=<0|1> steps=<n> <answer> <truth>'")
        m1 = re.match(r'^completed=([01])$', tok[2])
        m2 = re.match(r'^steps=(\d+)$', tok[3])
        if not m1 or not m2:
            raise WorldFileError(lineno, "bad completed= or steps= field")
        outcomes.append(Outcome(tok[1], m1.group(1) == '1', int(m2.group(1)),
                                tok[4] or None, tok[5]))
    return outcomes


def load_records(path: str) -> List[Outcome]:
    with open(path, encoding='utf-8') as f:
        return parse_records(f.read())


# -- runs --

def _outcome(task: Task, rec: EpisodeRecord, phase: int) -> Outcome:
    return Outcome(task.difficulty, rec.completed, rec.steps, rec.answer,
                   task.truth, phase)


def run_world(world: FixtureWorld, g: ToolGraph,
              policy: Optional[DecisionPolicy] = None,
              cfg: Optional[AgentConfig] = None, phase: int = 1,
              start: float = 0.0, hours_per_query: float = 1.0
              ) -> List[Outcome]:
    """
    Run every task of `world` once, in order, recording invocation
    statistics into `g`.

    Args:
        policy: defaults to a `RulePolicy` over the world's knowledge table.
        start: clock at the first query, in days.
    """
    policy = policy or RulePolicy(world.knowledge)
    executor = WorldExecutor(world, phase)
    now = start
    outcomes = []
    for task in world.tasks:
        rec = run_episode(task.query, g, policy, executor, cfg,
                          responder=SimulatedUser(dict(task.facts)),
                          clock=lambda t=now: t)
        outcomes.append(_outcome(task, rec, phase))
        now += hours_per_query / 24.0
    return outcomes


@dataclass
class ChurnConfig:
    fail_frac: float = 0.1
    max_steps: int = 6
    hours_per_query: float = 1.0
    search_mode: str = 'heur'
    static_graph: bool = False
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.fail_frac <= 1.0:
            raise ConfigError("fail_frac must be in [0,1]")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.hours_per_query <= 0:
            raise ConfigError("hours_per_query must be positive")
        if self.search_mode not in SEARCH_MODES:
            raise ConfigError("search_mode must be one of {}".format(
                ', '.join(SEARCH_MODES)))


def outage_set(world: FixtureWorld, fail_frac: float,
               seed: int) -> FrozenSet[str]:
    """
    The APIs that go down in the first phase: the world's pinned ``OUTAGE``
    lines if it has any, otherwise ``round(fail_frac * n)`` APIs sampled with
    `seed`. Always empty when `fail_frac` is 0.
    """
    if fail_frac <= 0:
        return frozenset()
    if world.outage:
        return frozenset(world.outage)
    ids = sorted(world.apis)
    n = min(len(ids), int(round(fail_frac * len(ids))))
    rng = np.random.default_rng(seed)
    return frozenset(ids[i] for i in rng.choice(len(ids), size=n,
                                                replace=False))


def run_churn_arm(world: FixtureWorld, g: ToolGraph, cfg: ChurnConfig,
                  seed: int, mechanisms: bool) -> List[Outcome]:
    """
    One arm of the churn experiment on a copy of `g`: the task list under
    the outage, then the same list again after recovery. Graph state carries
    over between the phases.

    With `mechanisms` on, each query is followed by a maintenance round
    (pruning, then reactivation probes) and failures are repaired by path
    recombination; with it off, neither happens. Edge statistics are
    refreshed after every query in both arms unless `cfg.static_graph` is
    set, in which case invocations are not recorded either.
    """
    g = g.copy()
    rng = np.random.default_rng(seed)
    down = outage_set(world, cfg.fail_frac, seed)
    limits = AgentConfig(max_steps=cfg.max_steps, search_mode=cfg.search_mode,
                         recombination=mechanisms,
                         record_statistics=not cfg.static_graph,
                         search=cfg.search)
    policy = RulePolicy(world.knowledge)
    now = 0.0
    outcomes = []
    for phase in PHASES:
        phase_down = down if phase == 1 else frozenset()
        executor = WorldExecutor(world, phase, phase_down)
        prober = WorldProber(world, phase, phase_down)
        for task in world.tasks:
            rec = run_episode(task.query, g, policy, executor, limits,
                              responder=SimulatedUser(dict(task.facts)),
                              clock=lambda t=now: t)
            outcomes.append(_outcome(task, rec, phase))
            if not cfg.static_graph:
                score_edges(g, StatisticalScorer())
            if mechanisms:
                pruned, restored = maintain(g, cfg.evolution, now, prober, rng)
                if pruned or restored:
                    logger.debug("After query at {:.3f}: pruned {}, restored {}"
                                 .format(now, pruned, restored))
            now += cfg.hours_per_query / 24.0
    return outcomes


def run_churn_experiment(world: FixtureWorld, g: ToolGraph,
                         cfg: Optional[ChurnConfig] = None, seed: int = 0
                         ) -> Tuple[MetricsReport, MetricsReport]:
    """
    The two-phase churn experiment, once with graph evolution and path
    recombination and once without, over the same queries in the same order.

    Returns:
        (report with mechanisms on, report with mechanisms off), each over
        both phases.

    Raises:
        ExperimentError: if the world has fewer than 10 APIs or no tasks.
    """
    cfg = cfg or ChurnConfig()
    cfg.validate()
    if len(world.apis) < MIN_CHURN_APIS:
        raise ExperimentError("Churn experiment needs at least {} APIs, "
                              "world has {}".format(MIN_CHURN_APIS,
                                                    len(world.apis)))
    if not world.tasks:
        raise ExperimentError("World has no tasks")
    logger.info("Churn experiment: outage {}".format(
        sorted(outage_set(world, cfg.fail_frac, seed))))
    on = evaluate(run_churn_arm(world, g, cfg, seed, True))
    off = evaluate(run_churn_arm(world, g, cfg, seed, False))
    logger.info("Churn experiment: TSR {:.2f} (on) vs {:.2f} (off)".format(
        on.tsr, off.tsr))
    return on, off


class AblationArm(NamedTuple):
    name: str
    search_mode: str = 'heur'
    static_graph: bool = False
    clarify: bool = True
    merge_retrieve_exec: bool = False


ABLATION_ARMS = (
    AblationArm('full'),
    AblationArm('alpha_beta', search_mode='ab'),
    AblationArm('unpruned', search_mode='unpruned'),
    AblationArm('static_graph', static_graph=True),
    AblationArm('no_clarify', clarify=False),
    AblationArm('merged', merge_retrieve_exec=True),
)


def run_ablation_arm(world: FixtureWorld, g: ToolGraph, arm: AblationArm,
                     cfg: Optional[ChurnConfig] = None) -> List[Outcome]:
    """
    Run the task list once on a copy of `g` with one component of the agent
    switched off or replaced. No outage, maintenance or recombination
    setting of `cfg` applies here; only its step limit, clock spacing and
    search parameters do.
    """
    cfg = cfg or ChurnConfig()
    g = g.copy()
    limits = AgentConfig(max_steps=cfg.max_steps, search_mode=arm.search_mode,
                         record_statistics=not arm.static_graph,
                         merge_retrieve_exec=arm.merge_retrieve_exec,
                         search=cfg.search)
    policy = RulePolicy(world.knowledge, clarify=arm.clarify)
    executor = WorldExecutor(world, 1)
    now = 0.0
    outcomes = []
    for task in world.tasks:
        rec = run_episode(task.query, g, policy, executor, limits,
                          responder=SimulatedUser(dict(task.facts)),
                          clock=lambda t=now: t)
        outcomes.append(_outcome(task, rec, 1))
        if not arm.static_graph:
            score_edges(g, StatisticalScorer())
        now += cfg.hours_per_query / 24.0
    return outcomes


def run_ablation(world: FixtureWorld, g: ToolGraph,
                 cfg: Optional[ChurnConfig] = None,
                 arms: Sequence[AblationArm] = ABLATION_ARMS
                 ) -> List[Tuple[str, MetricsReport]]:
    """
    Every arm of the ablation study over the same queries in the same order.

    Raises:
        ExperimentError: if the world has no tasks or two arms share a name.
    """
    cfg = cfg or ChurnConfig()
    cfg.validate()
    if not world.tasks:
        raise ExperimentError("World has no tasks")
    names = [a.name for a in arms]
    if len(set(names)) != len(names):
        raise ExperimentError("Duplicate arm names in {}".format(names))
    results = []
    for arm in arms:
        if arm.search_mode not in SEARCH_MODES:
            raise ConfigError("Arm {}: unknown search mode {!r}".format(
                arm.name, arm.search_mode))
        report = evaluate(run_ablation_arm(world, g, arm, cfg))
        logger.info("Ablation arm {}: TSR {:.2f}, steps {}".format(
            arm.name, report.tsr, _steps(report.mean_steps)))
        results.append((arm.name, report))
    return results
