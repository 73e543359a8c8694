import os
import unittest
from unittest.mock import MagicMock
from requests.exceptions import ConnectionError as RequestsConnectionError
from agent import (EXHAUSTED, Action, ActionKind, AgentConfig, ApiIO,
                   Clarification, DecisionContext, DeadlockError,
                   DirectResponse, EmptyPlanError, EpisodeView,
                   ExternalPolicy, Observation, ObservationKind,
                   ProjectedPolicy, ProtocolError,
                   RetrievalRequest, RulePolicy, SimulatedUser, ToolCall,
                   UNKNOWN_REPLY, action_from_record, action_to_record,
                   admissible_actions, execute_step, invoke,
                   parse_clarification_reply, parse_query,
                   parse_recall_description, rank_targets, recall_description,
                   recombine, resolve_chain, retrieve_toolchain, run_episode)
from harness import WorldExecutor, build_world_graph, load_world, parse_world
from toolgraph import (ApiSpec, LexicalSimilarity, ParamSpec, build_graph,
                       dump_graph, induced_plan)
from toolsearch import ConfigError


FIXTURES = os.path.join(os.path.dirname(__file__), '..', '..', 'fixtures')

SRC = ParamSpec('src', 'Raw source identifier')
MID = ParamSpec('mid', 'Intermediate token')
TICKET = ParamSpec('ticket', 'Access ticket')
RESULT = ParamSpec('result', 'Summary report text')
DIGEST = ParamSpec('digest', 'Condensed digest')

WEATHER_WORLD = """
API get_weather get_weather "Current weather temperature of a city"
IN get_weather city "Name of the city"
OUT get_weather temperature "Temperature in degrees celsius"
CALL get_weather city=Paris -> temperature=18

API get_weather_backup get_weather_backup "Current weather temperature of a city from the backup provider"
IN get_weather_backup city "Name of the city"
OUT get_weather_backup temperature "Temperature in degrees celsius"
CALL get_weather_backup city=Paris -> temperature=18
"""


def fixture(name):
    return os.path.join(FIXTURES, name)


def context(query='q', history=(), plan=None, **view):
    obs = Observation(ObservationKind.USER_QUERY, query, 0,
                      EpisodeView(query, **view))
    return DecisionContext(tuple(history), obs, plan)


class TestQueries(unittest.TestCase):
    def test_parse_query(self):
        subs = parse_query("what is x; record my heart rate user_id=u1 "
                           "?record_status")
        self.assertEqual(len(subs), 2)
        self.assertEqual(subs[0].text, 'what is x')
        self.assertEqual(subs[1].text, 'record my heart rate')
        self.assertEqual(subs[1].inputs, (('user_id', 'u1'),))
        self.assertEqual(subs[1].outputs, ('record_status',))
        sub, = parse_query('weather city="New York" ?temperature;')
        self.assertEqual(sub.inputs, (('city', 'New York'),))

    def test_recall_round_trip(self):
        sub = parse_query('record my heart rate ?record_status')[0]
        text = recall_description(sub, ['user_id', 'heart_rate'])
        self.assertTrue(text.startswith('record_my_heart('))
        req = parse_recall_description(text)
        self.assertEqual(req.known_inputs, frozenset(['user_id', 'heart_rate']))
        self.assertEqual(req.desired_outputs, frozenset(['record_status']))
        self.assertFalse(req.resolved)
        with self.assertRaises(ProtocolError):
            parse_recall_description('record my heart rate')

    def test_clarification_reply(self):
        self.assertEqual(parse_clarification_reply('city:Paris, junk, x: '),
                         {'city': 'Paris'})
        self.assertEqual(parse_clarification_reply(UNKNOWN_REPLY), {})
        user = SimulatedUser({'city': 'Paris'})
        self.assertEqual(user('Where?', ['city', 'zip']), 'city:Paris')
        self.assertEqual(user('Zip?', ['zip']), UNKNOWN_REPLY)


class TestActions(unittest.TestCase):
    def test_request_validation(self):
        with self.assertRaises(ProtocolError):
            RetrievalRequest((), frozenset(['a']), frozenset(['a']))
        with self.assertRaises(ProtocolError):
            RetrievalRequest(('a', None))
        with self.assertRaises(ProtocolError):
            RetrievalRequest((None, None, None))
        self.assertTrue(RetrievalRequest(('a', None, None)).resolved)

    def test_payload_must_match_kind(self):
        with self.assertRaises(ProtocolError):
            Action(ActionKind.TOOL_EXECUTION, DirectResponse('hi'))
        self.assertEqual(Action(ActionKind.TOOL_EXECUTION,
                                ToolCall('a')).api_id, 'a')

    def test_history_window(self):
        ctx = context()
        pair = (ctx.current, Action(ActionKind.DIRECT_RESPONSE,
                                    DirectResponse('x', False)))
        context(history=[pair] * 3)
        with self.assertRaises(ValueError):
            context(history=[pair] * 4)

    def test_records(self):
        a = action_from_record({'action': 'call_api', 'target_api': 'x',
                                'params': {'a': 1}})
        self.assertEqual(a, Action(ActionKind.TOOL_EXECUTION,
                                   ToolCall('x', (('a', '1'),))))
        self.assertEqual(action_to_record(a)['params'], {'a': '1'})
        answer = action_from_record({'action': 'direct_response',
                                     'answer': 'ok', 'final': False})
        self.assertEqual(answer.payload, DirectResponse('ok', False))
        ask = action_from_record({'action': 'clarify', 'answer': 'city?',
                                  'params': {'city': None}})
        self.assertEqual(ask.payload, Clarification('city?', ('city',)))
        for bad in ('nope', {'action': 'dance'},
                    {'action': 'direct_response'},
                    {'action': 'call_api', 'params': [1]},
                    {'action': 'retrieve', 'recall_description': 'x'}):
            with self.assertRaises(ProtocolError):
                action_from_record(bad)

    def test_config(self):
        with self.assertRaises(ConfigError):
            AgentConfig(max_steps=0)
        with self.assertRaises(ConfigError):
            AgentConfig(search_mode='bfs')
        cfg = AgentConfig(search_mode='unpruned', merge_retrieve_exec=True)
        self.assertTrue(cfg.record_statistics)


class TestChains(unittest.TestCase):
    schema = {'A': ApiIO(('s',), ('x',)), 'B': ApiIO(('x',), ('y',)),
              'C': ApiIO(('q',), ('x',))}

    def test_order_and_producer_choice(self):
        chain = resolve_chain(self.schema, ['s'], ['y'])
        self.assertEqual(chain.order, ('A', 'B'))
        self.assertEqual((chain.missing, chain.unproducible), ((), ()))
        chain = resolve_chain(self.schema, ['s'], ['y'], targets=['C'])
        self.assertEqual(chain.order, ('C', 'B'))
        self.assertEqual(chain.missing, ('q',))

    def test_failed_producer_skipped(self):
        chain = resolve_chain(self.schema, ['q'], ['y'], failed=['A'])
        self.assertEqual(chain.order, ('C', 'B'))

    def test_missing_and_unproducible(self):
        chain = resolve_chain(self.schema, [], ['y', 'z'])
        self.assertEqual(chain.missing, ('s',))
        self.assertEqual(chain.unproducible, ('z',))


class TestRetrieval(unittest.TestCase):
    def setUp(self):
        self.world = load_world(fixture('churn_world.txt'))
        self.g = build_world_graph(self.world)

    def test_rank_prefers_primary(self):
        req = RetrievalRequest((), frozenset(), frozenset(['temperature']),
                               'current weather')
        top = rank_targets(req, self.g, LexicalSimilarity())
        self.assertEqual(top[:2], ('get_weather', 'get_weather_backup'))
        top = rank_targets(req, self.g, LexicalSimilarity(), ['get_weather'])
        self.assertEqual(top[0], 'get_weather_backup')
        self.assertNotIn('get_weather', top)

    def test_retrieve_completes_inputs(self):
        req = RetrievalRequest(('get_weather', None, None),
                               frozenset(['city']), frozenset(['temperature']))
        plan, tree = retrieve_toolchain(req, self.g)
        self.assertEqual(plan.targets, ('get_weather',))
        self.assertIn('p:city', plan.nodes)
        self.assertIn('get_weather', tree)

    def test_nothing_matches(self):
        req = RetrievalRequest((), frozenset(), frozenset(), 'zzz qqq')
        with self.assertRaises(EmptyPlanError):
            rank_targets(req, self.g, LexicalSimilarity())


class TestExecution(unittest.TestCase):
    def setUp(self):
        self.world = parse_world(WEATHER_WORLD)
        self.g = build_world_graph(self.world)

    def test_invoke_records_outcome(self):
        ok, outputs, msg = invoke(self.g, 'get_weather', {'city': 'Paris'},
                                  WorldExecutor(self.world), 1.0)
        self.assertTrue(ok)
        self.assertEqual(outputs, {'temperature': '18'})
        self.assertEqual(self.g.api('get_weather').stats.n_succ, 1)
        ok, _, msg = invoke(self.g, 'get_weather', {'city': 'Paris'},
                            WorldExecutor(self.world, down=['get_weather']))
        self.assertFalse(ok)
        self.assertIn('unavailable', msg)
        self.assertEqual(self.g.api('get_weather').stats.n_fail, 1)

    def test_invoke_errors(self):
        with self.assertRaises(DeadlockError):
            invoke(self.g, 'get_weather', {}, WorldExecutor(self.world))
        with self.assertRaises(ProtocolError):
            invoke(self.g, 'get_weather', {'city': 'Paris'},
                   MagicMock(return_value={'status': 200}))

    def test_execute_step(self):
        plan = induced_plan(self.g, ['get_weather'],
                            ['get_weather', 'p:city'])
        obs, bindings = execute_step(plan, {'city': 'Paris'},
                                     WorldExecutor(self.world), self.g)
        self.assertIs(obs.kind, ObservationKind.TOOL_RESULT)
        self.assertEqual(obs.node_id, 'get_weather')
        self.assertEqual(bindings['temperature'], '18')
        with self.assertRaises(DeadlockError) as cm:
            execute_step(plan, {}, WorldExecutor(self.world), self.g)
        self.assertEqual(cm.exception.api_id, 'get_weather')

    def test_execute_named_api(self):
        provenance = {}
        obs, bindings = execute_step(None, {'city': 'Paris'},
                                     WorldExecutor(self.world), self.g,
                                     provenance=provenance,
                                     api_id='get_weather_backup')
        self.assertEqual(obs.node_id, 'get_weather_backup')
        self.assertEqual(provenance, {'temperature': 'get_weather_backup'})
        with self.assertRaises(DeadlockError) as cm:
            execute_step(None, {}, WorldExecutor(self.world), self.g,
                         api_id='get_weather')
        self.assertEqual(cm.exception.api_id, 'get_weather')


class TestRecombination(unittest.TestCase):
    def setUp(self):
        self.before = None

    def check_weights_untouched(self, g):
        self.assertEqual(dump_graph(g), self.before)

    def test_substitution(self):
        g = build_world_graph(parse_world(WEATHER_WORLD))
        self.before = dump_graph(g)
        plan = induced_plan(g, ['get_weather'], ['get_weather', 'p:city'])
        report = []
        repaired = recombine(plan, 'get_weather', g,
                             bindings={'city': 'Paris'},
                             desired=['temperature'], report=report)
        self.assertEqual(repaired.targets, ('get_weather_backup',))
        self.assertNotIn('get_weather', repaired.nodes)
        self.assertEqual(report, ['substitution'])
        self.check_weights_untouched(g)

    def test_rerouting(self):
        g = build_graph([
            ApiSpec('render_output', 'render', 'Render the output',
                    [MID], [RESULT]),
            ApiSpec('fetch_token', 'fetch', 'Fetch a token', [SRC], [MID]),
            ApiSpec('exchange_ticket', 'exchange', 'Trade a ticket for a token',
                    [TICKET], [MID]),
            ApiSpec('issue_ticket', 'issue', 'Issue a ticket', [SRC],
                    [TICKET]),
        ], LexicalSimilarity())
        self.before = dump_graph(g)
        plan = induced_plan(g, ['render_output'],
                            ['render_output', 'p:mid', 'fetch_token', 'p:src'])
        report = []
        repaired = recombine(plan, 'fetch_token', g, AgentConfig(
            search_mode='ab'), {'src': 's1'}, ['result'], report=report)
        self.assertEqual(report, ['rerouting'])
        self.assertEqual(repaired.targets, ('render_output',))
        self.assertTrue({'exchange_ticket', 'issue_ticket', 'p:ticket'} <=
                        repaired.nodes)
        self.assertNotIn('fetch_token', repaired.nodes)
        self.check_weights_untouched(g)

    def switch_graph(self):
        return build_graph([
            ApiSpec('compile_report', 'compile', 'Compile the report',
                    [SRC], [RESULT]),
            ApiSpec('assemble_report', 'assemble',
                    'Assemble the summary report from a digest',
                    [DIGEST], [RESULT]),
            ApiSpec('make_digest', 'digest', 'Condense raw material', [SRC],
                    [DIGEST]),
        ], LexicalSimilarity())

    def test_switching(self):
        g = self.switch_graph()
        plan = induced_plan(g, ['compile_report'], ['compile_report', 'p:src'])
        req = RetrievalRequest((), frozenset(['src']), frozenset(['result']),
                               'summary report')
        report = []
        repaired = recombine(plan, 'compile_report', g,
                             bindings={'src': 's1'}, desired=['result'],
                             request=req, report=report)
        self.assertEqual(report, ['switching'])
        self.assertIn('assemble_report', repaired.targets)
        self.assertIn('make_digest', repaired.nodes)
        self.assertNotIn('compile_report', repaired.nodes)

    def test_exhausted(self):
        g = self.switch_graph()
        plan = induced_plan(g, ['compile_report'], ['compile_report', 'p:src'])
        repaired = recombine(plan, 'compile_report', g,
                             bindings={'src': 's1'}, desired=['result'])
        self.assertIs(repaired, EXHAUSTED)
        self.assertFalse(repaired)

    def test_cut_vertex(self):
        g = build_graph([
            ApiSpec('render_output', 'render', 'Render the output',
                    [MID], [RESULT]),
            ApiSpec('fetch_token', 'fetch', 'Fetch a token', [SRC], [MID]),
        ], LexicalSimilarity())
        plan = induced_plan(g, ['render_output'],
                            ['render_output', 'p:mid', 'fetch_token'])
        self.assertIs(recombine(plan, 'fetch_token', g,
                                bindings={'src': 's1'}), EXHAUSTED)

    def test_unknown_failed_api(self):
        g = self.switch_graph()
        plan = induced_plan(g, ['compile_report'], ['compile_report'])
        with self.assertRaises(ValueError):
            recombine(plan, 'make_digest', g)


class TestEpisodes(unittest.TestCase):
    def setUp(self):
        self.world = load_world(fixture('case_world.txt'))
        self.g = build_world_graph(self.world)
        self.policy = RulePolicy(self.world.knowledge)
        self.executor = WorldExecutor(self.world)

    def run_task(self, i, cfg=None):
        task = self.world.tasks[i]
        return run_episode(task.query, self.g, self.policy, self.executor,
                           cfg, responder=SimulatedUser(dict(task.facts)))

    def kinds(self, rec):
        return [a.kind for a in rec.trace]

    def test_compound_query(self):
        rec = self.run_task(0)
        self.assertEqual(self.kinds(rec), [
            ActionKind.DIRECT_RESPONSE, ActionKind.TOOLCHAIN_RETRIEVAL,
            ActionKind.TOOL_EXECUTION, ActionKind.TOOL_EXECUTION,
            ActionKind.DIRECT_RESPONSE])
        self.assertFalse(rec.trace[0].payload.final)
        self.assertTrue(rec.completed)
        self.assertEqual(rec.answer,
                         '60 to 100 beats per minute; record_status=saved')
        self.assertEqual(rec.executed_apis,
                         ['query_health_data', 'record_health_data'])
        self.assertEqual(rec.steps, 5)
        behavioral = self.g.edge('query_health_data', 'record_health_data')
        self.assertEqual(behavioral.n_succ, 1)

    def test_clarification(self):
        rec = self.run_task(1)
        self.assertEqual(self.kinds(rec), [
            ActionKind.TOOLCHAIN_RETRIEVAL, ActionKind.INTENT_CLARIFICATION,
            ActionKind.TOOL_EXECUTION, ActionKind.DIRECT_RESPONSE])
        self.assertEqual(rec.trace[1].payload.params, ('city',))
        self.assertEqual(rec.answer, 'temperature=18')

    def test_knowledge_only(self):
        rec = self.run_task(2)
        self.assertEqual(rec.steps, 1)
        self.assertEqual(rec.answer, '60 to 100 beats per minute')

    def test_step_limit(self):
        rec = self.run_task(0, AgentConfig(max_steps=2))
        self.assertFalse(rec.completed)
        self.assertIsNone(rec.answer)
        self.assertEqual(rec.steps, 2)

    def test_unanswered_clarification(self):
        task = self.world.tasks[1]
        rec = run_episode(task.query, self.g, self.policy, self.executor)
        self.assertTrue(rec.completed)
        self.assertEqual(rec.answer, 'Missing information: city')
        self.assertEqual(rec.steps, 3)

    def test_without_clarification(self):
        self.policy = RulePolicy(self.world.knowledge, clarify=False)
        rec = self.run_task(1)
        self.assertEqual(self.kinds(rec), [
            ActionKind.TOOLCHAIN_RETRIEVAL, ActionKind.DIRECT_RESPONSE])
        self.assertTrue(rec.completed)
        self.assertEqual(rec.answer, 'Missing information: city')

    def test_merged_retrieve_and_execute(self):
        rec = self.run_task(0, AgentConfig(merge_retrieve_exec=True))
        self.assertEqual(self.kinds(rec), [
            ActionKind.DIRECT_RESPONSE, ActionKind.TOOLCHAIN_RETRIEVAL,
            ActionKind.TOOL_EXECUTION, ActionKind.DIRECT_RESPONSE])
        self.assertEqual(rec.steps, 4)
        self.assertEqual(rec.executed_apis,
                         ['query_health_data', 'record_health_data'])
        obs = rec.observations[2]
        self.assertEqual(obs.kind, ObservationKind.TOOL_RESULT)
        self.assertEqual(obs.node_id, 'query_health_data')
        self.assertEqual(obs.step_index, 2)

    def test_merged_retrieval_waits_for_inputs(self):
        rec = self.run_task(1, AgentConfig(merge_retrieve_exec=True))
        self.assertEqual(self.kinds(rec), [
            ActionKind.TOOLCHAIN_RETRIEVAL, ActionKind.INTENT_CLARIFICATION,
            ActionKind.TOOL_EXECUTION, ActionKind.DIRECT_RESPONSE])
        self.assertIsNone(rec.observations[1].node_id)
        self.assertIn('get_weather', rec.observations[1].payload)
        self.assertEqual(rec.answer, 'temperature=18')

    def test_statistics_off(self):
        rec = self.run_task(0, AgentConfig(record_statistics=False))
        self.assertTrue(rec.completed)
        for api_id in rec.executed_apis:
            stats = self.g.api(api_id).stats
            self.assertEqual((stats.n_succ, stats.n_fail), (0, 0))

    def test_protocol_error_ends_episode(self):
        policy = MagicMock()
        policy.decide.return_value = 'not an action'
        rec = run_episode('hello', self.g, policy, self.executor)
        self.assertFalse(rec.completed)
        self.assertEqual(rec.steps, 0)
        self.assertIn('not an action', rec.error)


class TestRepairInEpisode(unittest.TestCase):
    query = 'current weather city=Paris ?temperature'

    def setUp(self):
        self.world = parse_world(WEATHER_WORLD)
        self.executor = WorldExecutor(self.world, down=['get_weather'])

    def test_substitution_repairs_plan(self):
        rec = run_episode(self.query, build_world_graph(self.world),
                          RulePolicy(), self.executor)
        self.assertTrue(rec.completed)
        self.assertEqual(rec.answer, 'temperature=18')
        self.assertEqual(rec.failed_apis, ['get_weather'])
        self.assertEqual(rec.executed_apis, ['get_weather_backup'])
        self.assertEqual(rec.repairs, ['substitution'])
        self.assertEqual(rec.steps, 4)

    def test_without_recombination_retrieves_again(self):
        rec = run_episode(self.query, build_world_graph(self.world),
                          RulePolicy(), self.executor,
                          AgentConfig(recombination=False))
        self.assertTrue(rec.completed)
        self.assertEqual(rec.repairs, [])
        self.assertEqual([a.kind for a in rec.trace], [
            ActionKind.TOOLCHAIN_RETRIEVAL, ActionKind.TOOL_EXECUTION,
            ActionKind.TOOLCHAIN_RETRIEVAL, ActionKind.TOOL_EXECUTION,
            ActionKind.DIRECT_RESPONSE])


class TestDeadlockInEpisode(unittest.TestCase):
    query = 'current weather city=Paris ?temperature'

    def setUp(self):
        # get_weather needs a key nobody can supply
        self.world = parse_world(
            WEATHER_WORLD + 'IN get_weather api_key "Secret key of the caller"\n')
        self.g = build_world_graph(self.world)

    def policy(self):
        """RulePolicy, except that the second step calls get_weather."""
        rule = RulePolicy()
        script = [None, Action(ActionKind.TOOL_EXECUTION,
                               ToolCall('get_weather'))]
        policy = MagicMock()
        policy.decide.side_effect = lambda ctx: (
            (script.pop(0) if script else None) or rule.decide(ctx))
        return policy

    def test_deadlock_repairs_plan(self):
        rec = run_episode(self.query, self.g, self.policy(),
                          WorldExecutor(self.world))
        self.assertTrue(rec.completed)
        self.assertEqual(rec.answer, 'temperature=18')
        self.assertEqual(rec.repairs, ['substitution'])
        self.assertEqual(rec.failed_apis, [])
        self.assertEqual(rec.executed_apis, ['get_weather_backup'])
        self.assertEqual(rec.steps, 4)
        blocked = rec.observations[2]
        self.assertIs(blocked.kind, ObservationKind.TOOL_FAILURE)
        self.assertEqual(blocked.node_id, 'get_weather')
        self.assertIn('unbound inputs: api_key', blocked.payload)
        self.assertEqual(self.g.api('get_weather').stats.n_fail, 0)

    def test_deadlock_without_recombination(self):
        rec = run_episode(self.query, self.g, self.policy(),
                          WorldExecutor(self.world),
                          AgentConfig(max_steps=2, recombination=False))
        self.assertFalse(rec.completed)
        self.assertIsNone(rec.error)
        self.assertEqual(rec.repairs, [])
        self.assertIs(rec.observations[-1].kind, ObservationKind.TOOL_FAILURE)
        self.assertEqual(rec.observations[-1].node_id, 'get_weather')


class TestPolicies(unittest.TestCase):
    def test_external_policy(self):
        session = MagicMock()
        session.post.return_value.json.return_value = {
            'action': 'call_api', 'target_api': 'get_weather',
            'params': {'city': 'Paris'}}
        policy = ExternalPolicy('http://llm.invalid/decide', session)
        action = policy.decide(context('weather?'))
        self.assertEqual(action.payload,
                         ToolCall('get_weather', (('city', 'Paris'),)))
        _, kwargs = session.post.call_args
        self.assertEqual(kwargs['json']['query'], 'weather?')
        self.assertEqual(kwargs['headers']['User-Agent'], 'toolnav')

    def test_external_policy_errors(self):
        session = MagicMock()
        session.post.side_effect = RequestsConnectionError('refused')
        with self.assertRaises(ProtocolError):
            ExternalPolicy('http://llm.invalid', session).decide(context())
        session = MagicMock()
        session.post.return_value.json.side_effect = ValueError('not json')
        with self.assertRaises(ProtocolError):
            ExternalPolicy('http://llm.invalid', session).decide(context())

    def test_projection_filters_unavailable_calls(self):
        g = build_world_graph(parse_world(WEATHER_WORLD))
        ghost = Action(ActionKind.TOOL_EXECUTION, ToolCall('ghost'))
        failed = Action(ActionKind.TOOL_EXECUTION, ToolCall('get_weather'))
        answer = Action(ActionKind.DIRECT_RESPONSE, DirectResponse('no'))
        base = MagicMock()
        base.candidates.return_value = [ghost, failed, answer]
        policy = ProjectedPolicy(base, admissible_actions(g))
        ctx = context(failed=frozenset(['get_weather']))
        self.assertEqual(policy.decide(ctx), answer)
        self.assertEqual(policy.decide(context()), failed)
        base.candidates.return_value = [ghost]
        with self.assertRaises(ProtocolError):
            policy.decide(ctx)

    def test_projection_keeps_rule_choice(self):
        knowledge = {'what is up': 'the sky'}
        policy = ProjectedPolicy(RulePolicy(knowledge),
                                 admissible_actions(
                                     build_world_graph(
                                         parse_world(WEATHER_WORLD))))
        action = policy.decide(context('what is up'))
        self.assertEqual(action.payload, DirectResponse('the sky', True))


if __name__ == '__main__':
    unittest.main()
