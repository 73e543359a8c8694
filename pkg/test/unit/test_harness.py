import os
import tempfile
import unittest
from types import SimpleNamespace
from unittest.mock import patch
import harness
from harness import (ABLATION_ARMS, AblationArm, ChurnConfig,
                     ExperimentError, MetricsError, Outcome,
                     WorldExecutor, WorldFileError, WorldProber,
                     build_world_graph, compute_metrics, evaluate,
                     format_records, judge, load_records, load_world,
                     outage_set, parse_records, parse_world, run_ablation,
                     run_ablation_arm, run_churn_arm, run_churn_experiment,
                     run_world, simulate_call)
from toolsearch import ConfigError
from test.unit.test_agent import fixture


def episode(completed, steps):
    return SimpleNamespace(completed=completed, steps=steps)


class TestWorldFiles(unittest.TestCase):
    def test_case_world(self):
        world = load_world(fixture('case_world.txt'))
        self.assertEqual(sorted(world.apis), ['get_weather', 'query_health_data',
                                              'record_health_data'])
        self.assertEqual(len(world.tasks), 3)
        self.assertEqual(world.tasks[1].facts, (('city', 'Paris'),))
        self.assertEqual(world.tasks[0].difficulty, 'Medium')
        self.assertIn('what is a healthy resting heart rate', world.knowledge)
        rows = world.apis['record_health_data'].rows
        self.assertIsNone(rows[-1].match)

    def test_churn_world(self):
        world = load_world(fixture('churn_world.txt'))
        self.assertEqual(len(world.apis), 24)
        self.assertEqual(len(world.tasks), 50)
        self.assertEqual(world.outage, ['get_weather', 'get_exchange_rate'])

    def test_errors_carry_line_numbers(self):
        api = 'API a a "An api"\n'
        cases = [
            ('\nBOGUS x\n', 2),
            ('API a a\n', 1),
            ('IN b x "desc"\n', 1),
            (api + 'API a a "again"\n', 2),
            (api + 'CALL a x=1 => y=2\n', 2),
            (api + 'CALL a x1 -> y=2\n', 2),
            (api + 'DOWN a 3\n', 2),
            ('TASK Tricky "q" "a"\n', 1),
            ('FACT city Paris\n', 1),
            (api + 'KNOW "unbalanced\n', 2),
        ]
        for text, lineno in cases:
            with self.assertRaises(WorldFileError) as cm:
                parse_world(text)
            self.assertEqual(cm.exception.lineno, lineno, text)

    def test_graph(self):
        g = build_world_graph(load_world(fixture('case_world.txt')))
        self.assertEqual(sorted(g.producers_of('p:heart_rate')),
                         ['query_health_data'])
        self.assertIn('record_health_data', g.consumers_of('p:user_id'))


class TestSimulator(unittest.TestCase):
    def setUp(self):
        self.world = parse_world(
            'API rec rec "Store a value"\n'
            'IN rec user_id "User"\n'
            'OUT rec status "Outcome"\n'
            'CALL rec user_id=u1 -> status=saved\n'
            'API echo echo "Echo a value"\n'
            'IN echo text "Text"\n'
            'OUT echo text_out "Echoed text"\n'
            'DOWN echo 2\n')

    def test_responses(self):
        w = self.world
        self.assertEqual(simulate_call(w, 'nope', {})['status'], 404)
        r = simulate_call(w, 'rec', {})
        self.assertEqual((r['status'], r['type']), (400, 'error'))
        self.assertIn('user_id', r['data'])
        self.assertEqual(simulate_call(w, 'rec', {'user_id': 'u1'}),
                         {'status': 200, 'data': {'status': 'saved'},
                          'type': 'success'})
        self.assertEqual(simulate_call(w, 'echo', {'text': 'hi'}),
                         {'status': 200, 'data': {'text_out': '<text_out>'},
                          'type': 'mock'})

    def test_unavailable(self):
        w = self.world
        self.assertEqual(simulate_call(w, 'echo', {'text': 'x'}, 2)['status'],
                         503)
        r = WorldExecutor(w, 1, ['rec'])('rec', {'user_id': 'u1'})
        self.assertEqual((r['status'], r['type']), (503, 'error'))
        self.assertTrue(WorldProber(w, 1)('echo'))
        self.assertFalse(WorldProber(w, 2)('echo'))
        self.assertFalse(WorldProber(w, 1, ['rec'])('rec'))
        self.assertFalse(WorldProber(w)('nope'))

    def test_first_matching_row_wins(self):
        world = load_world(fixture('case_world.txt'))
        r = simulate_call(world, 'record_health_data',
                          {'user_id': 'u9', 'heart_rate': '80'})
        self.assertEqual(r['data'], {'record_status': 'rejected'})


class TestJudge(unittest.TestCase):
    def test_normalization(self):
        self.assertTrue(judge('Paris.', 'paris'))
        self.assertTrue(judge('  60 to  100 beats ', '60 to 100 beats'))
        self.assertTrue(judge('b=2, a=1', 'a=1,b=2'))
        self.assertTrue(judge('seven; temperature = 18',
                              'Seven; temperature=18'))

    def test_mismatch(self):
        self.assertFalse(judge('paris', 'paris; temperature=18'))
        self.assertFalse(judge('paris; london', 'paris'))
        self.assertFalse(judge('temperature=19', 'temperature=18'))
        self.assertFalse(judge(None, 'paris'))
        self.assertFalse(judge('', ''))


class TestMetrics(unittest.TestCase):
    def test_example(self):
        records = [episode(True, 2), episode(True, 3), episode(True, 4),
                   episode(False, 5)]
        report = compute_metrics(records, [True, False, True, True])
        self.assertEqual((report.total, report.completed, report.successful),
                         (4, 3, 2))
        self.assertEqual((report.tcr, report.tsr), (75.0, 50.0))
        self.assertEqual(report.mean_steps, 3.0)

    def test_no_success(self):
        report = compute_metrics([episode(False, 10)], [False])
        self.assertIsNone(report.mean_steps)
        self.assertIn('steps=-', report.to_keyvalue())

    def test_errors(self):
        with self.assertRaises(MetricsError):
            compute_metrics([], [])
        with self.assertRaises(MetricsError):
            compute_metrics([episode(True, 1)], [True, True])
        with self.assertRaises(MetricsError):
            compute_metrics([episode(True, 1)], [True], ['Easy', 'Hard'])

    def test_breakdown(self):
        outcomes = [Outcome('Easy', True, 2, 'a', 'a'),
                    Outcome('Hard', True, 4, 'b', 'c'),
                    Outcome('Hard', True, 6, 'd', 'd')]
        report = evaluate(outcomes)
        self.assertEqual(sorted(report.by_difficulty), ['Easy', 'Hard'])
        self.assertEqual(report.by_difficulty['Hard'].tsr, 50.0)
        self.assertEqual(report.by_difficulty['Hard'].mean_steps, 6.0)
        table = report.to_table().splitlines()
        self.assertEqual(table[0].split(),
                         ['difficulty', 'tasks', 'TCR', 'TSR', 'Steps'])
        self.assertEqual(table[1].split(), ['all', '3', '100.00', '66.67',
                                            '4.00'])
        kv = report.to_keyvalue('on.').splitlines()
        self.assertIn('on.tsr=66.67', kv)
        self.assertIn('on.hard.steps=6.00', kv)


class TestRecords(unittest.TestCase):
    def test_round_trip(self):
        outcomes = [Outcome('Easy', True, 2, 'temperature=18',
                            'temperature=18'),
                    Outcome('Hard', False, 6, None, "it's 60 to 100")]
        text = format_records(outcomes)
        self.assertTrue(text.startswith('EP Easy completed=1 steps=2 '))
        self.assertEqual(parse_records(text), outcomes)

    def test_load_and_errors(self):
        fd, path = tempfile.mkstemp()
        with os.fdopen(fd, 'w') as f:
            f.write("# two episodes\nEP Easy completed=1 steps=1 a a\n"
                    "EP Medium completed=0 steps=3 '' b\n")
        try:
            report = evaluate(load_records(path))
        finally:
            os.remove(path)
        self.assertEqual((report.tcr, report.tsr), (50.0, 50.0))
        for text, lineno in (('EP Easy completed=1 steps=1 a\n', 1),
                             ('\nEP Easy completed=2 steps=1 a a\n', 2),
                             ('EP Weird completed=1 steps=1 a a\n', 1),
                             ('EP Easy completed=1 steps=x a a\n', 1)):
            with self.assertRaises(WorldFileError) as cm:
                parse_records(text)
            self.assertEqual(cm.exception.lineno, lineno)


class TestRuns(unittest.TestCase):
    def test_run_world(self):
        world = load_world(fixture('case_world.txt'))
        g = build_world_graph(world)
        report = evaluate(run_world(world, g))
        self.assertEqual(report.tsr, 100.0)
        self.assertAlmostEqual(report.mean_steps, (5 + 4 + 1) / 3)
        self.assertEqual(g.api('record_health_data').stats.n_succ, 1)

    def test_outage_set(self):
        churn = load_world(fixture('churn_world.txt'))
        self.assertEqual(outage_set(churn, 0.1, 0),
                         frozenset(['get_weather', 'get_exchange_rate']))
        self.assertEqual(outage_set(churn, 0.0, 0), frozenset())
        churn.outage = []
        sampled = outage_set(churn, 0.1, 7)
        self.assertEqual(len(sampled), 2)
        self.assertEqual(sampled, outage_set(churn, 0.1, 7))
        self.assertTrue(sampled <= set(churn.apis))

    def test_config_validation(self):
        for bad in ({'fail_frac': 1.5}, {'max_steps': 0},
                    {'hours_per_query': 0}, {'search_mode': 'dfs'}):
            with self.assertRaises(ConfigError):
                ChurnConfig(**bad)

    def test_small_worlds_rejected(self):
        world = load_world(fixture('case_world.txt'))
        with self.assertRaises(ExperimentError):
            run_churn_experiment(world, build_world_graph(world))
        churn = load_world(fixture('churn_world.txt'))
        churn.tasks = []
        with self.assertRaises(ExperimentError):
            run_churn_experiment(churn, build_world_graph(churn))


class TestChurn(unittest.TestCase):
    def setUp(self):
        self.world = load_world(fixture('churn_world.txt'))
        self.g = build_world_graph(self.world)

    def test_mechanisms_help_under_outage(self):
        version = self.g.version
        on, off = run_churn_experiment(self.world, self.g, ChurnConfig(), 0)
        self.assertEqual((on.total, off.total), (100, 100))
        self.assertGreater(on.tsr, off.tsr)
        self.assertLessEqual(on.mean_steps, off.mean_steps)
        self.assertGreater(on.by_difficulty['Hard'].tsr,
                           off.by_difficulty['Hard'].tsr)
        self.assertEqual(self.g.version, version)

    def test_arms_agree_without_outage(self):
        on, off = run_churn_experiment(self.world, self.g,
                                       ChurnConfig(fail_frac=0.0), 0)
        self.assertEqual(on.to_keyvalue(), off.to_keyvalue())
        self.assertEqual(on.tsr, 100.0)

    def test_static_graph_arm(self):
        self.world.tasks = self.world.tasks[:4]
        cfg = ChurnConfig(static_graph=True)
        with patch('harness.score_edges') as scorer, \
                patch('harness.run_episode', wraps=harness.run_episode) as ep:
            outcomes = run_churn_arm(self.world, self.g, cfg, 0, True)
        self.assertEqual(len(outcomes), 8)
        scorer.assert_not_called()
        for call in ep.call_args_list:
            self.assertFalse(call[0][4].record_statistics)

    def test_config_switches(self):
        cfg = ChurnConfig(search_mode='unpruned', static_graph=True)
        self.assertTrue(cfg.static_graph)
        self.assertFalse(ChurnConfig().static_graph)


class TestAblation(unittest.TestCase):
    def setUp(self):
        self.world = load_world(fixture('case_world.txt'))
        self.g = build_world_graph(self.world)

    def test_every_arm_reported(self):
        version = self.g.version
        reports = run_ablation(self.world, self.g)
        self.assertEqual([name for name, _ in reports],
                         [arm.name for arm in ABLATION_ARMS])
        for name, report in reports:
            self.assertEqual(report.total, 3, name)
        self.assertEqual(self.g.version, version)
        self.assertEqual(self.g.api('get_weather').stats.n_succ, 0)

    def test_arm_outcomes(self):
        reports = dict(run_ablation(self.world, self.g))
        full = reports['full']
        self.assertEqual(full.tsr, 100.0)
        self.assertAlmostEqual(full.mean_steps, (5 + 4 + 1) / 3)
        self.assertEqual(reports['unpruned'].tsr, 100.0)
        static = reports['static_graph']
        self.assertEqual((static.tsr, static.mean_steps),
                         (full.tsr, full.mean_steps))
        no_clarify = reports['no_clarify']
        self.assertEqual(no_clarify.tcr, 100.0)
        self.assertAlmostEqual(no_clarify.tsr, 200 / 3)
        self.assertEqual(no_clarify.by_difficulty['Easy'].successful, 1)
        merged = reports['merged']
        self.assertEqual(merged.tsr, 100.0)
        self.assertAlmostEqual(merged.mean_steps, (4 + 4 + 1) / 3)
        self.assertLess(merged.mean_steps, full.mean_steps)
        self.assertGreaterEqual(reports['alpha_beta'].successful, 1)

    def test_static_arm_records_nothing(self):
        arm = AblationArm('static', static_graph=True)
        with patch('harness.score_edges') as scorer, \
                patch('harness.run_episode', wraps=harness.run_episode) as ep:
            outcomes = run_ablation_arm(self.world, self.g, arm)
        self.assertTrue(all(o.success for o in outcomes))
        scorer.assert_not_called()
        self.assertEqual(ep.call_count, 3)
        self.assertFalse(ep.call_args[0][4].record_statistics)
        with patch('harness.score_edges') as scorer:
            run_ablation_arm(self.world, self.g, AblationArm('full'))
        self.assertEqual(scorer.call_count, 3)

    def test_errors(self):
        with self.assertRaises(ExperimentError):
            run_ablation(self.world, self.g,
                         arms=[AblationArm('a'), AblationArm('a')])
        with self.assertRaises(ConfigError):
            run_ablation(self.world, self.g, arms=[AblationArm('a', 'dfs')])
        self.world.tasks = []
        with self.assertRaises(ExperimentError):
            run_ablation(self.world, self.g)


if __name__ == '__main__':
    unittest.main()
