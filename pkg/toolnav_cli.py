"""
Command-line entry point.

Build a graph from a world file, search it, maintain it, and run the agent
against the simulator::

    $ python3 toolnav_cli.py build --world fixtures/churn_world.txt --out churn.twnm
    $ python3 toolnav_cli.py search ab --graph churn.twnm --target get_weather
    $ python3 toolnav_cli.py search heur --graph churn.twnm --targets get_weather,get_timezone --seed 3
    $ python3 toolnav_cli.py search unpruned --graph churn.twnm --targets get_weather
    $ python3 toolnav_cli.py evolve prune --graph churn.twnm --config evolution.cfg
    $ python3 toolnav_cli.py run --world fixtures/case_world.txt --graph case.twnm --policy rule --seed 0 --records out.txt
    $ python3 toolnav_cli.py experiment churn --world fixtures/churn_world.txt --graph churn.twnm --seed 0
    $ python3 toolnav_cli.py experiment ablation --world fixtures/case_world.txt --graph case.twnm
    $ python3 toolnav_cli.py metrics --records out.txt

Reports are printed as a table followed by ``key=value`` lines.
"""
import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from agent import AgentConfig, ExternalPolicy, RulePolicy
from evolution import (EvolutionConfig, EvolutionConfigError, apply_pruning,
                       latest_timestamp, propagate_weights, reactivate)
from harness import (ChurnConfig, ExperimentError, MetricsError,
                     WorldFileError, WorldProber, build_world_graph, evaluate,
                     format_records, load_records, load_world,
                     run_ablation, run_churn_experiment, run_world)
from toolgraph import (GraphError, load_graph, save_graph,
                       serialize_subgraph)
from toolsearch import (SEARCH_MODES, ConfigError, SearchConfig,
                        alpha_beta_search, heuristic_search, unpruned_search)


logger = logging.getLogger('toolnav')


def _search_config(args: argparse.Namespace) -> SearchConfig:
    cfg = SearchConfig.from_file(args.search_config) \
        if getattr(args, 'search_config', None) else SearchConfig()
    if getattr(args, 'seed', None) is not None:
        cfg.rng_seed = args.seed
    return cfg


def _evolution_config(args: argparse.Namespace) -> EvolutionConfig:
    return EvolutionConfig.from_file(args.config) if args.config \
        else EvolutionConfig()


def cmd_build(args: argparse.Namespace) -> int:
    g = build_world_graph(load_world(args.world), threshold=args.threshold)
    save_graph(g, args.out)
    print("{} nodes, {} edges -> {}".format(len(g), len(g.edges()), args.out))
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    g = load_graph(args.graph)
    cfg = _search_config(args)
    if args.algorithm == 'ab':
        plan = alpha_beta_search(g, args.target, args.param, cfg)
    else:
        targets = [t for t in args.targets.split(',') if t]
        search = heuristic_search if args.algorithm == 'heur' \
            else unpruned_search
        plan = search(g, targets, cfg)
    sys.stdout.write(serialize_subgraph(g, plan))
    print("score={:.6f} nodes={} edges={}".format(plan.score, len(plan.nodes),
                                                 len(plan.edges)))
    return 0


def cmd_evolve(args: argparse.Namespace) -> int:
    g = load_graph(args.graph)
    cfg = _evolution_config(args)
    now = latest_timestamp(g) if args.now is None else args.now
    if args.action == 'prune':
        _, ids = apply_pruning(g, cfg, now)
        print("pruned: {}".format(' '.join(ids) or '-'))
    elif args.action == 'reactivate':
        if not args.world:
            raise ConfigError("reactivate needs --world to probe availability")
        prober = WorldProber(load_world(args.world), args.phase)
        ids = reactivate(g, cfg, prober, np.random.default_rng(args.seed))
        print("restored: {}".format(' '.join(ids) or '-'))
    else:
        propagate_weights(g, cfg, now)
        print("propagated {} edges".format(len(g.edges())))
    save_graph(g, args.out or args.graph)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    world = load_world(args.world)
    g = load_graph(args.graph)
    if args.policy == 'external':
        if not args.url:
            raise ConfigError("--policy external needs --url")
        policy = ExternalPolicy(args.url)
    else:
        policy = RulePolicy(world.knowledge)
    cfg = AgentConfig(max_steps=args.max_steps, search_mode=args.search_mode,
                      search=_search_config(args))
    outcomes = run_world(world, g, policy, cfg, phase=args.phase)
    if args.records:
        with open(args.records, 'w', encoding='utf-8') as f:
            f.write(format_records(outcomes))
    if args.save_graph:
        save_graph(g, args.graph)
    report = evaluate(outcomes)
    print(report.to_table())
    print(report.to_keyvalue())
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    world = load_world(args.world)
    g = load_graph(args.graph)
    cfg = ChurnConfig(fail_frac=args.fail_frac, max_steps=args.max_steps,
                      search_mode=args.search_mode,
                      static_graph=args.static_graph,
                      evolution=_evolution_config(args),
                      search=_search_config(args))
    if args.name == 'ablation':
        reports = run_ablation(world, g, cfg)
        for name, report in reports:
            print("# {}".format(name))
            print(report.to_table())
        for name, report in reports:
            print(report.to_keyvalue(prefix=name + '.'))
        return 0
    on, off = run_churn_experiment(world, g, cfg, args.seed)
    for name, report in (('mechanisms on', on), ('mechanisms off', off)):
        print("# {}".format(name))
        print(report.to_table())
    print(on.to_keyvalue(prefix='on.'))
    print(off.to_keyvalue(prefix='off.'))
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    report = evaluate(load_records(args.records))
    print(report.to_table())
    print(report.to_keyvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Tool graph search, maintenance and agent evaluation")
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help="log INFO (-v) or DEBUG (-vv) to stderr")
    sub = parser.add_subparsers(dest='command', required=True)

    b = sub.add_parser('build', help="build a graph from a world file")
    b.add_argument('--world', required=True)
    b.add_argument('--out', required=True)
    b.add_argument('--threshold', type=float, default=0.8)
    b.set_defaults(func=cmd_build)

    s = sub.add_parser('search', help="search a toolchain subgraph")
    s.add_argument('algorithm', choices=['ab', 'heur', 'unpruned'])
    s.add_argument('--graph', required=True)
    s.add_argument('--target', help="target API (ab)")
    s.add_argument('--param', help="target parameter node (ab)")
    s.add_argument('--targets',
                   help="comma-separated target APIs (heur, unpruned)")
    s.add_argument('--seed', type=int)
    s.add_argument('--search-config', help="key=value SearchConfig file")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser('evolve', help="prune, reactivate or propagate")
    e.add_argument('action', choices=['prune', 'reactivate', 'propagate'])
    e.add_argument('--graph', required=True)
    e.add_argument('--config', help="key=value EvolutionConfig file")
    e.add_argument('--now', type=float,
                   help="window end in days (default: latest event)")
    e.add_argument('--world', help="world file answering reactivation probes")
    e.add_argument('--phase', type=int, default=1)
    e.add_argument('--seed', type=int, default=0)
    e.add_argument('--out', help="write the graph here instead of --graph")
    e.set_defaults(func=cmd_evolve)

    r = sub.add_parser('run', help="run every task of a world once")
    r.add_argument('--world', required=True)
    r.add_argument('--graph', required=True)
    r.add_argument('--policy', choices=['rule', 'external'], default='rule')
    r.add_argument('--url', help="completion service for --policy external")
    r.add_argument('--seed', type=int, default=0)
    r.add_argument('--max-steps', type=int, default=10)
    r.add_argument('--search-mode', choices=SEARCH_MODES, default='heur')
    r.add_argument('--search-config')
    r.add_argument('--phase', type=int, default=1)
    r.add_argument('--records', help="write EP records here")
    r.add_argument('--save-graph', action='store_true',
                   help="write updated statistics back to --graph")
    r.set_defaults(func=cmd_run)

    x = sub.add_parser('experiment', help="run an experiment")
    x.add_argument('name', choices=['churn', 'ablation'])
    x.add_argument('--world', required=True)
    x.add_argument('--graph', required=True)
    x.add_argument('--seed', type=int, default=0)
    x.add_argument('--fail-frac', type=float, default=0.1)
    x.add_argument('--max-steps', type=int, default=6)
    x.add_argument('--search-mode', choices=SEARCH_MODES, default='heur',
                   help="search of both churn arms")
    x.add_argument('--static-graph', action='store_true',
                   help="churn without invocation statistics")
    x.add_argument('--config', help="key=value EvolutionConfig file")
    x.add_argument('--search-config')
    x.set_defaults(func=cmd_experiment)

    m = sub.add_parser('metrics', help="metrics of a records file")
    m.add_argument('--records', required=True)
    m.set_defaults(func=cmd_metrics)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose,
                                                      logging.DEBUG)
    logging.basicConfig(level=level,
                        format="%(name)s: %(levelname)s:%(message)s")
    if args.command == 'search':
        if args.algorithm == 'ab' and not args.target:
            parser.error("search ab needs --target")
        if args.algorithm != 'ab' and not args.targets:
            parser.error("search {} needs --targets".format(args.algorithm))
    try:
        return args.func(args)
    except (GraphError, WorldFileError, ExperimentError, MetricsError,
            ConfigError, EvolutionConfigError, OSError) as e:
        logger.error(str(e))
        print("error: {}".format(e), file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
