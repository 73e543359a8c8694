"""
ToolNav is a WSGI micro web service which answers toolchain retrieval
requests against a tool graph and accepts invocation reports that keep the
graph's statistics current.

Calling `wsgi_app()` returns a WSGI-compliant callable which can be hosted by
any WSGI server.

See `toolnav_wsgi` for an example webservice which can be used as-is or copied
and modified.

Usage
-----

ToolNav exposes four endpoints:

- /retrieve
- /search
- /invocations
- /status

GET /retrieve ranks the graph's APIs against a request and returns the
merged, completed toolchain subgraph. Its query string can contain:

q
    Free text describing the task.

in
    Canonical name of a parameter the caller already knows. Repeat for more.

out
    Canonical name of a parameter the caller wants. Repeat for more.

mode
    ``heur`` (default), ``ab`` or ``unpruned``.

seed
    Seed for the heuristic search (default 0).

GET /search runs one search from explicit targets: ``target`` (repeatable;
``ab`` uses the first), ``param`` (``ab`` only), ``mode`` and ``seed``.

POST /invocations takes a JSON object, or a list of them, of the form
``{"api": id, "success": bool, "timestamp": days, "upstream": [ids]}`` and
records them in one new graph snapshot. Searches already running keep the
snapshot they started with.

GET /status returns the snapshot version and node counts.

Responses are JSON. Names in ``in``/``out`` that match no parameter are
ignored and reported in a custom HTTP header ('X-tn-errors') as a url-encoded
JSON hash. Example, assuming the app is running on port 8000::

>>> curl 'localhost:8000/retrieve?q=weather&in=user_id&out=temperature'


Interface
---------
"""
from agent import AgentConfig, EmptyPlanError, ProtocolError, RetrievalRequest
from agent import retrieve_toolchain
from toolgraph import (GraphError, GraphStore, SubgraphPlan, ToolGraph,
                       UnknownNodeError, load_graph,
                       record_invocation, serialize_subgraph)
from toolsearch import (SEARCH_MODES, ConfigError, UnknownTargetError,
                        alpha_beta_search, heuristic_search, unpruned_search)
from dataclasses import replace
import falcon
from typing import Any, Dict, List, NamedTuple, Optional
import json
import logging
import urllib
import urllib.parse

logger = logging.getLogger(__name__)

ParsedQS = NamedTuple('ParsedQS', [('q', str),
                                   ('known', List[str]),
                                   ('wanted', List[str]),
                                   ('targets', List[str]),
                                   ('param', Optional[str]),
                                   ('mode', str),
                                   ('seed', int)])


def _as_list(value: Any) -> List[str]:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


def parse_qs(req: falcon.Request) -> ParsedQS:
    """
    Get the retrieval and search fields from the request query string.

    :param req: the Falcon request from which to parse the query string.
    """
    qs = falcon.uri.parse_query_string(req.query_string)
    q = ' '.join(_as_list(qs.get('q')))
    mode = qs.get('mode', 'heur')
    if mode not in SEARCH_MODES:
        raise falcon.HTTPBadRequest(
            title='Bad mode',
            description="mode must be one of {}".format(
                ", ".join(SEARCH_MODES)))
    try:
        seed = int(qs.get('seed', 0))
    except (TypeError, ValueError):
        raise falcon.HTTPBadRequest(title='Bad seed',
                                    description="seed must be an integer")
    param = qs.get('param')
    return ParsedQS(q, _as_list(qs.get('in')), _as_list(qs.get('out')),
                    _as_list(qs.get('target')),
                    param if isinstance(param, str) else None, mode, seed)


def plan_to_json(g: ToolGraph, plan: SubgraphPlan) -> Dict[str, Any]:
    return {
        'targets': list(plan.targets),
        'nodes': sorted(plan.nodes),
        'edges': sorted([s, d] for s, d in plan.edges),
        'score': plan.score,
        'tree': serialize_subgraph(g, plan),
    }


def _report_errors(resp: falcon.Response, errors: Dict[str, str]) -> None:
    if errors:
        json_err = urllib.parse.quote(json.dumps(errors))
        resp.append_header('X-tn-errors', json_err)


class _GraphResource:
    def __init__(self, store: GraphStore, cfg: AgentConfig) -> None:
        super().__init__()
        self.store = store
        self.cfg = cfg

    def config(self, mode: str, seed: int) -> AgentConfig:
        search = replace(self.cfg.search, rng_seed=seed)
        return AgentConfig(max_steps=self.cfg.max_steps, search_mode=mode,
                           recombination=self.cfg.recombination, search=search)


class Retrieve(_GraphResource):
    """
    Handles GET /retrieve. Unknown parameter names are dropped and reported in
    the 'X-tn-errors' header.
    """
    def on_get(self, req: falcon.Request, resp: falcon.Response) -> None:
        parsed = parse_qs(req)
        g = self.store.current
        names = {g.param(p).canonical_name for p in g.param_ids()}
        errors = {n: "unknown parameter" for n in parsed.known + parsed.wanted
                  if n not in names}
        known = frozenset(n for n in parsed.known if n in names)
        wanted = frozenset(n for n in parsed.wanted if n in names) - known
        if not parsed.q and not wanted:
            raise falcon.HTTPBadRequest(title='Empty request',
                                        description="Give q or out")
        try:
            request = RetrievalRequest(known_inputs=known,
                                       desired_outputs=wanted,
                                       description=parsed.q)
            plan, _ = retrieve_toolchain(request, g,
                                         cfg=self.config(parsed.mode,
                                                         parsed.seed))
        except EmptyPlanError as e:
            raise falcon.HTTPNotFound(title='No toolchain', description=str(e))
        except (ProtocolError, ConfigError) as e:
            raise falcon.HTTPBadRequest(title='Bad request',
                                        description=str(e))

        _report_errors(resp, errors)
        resp.text = json.dumps(plan_to_json(g, plan))
        resp.content_type = "application/json"
        resp.status = falcon.HTTP_200


class Search(_GraphResource):
    """Handles GET /search from explicit target APIs."""
    def on_get(self, req: falcon.Request, resp: falcon.Response) -> None:
        parsed = parse_qs(req)
        if not parsed.targets:
            raise falcon.HTTPBadRequest(title='No target',
                                        description="Give at least one target")
        g = self.store.current
        cfg = self.config(parsed.mode, parsed.seed).search
        try:
            if parsed.mode == 'ab':
                plan = alpha_beta_search(g, parsed.targets[0], parsed.param,
                                         cfg)
            elif parsed.mode == 'unpruned':
                plan = unpruned_search(g, parsed.targets, cfg)
            else:
                plan = heuristic_search(g, parsed.targets, cfg)
        except (UnknownTargetError, UnknownNodeError) as e:
            raise falcon.HTTPNotFound(title='Unknown node', description=str(e))
        except GraphError as e:
            raise falcon.HTTPBadRequest(title='Search failed',
                                        description=str(e))

        resp.text = json.dumps(plan_to_json(g, plan))
        resp.content_type = "application/json"
        resp.status = falcon.HTTP_200


def _parse_invocation(rec: Any) -> Dict[str, Any]:
    if not isinstance(rec, dict) or not isinstance(rec.get('api'), str):
        raise ValueError("Each invocation needs an 'api' id")
    success = rec.get('success')
    if not isinstance(success, bool):
        raise ValueError("'success' must be true or false")
    upstream = rec.get('upstream', [])
    if not isinstance(upstream, list) or \
            not all(isinstance(u, str) for u in upstream):
        raise ValueError("'upstream' must be a list of ids")
    return {'api_id': rec['api'], 'success': success,
            'timestamp': float(rec.get('timestamp', 0.0)),
            'upstream': upstream}


class Invocations:
    """
    Handles POST /invocations. All records in one request land in a single
    new snapshot, or none do.
    """
    def __init__(self, store: GraphStore) -> None:
        super().__init__()
        self.store = store

    def on_post(self, req: falcon.Request, resp: falcon.Response) -> None:
        try:
            body = json.loads(req.bounded_stream.read().decode('utf-8'))
            records = [_parse_invocation(r) for r in _as_list(body)]
        except (ValueError, TypeError) as e:
            raise falcon.HTTPBadRequest(title='Bad invocation',
                                        description=str(e))

        def mutate(g: ToolGraph) -> int:
            for r in records:
                record_invocation(g, **r)
            return len(records)

        try:
            n = self.store.apply(mutate)
        except UnknownNodeError as e:
            raise falcon.HTTPNotFound(title='Unknown node', description=str(e))
        except GraphError as e:
            raise falcon.HTTPBadRequest(title='Bad invocation',
                                        description=str(e))
        logger.info("Recorded {} invocations".format(n))
        resp.text = json.dumps({'recorded': n,
                                'version': self.store.current.version})
        resp.content_type = "application/json"
        resp.status = falcon.HTTP_200


class Status:
    def __init__(self, store: GraphStore) -> None:
        super().__init__()
        self.store = store

    def on_get(self, req: falcon.Request, resp: falcon.Response) -> None:
        g = self.store.current
        apis = g.api_ids()
        resp.text = json.dumps({
            'version': g.version,
            'apis': len(apis),
            'active_apis': sum(1 for a in apis if g.is_active(a)),
            'params': len(g.param_ids()),
            'edges': len(g.edges()),
        })
        resp.content_type = "application/json"
        resp.status = falcon.HTTP_200


def wsgi_app(graph_path: Optional[str] = None,
             store: Optional[GraphStore] = None,
             cfg: Optional[AgentConfig] = None) -> falcon.App:
    """
    Creates the Falcon app object (a WSGI-compliant callable)

    :param graph_path: graph file to serve (ignored when `store` is given)
    :param store: an existing snapshot store to serve and update
    :param cfg: agent and search defaults; `mode` and `seed` override them
        per request
    """
    if store is None:
        store = GraphStore(load_graph(graph_path) if graph_path else None)
    cfg = cfg or AgentConfig()

    app = falcon.App()
    app.add_route('/retrieve', Retrieve(store, cfg))
    app.add_route('/search', Search(store, cfg))
    app.add_route('/invocations', Invocations(store))
    app.add_route('/status', Status(store))
    return app
