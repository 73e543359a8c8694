"""
Deployable WSGI entry point. The app is exposed as both `application` and
`api`, the names WSGI servers look for by default. Point ``TN_GRAPH`` at a
graph file and start it, for example with gunicorn_::

$ python3 toolnav_cli.py build --world fixtures/churn_world.txt --out tn.twnm
$ TN_GRAPH=tn.twnm gunicorn toolnav_wsgi

Single-process servers get a rotating logfile ('tn.log' plus one backup
'tn.log.1') in the working directory, so it must be writable. Multi-process
servers log to syslog.

Each process loads the graph once. Invocation reports only change that
process's in-memory snapshot.

.. _gunicorn: http://gunicorn.org/
"""
from toolnav_api import wsgi_app
from toolgraph import GraphStore, load_graph
import logging
import logging.handlers
import os


LOG_PATH = 'tn.log'
LOG_LEVEL = logging.INFO
LOG_MAX_BYTES = 100000
GRAPH_PATH = os.environ.get('TN_GRAPH', 'tn.twnm')

# syslog stamps its own time
FILE_FORMAT = "%(asctime)s toolnav[%(process)d] %(levelname)s %(name)s: %(message)s"
SYSLOG_FORMAT = "toolnav[%(process)d]: %(levelname)s %(name)s: %(message)s"

_app = None


def log_handler(is_multiprocess: bool) -> logging.Handler:
    """Syslog handler for multi-process servers, a rotating file otherwise."""
    if is_multiprocess:
        handler = logging.handlers.SysLogHandler(
            address='/dev/log')  # type: logging.Handler
        handler.setFormatter(logging.Formatter(SYSLOG_FORMAT))
    else:
        handler = logging.handlers.RotatingFileHandler(
            LOG_PATH, maxBytes=LOG_MAX_BYTES, backupCount=1)
        handler.setFormatter(logging.Formatter(FILE_FORMAT))
    handler.setLevel(LOG_LEVEL)
    return handler


def application(environ, start_response):
    """
    Build the app on the first request, once 'wsgi.multiprocess' tells us
    where to log, and reuse it (and its graph snapshot store) afterwards.
    """
    global _app
    if _app is None:
        root = logging.getLogger()
        root.setLevel(LOG_LEVEL)
        root.handlers = [log_handler(environ.get('wsgi.multiprocess', False))]
        graph = load_graph(GRAPH_PATH)
        logging.getLogger(__name__).info(
            "Serving {} (version {}, {} nodes)".format(GRAPH_PATH,
                                                       graph.version,
                                                       len(graph)))
        _app = wsgi_app(store=GraphStore(graph))
    return _app(environ, start_response)

api = application
