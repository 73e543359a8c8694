from typing import Any, Dict, Hashable, Iterable, Iterator, Optional, Tuple

node_t = Hashable
edge_t = Tuple[Hashable, Hashable]


class NetworkXException(Exception):
    ...


class NetworkXUnfeasible(NetworkXException):
    ...


class Graph:
    edges: Any

    def add_node(self, node_for_adding: node_t, **attr: Any) -> None:
        ...

    def add_nodes_from(self, nodes_for_adding: Iterable[node_t],
                       **attr: Any) -> None:
        ...

    def add_edge(self, u_of_edge: node_t, v_of_edge: node_t,
                 **attr: Any) -> None:
        ...

    def add_edges_from(self, ebunch_to_add: Iterable[edge_t],
                       **attr: Any) -> None:
        ...

    def has_edge(self, u: node_t, v: node_t) -> bool:
        ...


class DiGraph(Graph):
    def successors(self, n: node_t) -> Iterator[node_t]:
        ...

    def predecessors(self, n: node_t) -> Iterator[node_t]:
        ...

    def in_degree(self, nbunch: Optional[node_t]=None) -> Any:
        ...

    def out_degree(self, nbunch: Optional[node_t]=None) -> Any:
        ...


def closeness_centrality(G: Graph, u: Optional[node_t]=None,
                         distance: Optional[str]=None,
                         wf_improved: bool=True) -> Dict[node_t, float]:
    ...


def lexicographical_topological_sort(G: DiGraph,
                                     key: Any=None) -> Iterator[node_t]:
    ...
