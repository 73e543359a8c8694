"""
Edge weighting for the tool graph: node feature construction, the link
prediction objective as plain functions, and the pluggable `EdgeScorer` that
sets the search weight ``w_search`` of every edge.

No model is trained here. The objective functions (`ce_loss`, `margin_loss`,
`curriculum_weight`, `loss_breakdown`) are exposed so that a learned scorer can
be checked against them, and `evaluate_objective` reports them for the
current graph under the feature-based scorer.

Usage
-----

>>> from linkscore import StatisticalScorer, score_edges
>>> score_edges(g, StatisticalScorer())  # w_search := w_stat

Interface
---------
"""
import hashlib
import logging
import math
from typing import List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from toolgraph import ApiNode, Edge, Node, ToolGraph, tokenize


# Types:
class LossDomainError(ValueError): pass
class ScoreRangeError(ValueError): pass


logger = logging.getLogger(__name__)

DEFAULT_DIM = 64
# float64 sigmoid reaches 1.0 exactly above ~37
_SIG_HI = float(np.nextafter(1.0, 0.0))
_SIG_LO = float(np.nextafter(0.0, 1.0))


def sigmoid(x: float) -> float:
    if x >= 0:
        s = 1.0 / (1.0 + math.exp(-x))
    else:
        z = math.exp(x)
        s = z / (1.0 + z)
    return min(max(s, _SIG_LO), _SIG_HI)


class NodeFeatures(NamedTuple):
    embedding: np.ndarray
    succ_sig: float
    ratio_sig: float
    indeg_sig: float
    outdeg_sig: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.embedding,
                               [self.succ_sig, self.ratio_sig,
                                self.indeg_sig, self.outdeg_sig]])


class LossBreakdown(NamedTuple):
    ce: float
    margin: float
    mu_t: float
    total: float


class HashingEmbedder(object):
    """
    Signed feature hashing of word tokens into a `dim`-long vector with unit
    L2 norm. Text with no tokens embeds to the zero vector.
    """
    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise ValueError("Embedding dimension must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            h = int(hashlib.md5(tok.encode('utf-8')).hexdigest(), 16)
            sign = 1.0 if (h >> 64) & 1 else -1.0
            v[h % self.dim] += sign
        norm = np.linalg.norm(v)
        return v / norm if norm else v


def node_text(node: Node) -> str:
    if isinstance(node, ApiNode):
        return "{} {}".format(node.name, node.description)
    return "{} {}".format(node.canonical_name, node.description)


def fuse_features(node: Node, embedder: HashingEmbedder, deg_in: int = 0,
                  deg_out: int = 0) -> NodeFeatures:
    """
    Semantic and structural features of one node, in the order: description
    embedding, then sigmoid of success count, success ratio, in-degree and
    out-degree. Counts are not rescaled, so the count slots saturate above a
    handful of invocations.
    """
    return NodeFeatures(embedder.embed(node_text(node)),
                        sigmoid(node.stats.n_succ),
                        sigmoid(node.stats.success_ratio),
                        sigmoid(deg_in),
                        sigmoid(deg_out))


def graph_features(g: ToolGraph, node_id: str,
                   embedder: HashingEmbedder) -> NodeFeatures:
    return fuse_features(g.node(node_id), embedder, g.in_degree(node_id),
                         g.out_degree(node_id))


def feature_similarity(f_u, f_v) -> float:
    """Dot product of two fused feature vectors."""
    a = f_u.vector() if isinstance(f_u, NodeFeatures) else np.asarray(f_u)
    b = f_v.vector() if isinstance(f_v, NodeFeatures) else np.asarray(f_v)
    return float(np.dot(a, b))


def ce_loss(pairs: Sequence[Tuple[float, float]]) -> float:
    """
    Cross-entropy of predicted link probabilities against statistical
    weights used as soft labels.

    Args:
        pairs: (p_uv, w_stat) per edge, with p_uv strictly inside (0,1).

    Raises:
        LossDomainError: on an empty list or a probability of 0 or 1.
    """
    if not pairs:
        raise LossDomainError("No edges")
    total = 0.0
    for p, w in pairs:
        if not 0.0 < p < 1.0:
            raise LossDomainError("Probability must be in (0,1), got {}"
                                  .format(p))
        total += w * math.log(p) + (1.0 - w) * math.log(1.0 - p)
    return -total / len(pairs)


def adaptive_margin(m0: float, w_stat: float) -> float:
    if m0 <= 0:
        raise LossDomainError("Base margin must be positive")
    return m0 * (1.0 + sigmoid(w_stat))


def margin_loss(positives: Sequence[Tuple[float, float, Sequence[float]]]
                ) -> float:
    """
    Hinge ranking loss. For each (s_pos, margin, negatives), average
    ``max(0, margin - s_pos + s_neg)`` over its negatives; return the mean
    over positives.
    """
    if not positives:
        raise LossDomainError("No positive edges")
    per_pos = []
    for s_pos, m, negs in positives:
        if not negs:
            raise LossDomainError("Positive edge without negatives")
        per_pos.append(sum(max(0.0, m - s_pos + s) for s in negs) / len(negs))
    return sum(per_pos) / len(per_pos)


def curriculum_weight(mu0: float, gamma: float, t: int) -> float:
    if not 0.0 <= mu0 <= 1.0 or not 0.0 < gamma < 1.0 or t < 0:
        raise LossDomainError("Need mu0 in [0,1], gamma in (0,1), t >= 0")
    return mu0 * gamma ** t


def loss_breakdown(ce: float, margin: float, mu_t: float) -> LossBreakdown:
    return LossBreakdown(ce, margin, mu_t, mu_t * ce + (1.0 - mu_t) * margin)


def sample_negatives(g: ToolGraph, src: str, k: int,
                     rng: np.random.Generator) -> List[str]:
    """
    Up to `k` node ids that `src` has no edge to, of the same node kind as
    its true destinations.
    """
    succ = set(g.successors(src))
    if not succ:
        return []
    want_api = {g.is_api(d) for d in succ}
    pool = [n for n in sorted(g.nodes)
            if n != src and n not in succ and g.is_api(n) in want_api]
    if not pool:
        return []
    picks = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[i] for i in sorted(picks)]


class EdgeScorer(Protocol):
    def score(self, g: ToolGraph, edges: Sequence[Edge]) -> List[float]:
        ...


class StatisticalScorer(object):
    """The default scorer: search weight equals statistical weight."""
    def score(self, g: ToolGraph, edges: Sequence[Edge]) -> List[float]:
        return [e.w_stat for e in edges]


class ConstantScorer(object):
    def __init__(self, value: float) -> None:
        self.value = value

    def score(self, g: ToolGraph, edges: Sequence[Edge]) -> List[float]:
        return [self.value] * len(edges)


class FeatureScorer(object):
    """
    ``sigmoid(dot(f_u, f_v))`` over fused node features. Deterministic
    stand-in for a learned link predictor.
    """
    def __init__(self, embedder: Optional[HashingEmbedder] = None) -> None:
        self.embedder = embedder or HashingEmbedder()

    def probability(self, g: ToolGraph, src: str, dst: str) -> float:
        return sigmoid(feature_similarity(
            graph_features(g, src, self.embedder),
            graph_features(g, dst, self.embedder)))

    def score(self, g: ToolGraph, edges: Sequence[Edge]) -> List[float]:
        return [self.probability(g, e.src, e.dst) for e in edges]


def score_edges(g: ToolGraph, scorer: EdgeScorer) -> ToolGraph:
    """
    Set ``w_search`` of every edge from `scorer`, in one mutation batch.

    Raises:
        ScoreRangeError: if any score is outside [0,1] (or NaN); no edge is
            modified in that case.
    """
    edges = g.edges()
    values = list(scorer.score(g, edges))
    if len(values) != len(edges):
        raise ScoreRangeError("Scorer returned {} values for {} edges"
                              .format(len(values), len(edges)))
    for e, w in zip(edges, values):
        if not 0.0 <= w <= 1.0:
            raise ScoreRangeError("Score {} for edge {}->{} outside [0,1]"
                                  .format(w, e.src, e.dst))
    with g.batch():
        for e, w in zip(edges, values):
            e.w_search = float(w)
    logger.debug("Scored {} edges with {}".format(len(edges),
                                                 type(scorer).__name__))
    return g


def evaluate_objective(g: ToolGraph, epoch: int = 0, mu0: float = 1.0,
                       gamma: float = 0.9, m0: float = 0.5, k: int = 1,
                       seed: int = 0,
                       embedder: Optional[HashingEmbedder] = None
                       ) -> LossBreakdown:
    """
    The link-prediction objective of the current graph under `FeatureScorer`:
    cross-entropy against ``w_stat`` soft labels, plus the margin loss with
    `k` sampled negatives per edge, mixed by the curriculum weight at `epoch`.
    """
    edges = g.edges()
    if not edges:
        raise LossDomainError("Graph has no edges")
    scorer = FeatureScorer(embedder)
    rng = np.random.default_rng(seed)
    feats = {n: graph_features(g, n, scorer.embedder) for n in g.nodes}
    pairs = []
    positives = []
    for e in edges:
        s_pos = feature_similarity(feats[e.src], feats[e.dst])
        pairs.append((sigmoid(s_pos), e.w_stat))
        negs = sample_negatives(g, e.src, k, rng)
        if negs:
            positives.append((s_pos, adaptive_margin(m0, e.w_stat),
                              [feature_similarity(feats[e.src], feats[n])
                               for n in negs]))
    ce = ce_loss(pairs)
    margin = margin_loss(positives) if positives else 0.0
    return loss_breakdown(ce, margin, curriculum_weight(mu0, gamma, epoch))
