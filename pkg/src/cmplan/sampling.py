"""Region-sequence prediction and mixture sampling.

A :class:`SequenceScorer` plays the role of an autoregressive model over
codebook indices: given the prefix predicted so far it returns a probability
vector over the ``N`` regions plus the goal token (index ``N``). Beam search
picks the most probable goal-terminated sequence, and the decoded regions of
that sequence form a uniform-weight Gaussian mixture used for sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .constraints import ConstraintSet
from .errors import NoSequenceError, NumericalError
from .regions import Codebook, GaussianParams, OptimizerParams, update_distribution


class SequenceScorer:
    """Interface for next-index distributions.

    Subclasses set ``num_tokens`` (regions + 1) and implement :meth:`step`.
    The goal token is always the last index.
    """

    num_tokens: int

    @property
    def goal_index(self) -> int:
        return self.num_tokens - 1

    def step(self, prefix: Tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class RegionSequence:
    indices: Tuple[int, ...]
    goal_index: int
    log_prob: float = 0.0

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("region sequence is empty")
        if idx[-1] != self.goal_index:
            raise ValueError("region sequence must end with the goal token")
        if self.goal_index in idx[:-1]:
            raise ValueError("goal token may only appear at the end")

    @property
    def regions(self) -> Tuple[int, ...]:
        return self.indices[:-1]

    def __len__(self):
        return len(self.indices)


def _rank_key(item):
    logp, seq = item[0], item[1]
    return (-logp, len(seq), seq)


def beam_search(scorer: SequenceScorer, beam_width: int = 4, max_len: int = 24) -> RegionSequence:
    """Most probable goal-terminated index sequence found with beam width ``beam_width``.

    Scores are summed log-probabilities. Finished hypotheses stay in the pool
    and compete with live ones for the ``beam_width`` slots; the best finished
    hypothesis that ever held a slot is returned, so a width of 1 reduces to
    greedy decoding. Ties go to the shorter sequence, then to the
    lexicographically smaller one.
    """
    if beam_width < 1 or max_len < 1:
        raise ValueError("beam_width and max_len must be >= 1")
    goal = scorer.goal_index
    live: List[Tuple[float, Tuple[int, ...]]] = [(0.0, ())]
    finished: List[Tuple[float, Tuple[int, ...]]] = []
    best: Optional[Tuple[float, Tuple[int, ...]]] = None
    for _ in range(max_len):
        candidates = []
        for logp, seq in live:
            probs = np.asarray(scorer.step(seq), dtype=float)
            for tok in np.flatnonzero(probs > 0):
                candidates.append((logp + math.log(probs[tok]), seq + (int(tok),)))
        pool = sorted(candidates + finished, key=_rank_key)[:beam_width]
        finished = [c for c in pool if c[1][-1] == goal]
        live = [c for c in pool if c[1][-1] != goal]
        if finished and (best is None or _rank_key(finished[0]) < _rank_key(best)):
            best = finished[0]
        if not live:
            break
    if best is None:
        raise NoSequenceError(f"no beam reached the goal token within {max_len} steps")
    return RegionSequence(best[1], goal, best[0])


class HeuristicScorer(SequenceScorer):
    """Scores regions by how well they continue the straight start-goal segment.

    For a prefix ending in region ``r`` (or the start when empty), let ``t`` be
    the projection parameter of its mean on the segment. Candidate regions are
    those not yet used whose parameter lies beyond ``t``; a candidate costs its
    distance to the segment plus its distance along it from ``t``. The goal
    token costs the distance from the last mean to ``q_g``, so its probability
    tends to one as the sequence arrives at the goal. Step probabilities are a
    softmax of ``-cost / temperature``.
    """

    def __init__(self, codebook: Codebook, q_s, q_g, temperature: float = 0.1):
        if not temperature > 0:
            raise ValueError("temperature must be > 0")
        self.codebook = codebook
        self.q_s = np.asarray(q_s, dtype=float)
        self.q_g = np.asarray(q_g, dtype=float)
        self.temperature = temperature
        self.num_tokens = codebook.size + 1
        self.means = codebook.means()
        seg = self.q_g - self.q_s
        self.length = float(np.linalg.norm(seg))
        if self.length > 0:
            s = (self.means - self.q_s) @ seg / self.length ** 2
        else:
            s = np.zeros(codebook.size)
        self.param = s
        foot = self.q_s + np.clip(s, 0.0, 1.0)[:, None] * seg
        self.offset = np.linalg.norm(self.means - foot, axis=1)

    def step(self, prefix):
        prefix = tuple(prefix)
        N = self.codebook.size
        if prefix:
            last = prefix[-1]
            t = self.param[last]
            goal_cost = float(np.linalg.norm(self.means[last] - self.q_g))
            ahead = self.param > t
            ahead[list(prefix)] = False
        else:
            t = 0.0
            goal_cost = self.length
            ahead = np.ones(N, dtype=bool)
        costs = np.full(N + 1, np.inf)
        costs[:N][ahead] = self.offset[ahead] + self.length * np.abs(self.param[ahead] - t)
        costs[N] = goal_cost
        logits = -costs / self.temperature
        probs = np.exp(logits - logsumexp(logits))
        return probs / probs.sum()


def heuristic_scorer(codebook: Codebook, q_s, q_g, temperature: float = 0.1) -> HeuristicScorer:
    return HeuristicScorer(codebook, q_s, q_g, temperature)


class RoadmapScorer(SequenceScorer):
    """Follows shortest routes through a neighbourhood graph of region means.

    Nodes are the region means plus ``q_s`` and ``q_g``; two nodes are joined
    when they lie within ``radius`` of each other. The default radius is the
    smallest one that still connects start to goal, times ``slack``. A
    candidate ``i`` after node ``p`` costs ``d(p, i) + h(i) - h(p)``, where
    ``h`` is the graph distance to the goal. That cost is zero on a shortest route
    and positive for detours. Only unused neighbours of ``p`` are eligible,
    and the goal token only once ``q_g`` is a neighbour. A node with no
    eligible move puts all mass on the goal token.
    """

    def __init__(self, codebook: Codebook, q_s, q_g, temperature: float = 0.1,
                 radius: Optional[float] = None, slack: float = 1.1):
        from scipy.sparse.csgraph import dijkstra, minimum_spanning_tree
        from scipy.spatial.distance import cdist

        if not temperature > 0:
            raise ValueError("temperature must be > 0")
        self.codebook = codebook
        self.temperature = temperature
        self.num_tokens = codebook.size + 1
        N = codebook.size
        # node order: regions 0..N-1, goal N, start N+1
        nodes = np.vstack([codebook.means(), np.asarray(q_g, float)[None], np.asarray(q_s, float)[None]])
        dist = cdist(nodes, nodes)
        if radius is None:
            # bottleneck edge on the minimax start-goal route lies on the spanning tree
            mst = minimum_spanning_tree(dist + 1e-12).toarray()
            mst = np.maximum(mst, mst.T)
            _, pred = dijkstra(mst, indices=N + 1, return_predecessors=True)
            bottleneck, v = 0.0, N
            while v != N + 1 and pred[v] >= 0:
                bottleneck = max(bottleneck, dist[v, pred[v]])
                v = pred[v]
            radius = slack * bottleneck
        self.radius = float(radius)
        self.adjacent = dist <= self.radius + 1e-12
        np.fill_diagonal(self.adjacent, False)
        weights = np.where(self.adjacent, dist + 1e-12, 0.0)
        self.h = dijkstra(weights, indices=N)
        self.dist = dist

    def step(self, prefix):
        prefix = tuple(prefix)
        N = self.codebook.size
        p = prefix[-1] if prefix else N + 1
        costs = np.full(N + 1, np.inf)
        ok = self.adjacent[p, :N + 1].copy()
        ok[list(prefix)] = False
        ok[:N] &= np.isfinite(self.h[:N])
        costs[ok] = self.dist[p, :N + 1][ok] + self.h[:N + 1][ok] - self.h[p]
        if not np.isfinite(costs).any():
            costs[N] = 0.0
        logits = -costs / self.temperature
        probs = np.exp(logits - logsumexp(logits))
        return probs / probs.sum()


SCORERS = ("heuristic", "roadmap")


def make_scorer(kind: str, codebook: Codebook, q_s, q_g, temperature: float = 0.1) -> SequenceScorer:
    if kind == "heuristic":
        return HeuristicScorer(codebook, q_s, q_g, temperature)
    if kind == "roadmap":
        return RoadmapScorer(codebook, q_s, q_g, temperature)
    raise ValueError(f"unknown scorer {kind!r}; expected one of {SCORERS}")


class GmmSampler:
    """Uniform-weight mixture of Gaussian regions."""

    def __init__(self, components: Sequence[GaussianParams]):
        self.components = list(components)
        if not self.components:
            raise ValueError("mixture has no components")
        self.n = self.components[0].n
        self.weights = np.full(len(self.components), 1.0 / len(self.components))
        self._means = np.array([c.mu for c in self.components])

    def __len__(self):
        return len(self.components)

    def sample(self, rng) -> np.ndarray:
        i = int(rng.integers(len(self.components)))
        return self.components[i].sample(rng.standard_normal(self.n))

    def sample_component(self, index: int, rng) -> np.ndarray:
        return self.components[index].sample(rng.standard_normal(self.n))

    def sample_batch(self, rng, size: int):
        """Draw ``size`` points; returns ``(points, component_indices)``."""
        idx = rng.integers(len(self.components), size=size)
        eps = rng.standard_normal((size, self.n))
        out = np.empty((size, self.n))
        for i, comp in enumerate(self.components):
            mask = idx == i
            out[mask] = comp.sample(eps[mask])
        return out, idx

    def nearest_component(self, q) -> int:
        return int(np.argmin(np.linalg.norm(self._means - np.asarray(q), axis=1)))

    def log_density(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        parts = np.array([c.log_density(q) for c in self.components])
        return logsumexp(parts + np.log(self.weights)[:, None], axis=0)

    def density(self, q) -> np.ndarray:
        return np.exp(self.log_density(q))


def build_gmm(codebook: Codebook, H: RegionSequence,
              latents: Optional[Sequence[np.ndarray]] = None) -> GmmSampler:
    """Mixture over every non-goal index of ``H`` (duplicates kept).

    ``latents`` optionally replaces the codebook entries, one per non-goal
    index in order, e.g. the output of :func:`optimize_sequence_regions`.
    """
    regions = H.regions
    if not regions:
        raise ValueError("region sequence holds only the goal token; mixture would be empty")
    if latents is None:
        latents = [codebook.latent(h) for h in regions]
    if len(latents) != len(regions):
        raise ValueError("need one latent per non-goal index")
    return GmmSampler([codebook.decoder.decode(z) for z in latents])


def sample(gmm: GmmSampler, rng) -> np.ndarray:
    return gmm.sample(rng)


def optimize_sequence_regions(codebook: Codebook, H: RegionSequence, F: ConstraintSet,
                              params: OptimizerParams = OptimizerParams()) -> List[np.ndarray]:
    """Refine a per-query copy of every non-goal region of ``H``.

    Each region's noise stream is seeded from ``(params.seed, index)`` so the
    result for a region does not depend on where it sits in the sequence.
    Regions whose optimisation hits a numeric failure keep their original latent.
    """
    out = []
    for h in H.regions:
        z0 = codebook.latent(h)
        rng = np.random.default_rng([params.seed, h])
        try:
            out.append(update_distribution(codebook, z0, F, params, rng=rng))
        except NumericalError:
            out.append(z0)
    return out
