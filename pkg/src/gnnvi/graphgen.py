"""Random graph families, graph-to-MDP conversion and the deterministic maze.

Every generator takes an explicit ``numpy.random.Generator`` (where randomness
is involved) and is a pure function of its arguments and that generator's
state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp

FAMILIES = (
    "erdos_renyi",
    "barabasi_albert",
    "star",
    "caveman",
    "caterpillar",
    "lobster",
    "tree",
    "grid",
    "ladder",
    "line",
    "maze",
)

DEFAULT_GAMMA = 0.9
DEFAULT_P_EDGE = 0.3
PRUNE_BELOW = 1e-6


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class UndirectedGraph:
    num_nodes: int
    edges: frozenset  # of (i, j) with i < j

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "UndirectedGraph":
        edges = set()
        for i, j in pairs:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-pair ({i}, {i}) in raw graph")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")
            edges.add((min(i, j), max(i, j)))
        return cls(n, frozenset(edges))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in self.sorted_edges():
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(x) for x in nbrs]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self) -> bool:
        if self.num_nodes == 0:
            return True
        nbrs = self.neighbors()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in nbrs[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.num_nodes


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# -- random families -------------------------------------------------------


def gen_erdos_renyi(n: int, p_edge: float, rng: np.random.Generator) -> UndirectedGraph:
    """G(n, p) with an isolated-node repair pass.

    Each isolated node (checked in ascending order) gets one edge to a
    uniformly chosen other node.
    """
    _check(n >= 2, f"erdos_renyi needs n >= 2, got {n}")
    _check(0.0 < p_edge < 1.0, f"p_edge must lie in (0, 1), got {p_edge}")
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p_edge
    edges = set(zip(iu[keep].tolist(), ju[keep].tolist()))
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    for v in range(n):
        if deg[v] == 0:
            w = int(rng.integers(n - 1))
            w += w >= v
            edges.add((min(v, w), max(v, w)))
            deg[v] += 1
            deg[w] += 1
    return UndirectedGraph.from_pairs(n, edges)


def gen_barabasi_albert(n: int, m: int, rng: np.random.Generator) -> UndirectedGraph:
    """Preferential attachment grown from an ``m``-node clique.

    Yields exactly ``m*(n-m) + m*(m-1)/2`` edges. When every existing degree
    is zero (``m == 1`` seed) targets are drawn uniformly.
    """
    _check(1 <= m < n, f"barabasi_albert needs 1 <= m < n, got m={m}, n={n}")
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    deg = np.zeros(n, dtype=np.float64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    for v in range(m, n):
        weights = deg[:v]
        total = weights.sum()
        p = weights / total if total > 0 else None
        targets = rng.choice(v, size=m, replace=False, p=p)
        for t in sorted(int(t) for t in targets):
            edges.append((t, v))
            deg[t] += 1
            deg[v] += 1
    return UndirectedGraph.from_pairs(n, edges)


def gen_star(n: int) -> UndirectedGraph:
    _check(n >= 2, f"star needs n >= 2, got {n}")
    return UndirectedGraph.from_pairs(n, [(0, i) for i in range(1, n)])


def gen_line(n: int) -> UndirectedGraph:
    _check(n >= 2, f"line needs n >= 2, got {n}")
    return UndirectedGraph.from_pairs(n, [(i, i + 1) for i in range(n - 1)])


def gen_ladder(n_rungs: int) -> UndirectedGraph:
    """Two rails ``0..k-1`` and ``k..2k-1`` joined by rungs ``(i, i+k)``."""
    _check(n_rungs >= 2, f"ladder needs n_rungs >= 2, got {n_rungs}")
    k = n_rungs
    pairs = [(i, i + 1) for i in range(k - 1)]
    pairs += [(k + i, k + i + 1) for i in range(k - 1)]
    pairs += [(i, i + k) for i in range(k)]
    return UndirectedGraph.from_pairs(2 * k, pairs)


def gen_grid(rows: int, cols: int) -> UndirectedGraph:
    _check(rows >= 1 and cols >= 1 and rows * cols >= 2, f"bad grid size {rows}x{cols}")
    pairs = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                pairs.append((v, v + 1))
            if r + 1 < rows:
                pairs.append((v, v + cols))
    return UndirectedGraph.from_pairs(rows * cols, pairs)


def gen_caveman(num_cliques: int, clique_size: int) -> UndirectedGraph:
    """Connected caveman graph.

    In each clique the edge ``(first, first+1)`` is rewired to
    ``(first+1, first of next clique)``, closing the cliques into a ring.
    The edge count stays ``num_cliques * C(clique_size, 2)``.
    """
    _check(num_cliques >= 1 and clique_size >= 2, "caveman needs >=1 cliques of size >=2")
    _check(num_cliques * clique_size >= 2, "caveman needs at least 2 nodes")
    k = clique_size
    edges = set()
    for c in range(num_cliques):
        base = c * k
        edges.update((base + i, base + j) for i in range(k) for j in range(i + 1, k))
    if num_cliques > 1:
        for c in range(num_cliques):
            base = c * k
            nxt = ((c + 1) % num_cliques) * k
            edges.discard((base, base + 1))
            edges.add((min(base + 1, nxt), max(base + 1, nxt)))
    return UndirectedGraph.from_pairs(num_cliques * k, edges)


def gen_tree(n: int, rng: np.random.Generator) -> UndirectedGraph:
    """Uniform random recursive tree: node ``i`` attaches to a uniform earlier node."""
    _check(n >= 2, f"tree needs n >= 2, got {n}")
    parents = [int(rng.integers(i)) for i in range(1, n)]
    return UndirectedGraph.from_pairs(n, [(p, i) for i, p in enumerate(parents, start=1)])


def gen_caterpillar(n: int, rng: np.random.Generator) -> UndirectedGraph:
    """Path spine of uniform length in ``[1, n-1]``, remaining nodes hang off the spine."""
    _check(n >= 2, f"caterpillar needs n >= 2, got {n}")
    spine = int(rng.integers(1, n))
    pairs = [(i, i + 1) for i in range(spine - 1)]
    pairs += [(int(rng.integers(spine)), v) for v in range(spine, n)]
    return UndirectedGraph.from_pairs(n, pairs)


def gen_lobster(n: int, rng: np.random.Generator) -> UndirectedGraph:
    """Caterpillar with a second leaf level.

    Each non-spine node attaches, with probability 1/2, to a uniform spine
    node, otherwise to a uniform first-level node (if one exists yet).
    """
    _check(n >= 2, f"lobster needs n >= 2, got {n}")
    spine = int(rng.integers(1, n))
    pairs = [(i, i + 1) for i in range(spine - 1)]
    level1: list[int] = []
    for v in range(spine, n):
        if level1 and rng.random() < 0.5:
            pairs.append((level1[int(rng.integers(len(level1)))], v))
        else:
            pairs.append((int(rng.integers(spine)), v))
            level1.append(v)
    return UndirectedGraph.from_pairs(n, pairs)


# -- graph -> MDP ----------------------------------------------------------


def graph_to_mdp(
    g: UndirectedGraph, num_actions: int, gamma: float, rng: np.random.Generator
) -> Mdp:
    """Turn a graph into an MDP whose nonzero transitions follow its edges.

    Candidates for state ``s`` are its neighbours plus a self-loop. Each
    ``(s, a)`` draws probabilities from a flat Dirichlet over the candidates,
    prunes entries below ``PRUNE_BELOW`` and renormalises. Rewards are
    uniform on [0, 1].
    """
    n = g.num_nodes
    deg = g.degrees()
    if n > 1 and np.any(deg == 0):
        raise ValueError("graph_to_mdp requires a graph without isolated nodes")
    nbrs = g.neighbors()
    cands = [sorted(set(nbrs[s]) | {s}) for s in range(n)]
    transitions = [[None] * num_actions for _ in range(n)]
    for a in range(num_actions):
        for s in range(n):
            c = cands[s]
            p = rng.dirichlet(np.ones(len(c))) if len(c) > 1 else np.ones(1)
            keep = p >= PRUNE_BELOW
            if not keep.any():
                transitions[s][a] = [(s, 1.0)]
                continue
            p = p[keep] / p[keep].sum()
            transitions[s][a] = list(zip(np.asarray(c)[keep].tolist(), p.tolist()))
    rewards = rng.random((n, num_actions))
    return Mdp.from_lists(n, num_actions, gamma, transitions, rewards)


# -- maze ------------------------------------------------------------------

# N, NE, E, SE, S, SW, W, NW as (row delta, col delta)
COMPASS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _largest_component(free: np.ndarray) -> list[tuple[int, int]]:
    side_r, side_c = free.shape
    seen = np.zeros_like(free, dtype=bool)
    best: list[tuple[int, int]] = []
    for r0 in range(side_r):
        for c0 in range(side_c):
            if not free[r0, c0] or seen[r0, c0]:
                continue
            comp = []
            stack = [(r0, c0)]
            seen[r0, c0] = True
            while stack:
                r, c = stack.pop()
                comp.append((r, c))
                for dr, dc in COMPASS:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < side_r and 0 <= cc < side_c and free[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            if len(comp) > len(best):
                best = comp
    return sorted(best)


def gen_maze_mdp(
    side: int,
    obstacle_density: float,
    rng: np.random.Generator,
    gamma: float = DEFAULT_GAMMA,
    target_states: int = 20,
    max_attempts: int = 100,
) -> tuple[Mdp, dict[tuple[int, int], int]]:
    """Deterministic 8-action grid maze on the largest 8-connected free region.

    Obstacle layouts are resampled until the region size is within 25% of
    ``target_states``; if no attempt lands in that band the attempt closest to
    the target is used. Returns the MDP and the ``(row, col) -> state`` map.
    """
    _check(side >= 3, f"maze side must be >= 3, got {side}")
    _check(0.0 <= obstacle_density < 1.0, f"obstacle_density must lie in [0, 1), got {obstacle_density}")
    lo, hi = math.ceil(0.75 * target_states), math.floor(1.25 * target_states)
    best: list[tuple[int, int]] = []
    for _ in range(max_attempts):
        free = rng.random((side, side)) >= obstacle_density
        comp = _largest_component(free)
        if len(comp) >= 4 and (
            not best or abs(len(comp) - target_states) < abs(len(best) - target_states)
        ):
            best = comp
        if best and lo <= len(best) <= hi:
            break
    if len(best) < 4:
        raise GenerationError(
            f"no free region of >= 4 cells after {max_attempts} attempts "
            f"(side={side}, density={obstacle_density})"
        )
    cell_to_state = {cell: i for i, cell in enumerate(best)}
    n = len(best)
    goal = int(rng.integers(n))
    transitions = [[None] * len(COMPASS) for _ in range(n)]
    rewards = np.zeros((n, len(COMPASS)))
    for (r, c), s in cell_to_state.items():
        for a, (dr, dc) in enumerate(COMPASS):
            if s == goal:
                transitions[s][a] = [(s, 1.0)]
                continue
            nxt = cell_to_state.get((r + dr, c + dc), s)
            transitions[s][a] = [(nxt, 1.0)]
            if nxt == goal:
                rewards[s, a] = 1.0
    mdp = Mdp.from_lists(n, len(COMPASS), gamma, transitions, rewards)
    return mdp, cell_to_state


# -- specs -----------------------------------------------------------------


@dataclass(frozen=True)
class GenSpec:
    """Declarative description of one MDP distribution.

    ``num_states`` is a target; families that cannot hit it exactly use the
    nearest achievable size. ``params`` carries family-specific overrides
    (``p_edge``, ``m``, ``clique_size``, ``side``, ``obstacle_density``).
    """

    family: str
    num_states: int = 20
    num_actions: int = 5
    gamma: float = DEFAULT_GAMMA
    params: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown graph family {self.family!r}")
        if self.num_states < 2:
            raise ValueError("num_states must be >= 2")
        if self.num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.family == "maze" and self.num_actions != len(COMPASS):
            raise ValueError("the maze family has exactly 8 actions")

    @property
    def tag(self) -> str:
        extra = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.family}:{self.num_states}:{self.num_actions}:{self.gamma}:{extra}"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        unknown = set(d) - {"family", "num_states", "num_actions", "gamma", "params"}
        if unknown:
            raise ValueError(f"unknown GenSpec keys: {sorted(unknown)}")
        return cls(
            family=d["family"],
            num_states=int(d.get("num_states", 20)),
            num_actions=int(d.get("num_actions", 5)),
            gamma=float(d.get("gamma", DEFAULT_GAMMA)),
            params=dict(d.get("params", {})),
        )


def _factor_pair(n: int) -> tuple[int, int]:
    best = (1, n)
    for r in range(1, int(math.isqrt(n)) + 1):
        if n % r == 0:
            best = (r, n // r)
    return best


def ba_attachment(n: int, p_edge: float = DEFAULT_P_EDGE) -> int:
    """Attachment count whose mean degree (about 2m) matches G(n, p_edge)."""
    return max(1, min(n - 1, round(p_edge * (n - 1) / 2)))


def sample_graph(spec: GenSpec, rng: np.random.Generator) -> UndirectedGraph:
    n, prm = spec.num_states, spec.params
    fam = spec.family
    if fam == "erdos_renyi":
        return gen_erdos_renyi(n, float(prm.get("p_edge", DEFAULT_P_EDGE)), rng)
    if fam == "barabasi_albert":
        return gen_barabasi_albert(n, int(prm.get("m", ba_attachment(n))), rng)
    if fam == "star":
        return gen_star(n)
    if fam == "line":
        return gen_line(n)
    if fam == "ladder":
        return gen_ladder(max(2, n // 2))
    if fam == "grid":
        return gen_grid(*_factor_pair(n))
    if fam == "caveman":
        k = int(prm.get("clique_size", 5))
        return gen_caveman(max(1, n // k), k)
    if fam == "tree":
        return gen_tree(n, rng)
    if fam == "caterpillar":
        return gen_caterpillar(n, rng)
    if fam == "lobster":
        return gen_lobster(n, rng)
    raise ValueError(f"family {fam!r} has no graph form")


MAZE_SIDE = 8
MAZE_DENSITY = 0.55


def generate(spec: GenSpec, rng: np.random.Generator) -> Mdp:
    if spec.family == "maze":
        mdp, _ = gen_maze_mdp(
            int(spec.params.get("side", MAZE_SIDE)),
            float(spec.params.get("obstacle_density", MAZE_DENSITY)),
            rng,
            gamma=spec.gamma,
            target_states=spec.num_states,
        )
        return mdp
    return graph_to_mdp(sample_graph(spec, rng), spec.num_actions, spec.gamma, rng)
