"""Message-passing executor aligned with one value-iteration backup.

Per action ``a`` the MDP becomes a graph over states. Node ``s`` carries
``(v(s), r(s, a))`` and receives one message per successor ``s'`` with edge
features ``(gamma, p(s'|s, a))``. After one round of message passing the
per-action hiddens are maxed elementwise across actions and decoded to a
scalar per state.

All kernels take a batch of value vectors ``(B, S)`` over one MDP, which is
how teacher forcing feeds a whole trajectory at once. Node ``a * S + s`` in
the flattened layout is state ``s`` in the graph of action ``a``; edges are
stored in the MDP's CSR order and so are sorted by target node.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mdp import Mdp
from .nn import Affine, Param, TwoLayerMlp

CHECKPOINT_VERSION = 1
AGGREGATORS = ("sum", "mean", "max")
# "none": p appears only as an edge feature; "neighbour": the source hidden in the
# message input is scaled by gamma * p; "message": each finished message is scaled by p
EDGE_WEIGHTINGS = ("none", "neighbour", "message")

VARIANTS = {
    "MPNN-Sum": dict(aggregator="sum", message_depth=1, attention=False),
    "MPNN-Mean": dict(aggregator="mean", message_depth=1, attention=False),
    "MPNN-Max": dict(aggregator="max", message_depth=1, attention=False),
    "MPNN-2-Sum": dict(aggregator="sum", message_depth=2, attention=False),
    "Attn-Sum": dict(aggregator="sum", message_depth=1, attention=True),
}


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MpnnConfig:
    hidden_dim: int = 32
    aggregator: str = "sum"
    message_depth: int = 1
    attention: bool = False
    # how p(s'|s,a) enters beyond the edge features, see EDGE_WEIGHTINGS
    edge_weighting: str = "message"

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.message_depth not in (1, 2):
            raise ValueError("message_depth must be 1 or 2")
        if self.edge_weighting not in EDGE_WEIGHTINGS:
            raise ValueError(f"edge_weighting must be one of {EDGE_WEIGHTINGS}")
        if self.attention and (self.aggregator != "sum" or self.message_depth != 1):
            raise ValueError("attention requires aggregator='sum' and message_depth=1")

    @property
    def variant(self) -> str:
        if self.attention:
            return "Attn-Sum"
        if self.message_depth == 2:
            return f"MPNN-2-{self.aggregator.capitalize()}"
        return f"MPNN-{self.aggregator.capitalize()}"

    @classmethod
    def from_variant(cls, name: str, hidden_dim: int = 32, edge_weighting: str = "message") -> "MpnnConfig":
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return cls(hidden_dim=hidden_dim, edge_weighting=edge_weighting, **VARIANTS[name])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MpnnConfig":
        unknown = set(d) - {"hidden_dim", "aggregator", "message_depth", "attention", "edge_weighting"}
        if unknown:
            raise ValueError(f"unknown MpnnConfig keys: {sorted(unknown)}")
        return cls(**d)


class MpnnParams:
    """All learnable layers; one set shared by every action and every step."""

    def __init__(self, config: MpnnConfig, rng: np.random.Generator):
        h = config.hidden_dim
        self.config = config
        self.encoder = Affine(2, h, rng, "encoder")
        if config.message_depth == 1:
            self.message_fn = Affine(2 * h + 2, h, rng, "message")
        else:
            self.message_fn = TwoLayerMlp(2 * h + 2, h, h, rng, "message")
        self.update_fn = Affine(2 * h, h, rng, "update")
        self.decode_fn = Affine(h, 1, rng, "decode")
        self.attention_score = Affine(2 * h + 2, 1, rng, "attention") if config.attention else None

    def params(self) -> list[Param]:
        out = self.encoder.params() + self.message_fn.params() + self.update_fn.params()
        out += self.decode_fn.params()
        if self.attention_score is not None:
            out += self.attention_score.params()
        return out

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def set_zero(self) -> None:
        for p in self.params():
            p.value[...] = 0.0

    def copy(self) -> "MpnnParams":
        other = MpnnParams(self.config, np.random.default_rng(0))
        for dst, src in zip(other.params(), self.params()):
            dst.value[...] = src.value
        return other

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "tensors": {
                p.name: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                for p in self.params()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MpnnParams":
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        params = cls(MpnnConfig.from_dict(d["config"]), np.random.default_rng(0))
        tensors = d["tensors"]
        expected = {p.name for p in params.params()}
        if set(tensors) != expected:
            raise CheckpointError(
                f"checkpoint tensors {sorted(tensors)} do not match config (expected {sorted(expected)})"
            )
        for p in params.params():
            t = tensors[p.name]
            if tuple(t["shape"]) != p.shape:
                raise CheckpointError(f"{p.name}: shape {t['shape']} != {list(p.shape)}")
            p.value[...] = np.asarray(t["values"], dtype=np.float64).reshape(p.shape)
        return params

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "MpnnParams":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(d)


def init_mpnn(config: MpnnConfig, rng: np.random.Generator) -> MpnnParams:
    return MpnnParams(config, rng)


# -- graphs ----------------------------------------------------------------


class GraphStructure:
    """Value-independent part of the action graphs of one MDP."""

    def __init__(self, mdp: Mdp):
        s, a = mdp.num_states, mdp.num_actions
        self.num_states, self.num_actions = s, a
        self.num_nodes = s * a
        self.indptr = mdp.indptr
        self.target = np.repeat(np.arange(self.num_nodes), np.diff(mdp.indptr))
        self.source = mdp.row_actions * s + mdp.indices
        self.edge_features = np.stack([np.full(len(mdp.probs), mdp.gamma), mdp.probs], axis=1)
        self.rewards = mdp.rewards.T.reshape(-1)  # node order (a, s)
        self.in_degree = np.diff(mdp.indptr)
        self._cache: dict = {}

    @property
    def num_edges(self) -> int:
        return len(self.target)

    @cached_property
    def gather_target(self) -> sp.csr_matrix:
        """``(nodes, edges)`` incidence; ``@`` sums edge rows into their target node."""
        e = self.num_edges
        return sp.csr_matrix((np.ones(e), np.arange(e), self.indptr), shape=(self.num_nodes, e))

    def split_weights(self, mode: str) -> np.ndarray:
        """Per-edge factor on the source hidden inside the message input."""
        if mode == "neighbour":
            return self.edge_features[:, 0] * self.edge_features[:, 1]
        return np.ones(self.num_edges)

    def post_weights(self, mode: str) -> np.ndarray:
        """Per-edge factor on the finished message before aggregation."""
        if mode == "message":
            return self.edge_features[:, 1].copy()
        return np.ones(self.num_edges)

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def gather_source(self, mode: str) -> sp.csr_matrix:
        """``(nodes, edges)``; ``@`` sums split-weighted edge rows into their source node."""
        e = self.num_edges
        return self._cached(("gather_source", mode), lambda: sp.csr_matrix(
            (self.split_weights(mode), (self.source, np.arange(e))), shape=(self.num_nodes, e)
        ))

    def adjacency(self, mode: str) -> sp.csr_matrix:
        """``(nodes, nodes)``; entry ``[target, source]`` sums the total neighbour factor of its edges."""
        w = self.split_weights(mode) * self.post_weights(mode)
        return self._cached(("adjacency", mode), lambda: sp.csr_matrix(
            (w, (self.target, self.source)), shape=(self.num_nodes, self.num_nodes)
        ))

    def own_weight(self, mode: str) -> np.ndarray:
        """Per-node sum of message weights; the in-degree when messages are unweighted."""
        return self._cached(("own", mode), lambda: self.gather_target @ self.post_weights(mode))

    def summed_edge_features(self, mode: str) -> np.ndarray:
        return self._cached(("edge", mode), lambda: self.gather_target @ (
            self.post_weights(mode)[:, None] * self.edge_features
        ))

    @cached_property
    def nonempty(self) -> np.ndarray:
        return np.flatnonzero(self.in_degree > 0)


@dataclass
class ActionGraphs:
    structure: GraphStructure
    node_features: np.ndarray  # (B, A*S, 2)

    @property
    def edge_features(self) -> np.ndarray:
        return self.structure.edge_features

    @property
    def batch(self) -> int:
        return self.node_features.shape[0]

    def for_action(self, a: int, b: int = 0) -> dict:
        """Node features, incoming edges ``(source_state, target_state)`` and edge features of one action graph."""
        st = self.structure
        s = st.num_states
        sel = (st.target // s) == a
        return {
            "node_features": self.node_features[b, a * s : (a + 1) * s],
            "edges": np.stack([st.source[sel] % s, st.target[sel] % s], axis=1),
            "edge_features": st.edge_features[sel],
        }


def build_action_graphs(mdp: Mdp, v, structure: GraphStructure | None = None) -> ActionGraphs:
    st = structure if structure is not None else GraphStructure(mdp)
    v = np.asarray(v, dtype=np.float64)
    v = v[None, :] if v.ndim == 1 else v
    if v.shape[1] != mdp.num_states:
        raise ValueError(f"value batch has {v.shape[1]} states, MDP has {mdp.num_states}")
    vals = np.tile(v, (1, st.num_actions))  # (B, A*S), node order (a, s)
    feats = np.stack([vals, np.broadcast_to(st.rewards, vals.shape)], axis=-1)
    return ActionGraphs(st, feats)


# -- kernels ---------------------------------------------------------------


def _seg_sum(mat: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Apply a sparse ``(rows, E)`` matrix along axis 1 of ``x`` with shape ``(B, E, ...)``."""
    b, e = x.shape[:2]
    tail = x.shape[2:]
    flat = np.moveaxis(x, 1, 0).reshape(e, -1)
    out = mat @ flat
    return np.moveaxis(out.reshape((mat.shape[0], b) + tail), 0, 1)


def _split_forward(layer: Affine, h: np.ndarray, st: GraphStructure, mode: str) -> np.ndarray:
    """``layer([h_target, c_e * h_source, e])`` per edge without building the concatenation."""
    w, k = layer.weight.value, h.shape[-1]
    pt = h @ w[:, :k].T
    ps = h @ w[:, k : 2 * k].T
    pe = st.edge_features @ w[:, 2 * k :].T + layer.bias.value
    c = st.split_weights(mode)
    return pt[:, st.target] + c[None, :, None] * ps[:, st.source] + pe


def _split_backward(layer: Affine, h: np.ndarray, st: GraphStructure, g: np.ndarray, mode: str) -> np.ndarray:
    """Accumulate parameter gradients of :func:`_split_forward`; return dL/dh."""
    w, k = layer.weight.value, h.shape[-1]
    out = g.shape[-1]
    gt = _seg_sum(st.gather_target, g)  # (B, nodes, out)
    gs = _seg_sum(st.gather_source(mode), g)
    hf = h.reshape(-1, k)
    layer.weight.grad[:, :k] += gt.reshape(-1, out).T @ hf
    layer.weight.grad[:, k : 2 * k] += gs.reshape(-1, out).T @ hf
    layer.weight.grad[:, 2 * k :] += g.sum(axis=0).T @ st.edge_features
    layer.bias.grad += g.sum(axis=(0, 1))
    return gt @ w[:, :k] + gs @ w[:, k : 2 * k]


def _linear_sum_forward(layer: Affine, h: np.ndarray, st: GraphStructure, mode: str) -> np.ndarray:
    """Weighted sum over incoming edges of ``layer([h_target, c_e * h_source, e])``, on node arrays only."""
    w, k = layer.weight.value, h.shape[-1]
    own_w = st.own_weight(mode)
    own = own_w[None, :, None] * (h @ w[:, :k].T)
    nbr = _node_matmul(st.adjacency(mode), h @ w[:, k : 2 * k].T)
    edge = st.summed_edge_features(mode) @ w[:, 2 * k :].T + own_w[:, None] * layer.bias.value
    return own + nbr + edge


def _linear_sum_backward(layer: Affine, h: np.ndarray, st: GraphStructure, g: np.ndarray, mode: str) -> np.ndarray:
    w, k = layer.weight.value, h.shape[-1]
    out = g.shape[-1]
    gd = st.own_weight(mode)[None, :, None] * g
    gs = _node_matmul(st.adjacency(mode).T, g)
    hf = h.reshape(-1, k)
    layer.weight.grad[:, :k] += gd.reshape(-1, out).T @ hf
    layer.weight.grad[:, k : 2 * k] += gs.reshape(-1, out).T @ hf
    layer.weight.grad[:, 2 * k :] += g.sum(axis=0).T @ st.summed_edge_features(mode)
    layer.bias.grad += gd.sum(axis=(0, 1))
    return gd @ w[:, :k] + gs @ w[:, k : 2 * k]


def _node_matmul(mat, x: np.ndarray) -> np.ndarray:
    """Apply a sparse ``(N, N)`` matrix along axis 1 of ``x`` with shape ``(B, N, H)``."""
    b, n, d = x.shape
    flat = np.moveaxis(x, 1, 0).reshape(n, b * d)
    return np.moveaxis((mat @ flat).reshape(n, b, d), 0, 1)


def _uses_linear_sum(config: MpnnConfig) -> bool:
    return config.message_depth == 1 and not config.attention and config.aggregator in ("sum", "mean")


def _seg_max_first(x: np.ndarray, st: GraphStructure) -> tuple[np.ndarray, tuple]:
    """Segment max over incoming edges and the first edge attaining it."""
    b, e, d = x.shape
    out = np.zeros((b, st.num_nodes, d))
    rows = st.nonempty
    if len(rows) == 0:
        return out, (rows, None)
    starts = st.indptr[rows]
    mx = np.maximum.reduceat(x, starts, axis=1)
    out[:, rows] = mx
    hit = x == out[:, st.target]
    pos = np.where(hit, np.arange(e)[None, :, None], e)
    first = np.minimum.reduceat(pos, starts, axis=1)  # (B, rows, d)
    return out, (rows, first)


def _seg_softmax(score: np.ndarray, st: GraphStructure) -> np.ndarray:
    """Softmax of per-edge scores ``(B, E)`` over each target node's incoming edges."""
    rows = st.nonempty
    mx = np.zeros((score.shape[0], st.num_nodes))
    if len(rows):
        mx[:, rows] = np.maximum.reduceat(score, st.indptr[rows], axis=1)
    ex = np.exp(score - mx[:, st.target])
    den = _seg_sum(st.gather_target, ex)
    return ex / den[:, st.target]


def message_pass(graphs: ActionGraphs, params: MpnnParams, config: MpnnConfig | None = None):
    """One message-passing round on every action graph.

    Returns per-action node hiddens ``(B, A, S, H)`` and the cache needed by
    :func:`backward`.
    """
    config = config or params.config
    st = graphs.structure
    x = graphs.node_features
    h0 = params.encoder.forward(x)  # (B, N, H)
    cache = {"x": x, "h0": h0}
    wn = config.edge_weighting

    if _uses_linear_sum(config):
        m = _linear_sum_forward(params.message_fn, h0, st, wn)
        if config.aggregator == "mean":
            m = m / np.maximum(st.in_degree, 1)[None, :, None]
        return _finish_update(params, st, x, h0, m, cache)

    if config.message_depth == 1:
        msg = _split_forward(params.message_fn, h0, st, wn)
    else:
        mlp = params.message_fn
        pre = _split_forward(mlp.first, h0, st, wn)
        hid = np.maximum(pre, 0.0)
        msg = mlp.second.forward(hid)
        cache.update(pre=pre, hid=hid)

    if config.attention:
        score = _split_forward(params.attention_score, h0, st, wn)[..., 0]
        alpha = _seg_softmax(score, st)
        cache.update(alpha=alpha, value=msg)
        msg = alpha[..., None] * msg

    if wn == "message":
        msg = st.post_weights(wn)[None, :, None] * msg

    if config.aggregator == "max":
        m, cache["argmax"] = _seg_max_first(msg, st)
    else:
        m = _seg_sum(st.gather_target, msg)
        if config.aggregator == "mean":
            m = m / np.maximum(st.in_degree, 1)[None, :, None]
    cache["msg_shape"] = msg.shape
    return _finish_update(params, st, x, h0, m, cache)


def _finish_update(params, st, x, h0, m, cache):
    u_in = np.concatenate([h0, m], axis=-1)
    hu = params.update_fn.forward(u_in)
    cache["u_in"] = u_in
    b = x.shape[0]
    return hu.reshape(b, st.num_actions, st.num_states, -1), cache


def action_max(hiddens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise max over the action axis of ``(B, A, S, H)``; also returns argmax."""
    idx = np.argmax(hiddens, axis=1)
    return np.take_along_axis(hiddens, idx[:, None], axis=1)[:, 0], idx


def decode(h: np.ndarray, params: MpnnParams) -> np.ndarray:
    return params.decode_fn.forward(h)[..., 0]


def forward(params: MpnnParams, graphs: ActionGraphs):
    hid, cache = message_pass(graphs, params)
    hs, idx = action_max(hid)
    cache.update(hs=hs, max_idx=idx, num_actions=hid.shape[1])
    return decode(hs, params), cache


def backward(params: MpnnParams, graphs: ActionGraphs, cache: dict, grad_out: np.ndarray) -> None:
    """Accumulate parameter gradients for ``dL/dv'`` of shape ``(B, S)``."""
    config = params.config
    st = graphs.structure
    hidden = config.hidden_dim
    wn = config.edge_weighting
    g_hs = params.decode_fn.backward(cache["hs"], grad_out[..., None])  # (B, S, H)

    b, s = grad_out.shape
    g_hu = np.zeros((b, cache["num_actions"], s, hidden))
    np.put_along_axis(g_hu, cache["max_idx"][:, None], g_hs[:, None], axis=1)
    g_hu = g_hu.reshape(b, st.num_nodes, hidden)

    g_uin = params.update_fn.backward(cache["u_in"], g_hu)
    g_h0 = g_uin[..., :hidden].copy()
    g_m = g_uin[..., hidden:]

    if _uses_linear_sum(config):
        if config.aggregator == "mean":
            g_m = g_m / np.maximum(st.in_degree, 1)[None, :, None]
        g_h0 += _linear_sum_backward(params.message_fn, cache["h0"], st, g_m, wn)
        params.encoder.backward(cache["x"], g_h0)
        return

    if config.aggregator == "max":
        g_msg = np.zeros(cache["msg_shape"])
        rows, first = cache["argmax"]
        if first is not None:
            bi = np.arange(b)[:, None, None]
            di = np.arange(hidden)[None, None, :]
            g_msg[bi, first, di] = g_m[:, rows]
    else:
        if config.aggregator == "mean":
            g_m = g_m / np.maximum(st.in_degree, 1)[None, :, None]
        g_msg = g_m[:, st.target]

    if wn == "message":
        g_msg = st.post_weights(wn)[None, :, None] * g_msg

    if config.attention:
        alpha, value = cache["alpha"], cache["value"]
        g_alpha = np.sum(g_msg * value, axis=-1)
        g_msg = alpha[..., None] * g_msg
        weighted = _seg_sum(st.gather_target, alpha * g_alpha)
        g_score = alpha * (g_alpha - weighted[:, st.target])
        g_h0 += _split_backward(params.attention_score, cache["h0"], st, g_score[..., None], wn)

    if config.message_depth == 1:
        g_h0 += _split_backward(params.message_fn, cache["h0"], st, g_msg, wn)
    else:
        mlp = params.message_fn
        g_hid = mlp.second.backward(cache["hid"], g_msg)
        g_pre = g_hid * (cache["pre"] > 0)
        g_h0 += _split_backward(mlp.first, cache["h0"], st, g_pre, wn)

    params.encoder.backward(cache["x"], g_h0)


def executor_step(mdp: Mdp, v, params: MpnnParams, structure: GraphStructure | None = None) -> np.ndarray:
    """One emulated Bellman backup; ``v`` may be ``(S,)`` or a batch ``(B, S)``."""
    v = np.asarray(v, dtype=np.float64)
    out, _ = forward(params, build_action_graphs(mdp, v, structure))
    return out[0] if v.ndim == 1 else out
