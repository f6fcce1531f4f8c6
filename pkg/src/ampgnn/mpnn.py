"""Message passing neural network over the real dimensions of the MIMO system.

Nodes are the ``2N`` real signal dimensions on a complete graph.  One
parameter set serves every unfolded layer and any number of users.

Forward kernels take a leading batch axis: node tensors are ``(B, n, F)``
and edge tensors ``(B, n, n, F)`` with ``[b, i, j]`` the edge from sender
``j`` to receiver ``i``.  Each kernel has a ``*_backward`` twin that consumes
the cache it produced and accumulates parameter gradients into a dict.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np


@dataclass
class MpnnParams:
    tensors: "OrderedDict[str, np.ndarray]"
    n_u: int = 8
    n_h1: int = 16
    n_h2: int = 8
    n_out: int = 2

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def names(self):
        return list(self.tensors)

    def copy(self) -> "MpnnParams":
        return MpnnParams(OrderedDict((k, v.copy()) for k, v in self.tensors.items()),
                          self.n_u, self.n_h1, self.n_h2, self.n_out)

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.tensors.items())

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def check(self):
        expected = param_shapes(self.n_u, self.n_h1, self.n_h2, self.n_out)
        if list(expected) != list(self.tensors):
            raise ValueError(f"tensor names {list(self.tensors)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValueError(f"{name}: non-finite entries")


def param_shapes(n_u=8, n_h1=16, n_h2=8, n_out=2) -> "OrderedDict[str, tuple]":
    return OrderedDict([
        ("enc.W", (n_u, 3)), ("enc.b", (n_u,)),
        ("prop.W1", (n_h1, 2 * n_u + 2)), ("prop.b1", (n_h1,)),
        ("prop.W2", (n_h2, n_h1)), ("prop.b2", (n_h2,)),
        ("prop.W3", (n_u, n_h2)), ("prop.b3", (n_u,)),
        ("gru.W_ih", (3 * n_h1, n_u + 2)), ("gru.b_ih", (3 * n_h1,)),
        ("gru.W_hh", (3 * n_h1, n_h1)), ("gru.b_hh", (3 * n_h1,)),
        ("upd.W", (n_u, n_h1)), ("upd.b", (n_u,)),
        ("read.W1", (n_h1, n_u)), ("read.b1", (n_h1,)),
        ("read.W2", (n_h2, n_h1)), ("read.b2", (n_h2,)),
        ("read.W3", (n_out, n_h2)), ("read.b3", (n_out,)),
    ])


def param_count(n_u=8, n_h1=16, n_h2=8, n_out=2) -> int:
    """Closed-form number of learnable scalars."""
    encoder = 4 * n_u
    propagation = n_h1 * (2 * n_u + 3) + n_h2 * (n_h1 + 1) + n_u * (n_h2 + 1)
    gru = 3 * n_h1 * (n_u + 2) + 3 * n_h1 * n_h1 + 6 * n_h1
    update = n_u * (n_h1 + 1)
    readout = n_h1 * (n_u + 1) + n_h2 * (n_h1 + 1) + n_out * (n_h2 + 1)
    return encoder + propagation + gru + update + readout


def init_params(n_out: int, seed: int = 0, n_u=8, n_h1=16, n_h2=8) -> MpnnParams:
    """Uniform ``+-sqrt(1/fan_in)`` weights and biases."""
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    shapes = param_shapes(n_u, n_h1, n_h2, n_out)
    for name, shape in shapes.items():
        # a bias shares the fan-in of its weight: "read.b2" -> "read.W2"
        module, leaf = name.split(".")
        weight = name if len(shape) == 2 else f"{module}.{leaf.replace('b', 'W')}"
        bound = np.sqrt(1.0 / shapes[weight][1])
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return MpnnParams(tensors, n_u, n_h1, n_h2, n_out)


@dataclass
class MpnnState:
    u: np.ndarray
    g: np.ndarray


# ------------------------------------------------------------------ primitives

def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def mlp_forward(x, weights, cache=None):
    """Dense layers with ReLU between them and a linear output layer."""
    lead = x.shape[:-1]
    h = _flat(x)
    acts = [h]
    for i, (W, b) in enumerate(weights):
        h = h @ W.T
        h += b
        if i < len(weights) - 1:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    if cache is not None:
        cache["acts"] = acts
    return h.reshape(lead + (h.shape[-1],))


def mlp_backward(d_out, weights, names, cache, grads):
    acts = cache["acts"]
    lead = d_out.shape[:-1]
    d = _flat(d_out)
    for i in range(len(weights) - 1, -1, -1):
        W, _ = weights[i]
        if i < len(weights) - 1:
            d = d * (acts[i + 1] > 0)
        w_name, b_name = names[i]
        grads[w_name] += d.T @ acts[i]
        grads[b_name] += _colsum(d)
        d = d @ W
    return d.reshape(lead + (d.shape[-1],))


def _colsum(a):
    return np.ones(a.shape[0]) @ a


# ------------------------------------------------------------------- features

def node_features(H, y, s2):
    """``[y.a_n, a_n.a_n, sigma^2]`` per node and the Gram matrix for edges."""
    G = np.einsum("bmi,bmj->bij", H, H)
    yA = np.einsum("bm,bmn->bn", y, H)
    diag = np.einsum("bii->bi", G)
    s2n = np.broadcast_to(np.asarray(s2, dtype=float)[:, None], yA.shape)
    return np.stack([yA, diag, s2n], axis=-1), G


def edge_attributes(G, s2):
    """``f[b, n, j] = [a_n.a_j, sigma^2]`` for every ordered pair (diagonal included)."""
    s2e = np.broadcast_to(np.asarray(s2, dtype=float)[:, None, None], G.shape)
    return np.stack([G, s2e], axis=-1)


def encode(init_feat, params: MpnnParams):
    return init_feat @ params["enc.W"].T + params["enc.b"]


# ---------------------------------------------------------------- propagation

def _prop_weights(params):
    return [(params["prop.W2"], params["prop.b2"]), (params["prop.W3"], params["prop.b3"])]


_PROP_NAMES = [("prop.W2", "prop.b2"), ("prop.W3", "prop.b3")]


def propagate(u, G, s2, params: MpnnParams, cache=None):
    """Messages ``m[b, n, j]`` from node ``j`` to node ``n``; self-edges are zero.

    The first dense layer acts on ``[u_n, u_j, a_n.a_j, sigma^2]``; it is
    evaluated as a sum of per-node projections plus the edge term.
    """
    n_u = params.n_u
    W1 = params["prop.W1"]
    recv = u @ W1[:, :n_u].T
    send = u @ W1[:, n_u:2 * n_u].T
    s2 = np.asarray(s2, dtype=float)
    const = s2[:, None] * W1[:, 2 * n_u + 1] + params["prop.b1"]
    h1 = G[..., None] * W1[:, 2 * n_u]
    h1 += recv[:, :, None, :]
    h1 += (send + const[:, None, :])[:, None, :, :]
    np.maximum(h1, 0.0, out=h1)
    sub = {} if cache is not None else None
    msg = mlp_forward(h1, _prop_weights(params), sub)
    idx = np.arange(u.shape[1])
    msg[:, idx, idx, :] = 0.0
    if cache is not None:
        cache.update(u=u, G=G, s2=s2, h1=h1, mlp=sub)
    return msg


def propagate_backward(d_msg, cache, params: MpnnParams, grads):
    n_u = params.n_u
    idx = np.arange(d_msg.shape[1])
    d_msg = np.array(d_msg)
    d_msg[:, idx, idx, :] = 0.0
    d_pre = mlp_backward(d_msg, _prop_weights(params), _PROP_NAMES, cache["mlp"], grads)
    d_pre *= cache["h1"] > 0
    u, G, s2 = cache["u"], cache["G"], cache["s2"]
    d_recv = d_pre.sum(axis=2)
    d_send = d_pre.sum(axis=1)
    gW = grads["prop.W1"]
    gW[:, :n_u] += np.einsum("bnh,bnu->hu", d_recv, u)
    gW[:, n_u:2 * n_u] += np.einsum("bjh,bju->hu", d_send, u)
    gW[:, 2 * n_u] += G.reshape(-1) @ _flat(d_pre)
    d_tot = d_recv.sum(axis=1)
    gW[:, 2 * n_u + 1] += d_tot.T @ s2
    grads["prop.b1"] += d_tot.sum(axis=0)
    W1 = params["prop.W1"]
    return d_recv @ W1[:, :n_u] + d_send @ W1[:, n_u:2 * n_u]


# ---------------------------------------------------------------- aggregation

def gru_cell(x, h, params: MpnnParams, cache=None):
    """Standard GRU: reset/update gates with sigmoid, tanh candidate."""
    k = params.n_h1
    gi = x @ params["gru.W_ih"].T + params["gru.b_ih"]
    gh = h @ params["gru.W_hh"].T + params["gru.b_hh"]
    r = sigmoid(gi[..., :k] + gh[..., :k])
    z = sigmoid(gi[..., k:2 * k] + gh[..., k:2 * k])
    cand = np.tanh(gi[..., 2 * k:] + r * gh[..., 2 * k:])
    h_new = (1.0 - z) * cand + z * h
    if cache is not None:
        cache.update(x=x, h=h, r=r, z=z, cand=cand, gh_n=gh[..., 2 * k:])
    return h_new


def gru_cell_backward(d_h_new, cache, params: MpnnParams, grads):
    x, h, r, z, cand, gh_n = (cache[k] for k in ("x", "h", "r", "z", "cand", "gh_n"))
    d_cand = d_h_new * (1.0 - z)
    d_z = d_h_new * (h - cand)
    d_h = d_h_new * z
    d_pre_n = d_cand * (1.0 - cand**2)
    d_r = d_pre_n * gh_n
    d_pre_r = d_r * r * (1.0 - r)
    d_pre_z = d_z * z * (1.0 - z)
    d_gi = np.concatenate([d_pre_r, d_pre_z, d_pre_n], axis=-1)
    d_gh = np.concatenate([d_pre_r, d_pre_z, d_pre_n * r], axis=-1)
    grads["gru.W_ih"] += _flat(d_gi).T @ _flat(x)
    grads["gru.b_ih"] += _flat(d_gi).sum(axis=0)
    grads["gru.W_hh"] += _flat(d_gh).T @ _flat(h)
    grads["gru.b_hh"] += _flat(d_gh).sum(axis=0)
    d_x = d_gi @ params["gru.W_ih"]
    d_h = d_h + d_gh @ params["gru.W_hh"]
    return d_x, d_h


def aggregate(state: MpnnState, msg, d, params: MpnnParams, cache=None) -> MpnnState:
    """Sum incoming messages, append the node attribute, run GRU, project to ``u``."""
    m_sum = msg.sum(axis=2)
    x = np.concatenate([m_sum, d], axis=-1)
    sub = {} if cache is not None else None
    g = gru_cell(x, state.g, params, sub)
    u = g @ params["upd.W"].T + params["upd.b"]
    if cache is not None:
        cache.update(gru=sub, g=g)
    return MpnnState(u=u, g=g)


def aggregate_backward(d_u, d_g, cache, params: MpnnParams, grads):
    """Returns gradients on ``(msg, d, g_prev)``."""
    g = cache["g"]
    grads["upd.W"] += d_u.reshape(-1, d_u.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    grads["upd.b"] += d_u.reshape(-1, d_u.shape[-1]).sum(axis=0)
    d_g = d_g + d_u @ params["upd.W"]
    d_x, d_gprev = gru_cell_backward(d_g, cache["gru"], params, grads)
    n_u = params.n_u
    d_msum = d_x[..., :n_u]
    d_d = d_x[..., n_u:]
    n = d_msum.shape[1]
    d_msg = np.broadcast_to(d_msum[:, :, None, :], d_msum.shape[:2] + (n, n_u))
    return d_msg, d_d, d_gprev


# -------------------------------------------------------------------- readout

def _read_weights(params):
    return [(params["read.W1"], params["read.b1"]), (params["read.W2"], params["read.b2"]),
            (params["read.W3"], params["read.b3"])]


_READ_NAMES = [("read.W1", "read.b1"), ("read.W2", "read.b2"), ("read.W3", "read.b3")]


def readout(u, params: MpnnParams, cache=None):
    """Per-node logits over the ``sqrt(Q)`` PAM amplitudes."""
    return mlp_forward(u, _read_weights(params), cache)


def readout_backward(d_logits, cache, params: MpnnParams, grads):
    return mlp_backward(d_logits, _read_weights(params), _READ_NAMES, cache, grads)


# ------------------------------------------------------------- full GNN block

@dataclass
class GraphContext:
    """Channel-dependent inputs that stay fixed across unfolded layers."""

    init_feat: np.ndarray
    G: np.ndarray
    s2: np.ndarray

    @classmethod
    def build(cls, H, y, s2):
        feat, G = node_features(H, y, s2)
        return cls(feat, G, np.asarray(s2, dtype=float))


def node_init(ctx: GraphContext, params: MpnnParams) -> MpnnState:
    """Encoded hidden vectors and zero GRU states."""
    u = encode(ctx.init_feat, params)
    g = np.zeros(u.shape[:2] + (params.n_h1,))
    return MpnnState(u=u, g=g)


def gnn_forward(ctx: GraphContext, d, carry: MpnnState | None, params: MpnnParams, L: int = 2,
                cache=None, readout_fn=None):
    """``L`` rounds of propagate/aggregate, then the readout.

    ``carry=None`` encodes fresh hidden vectors; otherwise the previous
    layer's ``(u, g)`` continue.  ``readout_fn(u)`` may replace the readout
    MLP (used for wiring checks).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    n = ctx.init_feat.shape[1]
    fresh = carry is None
    state = node_init(ctx, params) if fresh else carry
    if state.u.shape[1] != n or state.g.shape[1] != n:
        raise ValueError(f"carried state has {state.u.shape[1]} nodes, system has {n}")
    rounds = []
    for _ in range(L):
        pc = {} if cache is not None else None
        ac = {} if cache is not None else None
        msg = propagate(state.u, ctx.G, ctx.s2, params, pc)
        state = aggregate(state, msg, d, params, ac)
        rounds.append((pc, ac))
    rc = {} if cache is not None else None
    logits = readout(state.u, params, rc) if readout_fn is None else readout_fn(state.u)
    if cache is not None:
        cache.update(fresh=fresh, rounds=rounds, readout=rc)
    return logits, state


def gnn_backward(d_logits, d_u_out, d_g_out, cache, ctx: GraphContext, params: MpnnParams, grads):
    """Reverse of :func:`gnn_forward`; returns gradients on ``d`` and on the carry."""
    d_u = d_u_out + readout_backward(d_logits, cache["readout"], params, grads)
    d_g = d_g_out
    d_d = 0.0
    for pc, ac in reversed(cache["rounds"]):
        d_msg, dd, d_g = aggregate_backward(d_u, d_g, ac, params, grads)
        d_d = d_d + dd
        d_u = propagate_backward(d_msg, pc, params, grads)
    if cache["fresh"]:
        feat = ctx.init_feat
        grads["enc.W"] += d_u.reshape(-1, d_u.shape[-1]).T @ feat.reshape(-1, 3)
        grads["enc.b"] += d_u.reshape(-1, d_u.shape[-1]).sum(axis=0)
        return d_d, None, None
    return d_d, d_u, d_g
