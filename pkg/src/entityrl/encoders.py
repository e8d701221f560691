"""Observation encoders: visual-strip CNN, slot attention, graph attention.

All three map an observation to a fixed-size latent vector. The set and
graph encoders accept any input cardinality, including zero (a learned
null latent stands in for "nothing visible"), and are exactly permutation
invariant: inputs are sorted into a canonical row order before any
arithmetic, so reordering the input cannot even change floating-point
rounding.

Batched paths pad variable-size inputs and mask the padding; they are used
for rollout collection and PPO minibatches where per-sample forwards would
dominate the run time.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import ParamDict, linear_params, parameter, uniform_init
from .sensors import EDGE_PORTAL, GraphObs, VisualStrip


def canonical_order(features: np.ndarray) -> np.ndarray:
    """Deterministic row order (lexicographic over feature columns)."""
    if features.shape[0] <= 1:
        return np.arange(features.shape[0])
    return np.lexsort(features.T[::-1])


def _pad_sets(sets: list[np.ndarray], feature_dim: int):
    """Canonicalize, pad and mask a batch of (N_i, F) arrays."""
    dtype = T.get_default_dtype()
    n_max = max((s.shape[0] for s in sets), default=1) or 1
    batch = np.zeros((len(sets), n_max, feature_dim), dtype=dtype)
    mask = np.zeros((len(sets), n_max), dtype=dtype)
    for i, s in enumerate(sets):
        n = s.shape[0]
        if n:
            batch[i, :n] = s[canonical_order(s)]
            mask[i, :n] = 1.0
    return batch, mask


def _split_empty(sizes: list[int]):
    """Indices of nonempty/empty batch rows plus the inverse permutation."""
    nonempty = [i for i, n in enumerate(sizes) if n > 0]
    empty = [i for i, n in enumerate(sizes) if n == 0]
    inverse = np.empty(len(sizes), dtype=np.intp)
    for new, old in enumerate(nonempty + empty):
        inverse[old] = new
    return nonempty, empty, inverse


class CNNStripEncoder:
    """Stacked conv1d + relu over the (r, g, b, depth) strip, then linear."""

    kind = "cnn"

    def __init__(self, rng: np.random.Generator, in_channels: int = 4, length: int = 128,
                 channels=(16, 32), kernels=(8, 4), strides=(4, 2), fc: int = 256,
                 latent_dim: int = 64):
        if not (len(channels) == len(kernels) == len(strides)):
            raise ValueError("channels, kernels and strides must have equal length")
        self.in_channels = in_channels
        self.length = length
        self.strides = tuple(strides)
        self.latent_dim = latent_dim
        self.params = ParamDict()
        c_prev, l_prev = in_channels, length
        for i, (c, k, s) in enumerate(zip(channels, kernels, strides)):
            if l_prev < k:
                raise ValueError(f"conv layer {i}: length {l_prev} < kernel {k}")
            self.params.add(f"cnn.conv{i}.w", parameter(uniform_init(rng, c_prev * k, (c, c_prev, k))))
            self.params.add(f"cnn.conv{i}.b", parameter(np.zeros(c, dtype=T.get_default_dtype())))
            l_prev = (l_prev - k) // s + 1
            c_prev = c
        self.flat_dim = c_prev * l_prev
        w, b = linear_params(rng, self.flat_dim, fc)
        self.params.add("cnn.fc.w", w)
        self.params.add("cnn.fc.b", b)
        w, b = linear_params(rng, fc, latent_dim)
        self.params.add("cnn.out.w", w)
        self.params.add("cnn.out.b", b)
        self.n_layers = len(channels)

    def encode_batch(self, strips: list[np.ndarray]) -> T.Tensor:
        """strips: list of (C, L) arrays -> (B, latent_dim)."""
        dtype = T.get_default_dtype()
        x = T.Tensor(np.stack(strips).astype(dtype))
        if x.shape[1:] != (self.in_channels, self.length):
            raise ValueError(f"strip shape {x.shape[1:]} != ({self.in_channels}, {self.length})")
        for i in range(self.n_layers):
            x = T.conv1d(x, self.params[f"cnn.conv{i}.w"], self.strides[i],
                         bias=self.params[f"cnn.conv{i}.b"])
            x = T.relu(x)
        x = T.reshape(x, (x.shape[0], self.flat_dim))
        x = T.relu(T.add(T.matmul(x, self.params["cnn.fc.w"]), self.params["cnn.fc.b"]))
        return T.add(T.matmul(x, self.params["cnn.out.w"]), self.params["cnn.out.b"])

    def encode(self, strip) -> T.Tensor:
        arr = strip.as_channels() if isinstance(strip, VisualStrip) else np.asarray(strip)
        return T.reshape(self.encode_batch([arr]), (self.latent_dim,))


class SlotAttentionEncoder:
    """Iterative slot attention over an entity set, mean-pooled to a latent.

    Slots compete for inputs: attention logits are softmaxed over the slot
    axis, then weights are renormalized per slot over the inputs before the
    weighted mean. Slots refine through a GRU cell plus a residual MLP.
    Slot initializers are learned per slot; eval mode uses the means,
    training adds seeded noise scaled by the learned log-sigma.
    """

    kind = "slot"

    def __init__(self, rng: np.random.Generator, in_dim: int, slots: int = 4,
                 iters: int = 3, dim: int = 32, mlp_hidden: int = 64,
                 latent_dim: int = 64, eps: float = 1e-8):
        self.in_dim = in_dim
        self.slots = slots
        self.iters = iters
        self.dim = dim
        self.latent_dim = latent_dim
        self.eps = eps
        dtype = T.get_default_dtype()
        p = self.params = ParamDict()
        w, b = linear_params(rng, in_dim, dim)
        p.add("slot.in.w", w)
        p.add("slot.in.b", b)
        p.add("slot.mu", parameter((rng.standard_normal((slots, dim)) / math.sqrt(dim)).astype(dtype)))
        p.add("slot.logsigma", parameter(np.full((slots, dim), -1.0, dtype=dtype)))
        for name in ("q", "k", "v"):
            w, b = linear_params(rng, dim, dim)
            p.add(f"slot.{name}.w", w)
            p.add(f"slot.{name}.b", b)
        p.add("slot.gru.w_ih", parameter(uniform_init(rng, dim, (dim, 3 * dim))))
        p.add("slot.gru.w_hh", parameter(uniform_init(rng, dim, (dim, 3 * dim))))
        p.add("slot.gru.b_ih", parameter(np.zeros(3 * dim, dtype=dtype)))
        p.add("slot.gru.b_hh", parameter(np.zeros(3 * dim, dtype=dtype)))
        w, b = linear_params(rng, dim, mlp_hidden)
        p.add("slot.mlp1.w", w)
        p.add("slot.mlp1.b", b)
        w, b = linear_params(rng, mlp_hidden, dim)
        p.add("slot.mlp2.w", w)
        p.add("slot.mlp2.b", b)
        w, b = linear_params(rng, dim, latent_dim)
        p.add("slot.out.w", w)
        p.add("slot.out.b", b)
        p.add("slot.null", parameter(np.zeros(latent_dim, dtype=dtype)))

    def _init_slots(self, batch: int, slot_rng: np.random.Generator | None) -> T.Tensor:
        mu = T.broadcast_to(T.reshape(self.params["slot.mu"], (1, self.slots, self.dim)),
                            (batch, self.slots, self.dim))
        if slot_rng is None:
            return mu
        noise = slot_rng.standard_normal((batch, self.slots, self.dim)).astype(T.get_default_dtype())
        sigma = T.exp(T.broadcast_to(
            T.reshape(self.params["slot.logsigma"], (1, self.slots, self.dim)),
            (batch, self.slots, self.dim)))
        return T.add(mu, T.mul(sigma, T.Tensor(noise)))

    def encode_batch(self, sets: list[np.ndarray],
                     slot_rng: np.random.Generator | None = None) -> T.Tensor:
        sizes = [s.shape[0] for s in sets]
        nonempty, empty, inverse = _split_empty(sizes)
        parts = []
        if nonempty:
            parts.append(self._encode_nonempty([sets[i] for i in nonempty], slot_rng))
        if empty:
            null = T.reshape(self.params["slot.null"], (1, self.latent_dim))
            parts.append(T.broadcast_to(null, (len(empty), self.latent_dim)))
        merged = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
        if not empty or not nonempty:
            return merged
        return T.take_rows(merged, inverse)

    def _encode_nonempty(self, sets: list[np.ndarray],
                         slot_rng: np.random.Generator | None) -> T.Tensor:
        p = self.params
        batch, mask = _pad_sets(sets, self.in_dim)
        b, n, _ = batch.shape
        k_slots, d = self.slots, self.dim

        x = T.layer_norm(T.add(T.matmul(T.Tensor(batch), p["slot.in.w"]), p["slot.in.b"]))
        keys = T.add(T.matmul(x, p["slot.k.w"]), p["slot.k.b"])
        vals = T.add(T.matmul(x, p["slot.v.w"]), p["slot.v.b"])

        col_mask = np.broadcast_to(mask[:, None, :], (b, k_slots, n)).copy()
        eps_mask = T.Tensor(self.eps * col_mask)
        col_mask = T.Tensor(col_mask)

        slots = self._init_slots(b, slot_rng)
        scale = 1.0 / math.sqrt(d)
        for _ in range(self.iters):
            q = T.add(T.matmul(T.layer_norm(slots), p["slot.q.w"]), p["slot.q.b"])
            logits = T.mul(T.matmul(q, T.swap_last(keys)), scale)   # (B, K, N)
            attn = T.softmax(logits, axis=1)                        # slots compete per input
            attn = T.add(T.mul(attn, col_mask), eps_mask)
            denom = T.broadcast_to(T.sum(attn, axis=2, keepdims=True), (b, k_slots, n))
            weights = T.div(attn, denom)                            # per-slot mean weights
            updates = T.matmul(weights, vals)                       # (B, K, D)
            flat = T.gru_cell(T.reshape(updates, (b * k_slots, d)),
                              T.reshape(slots, (b * k_slots, d)),
                              p["slot.gru.w_ih"], p["slot.gru.w_hh"],
                              p["slot.gru.b_ih"], p["slot.gru.b_hh"])
            slots = T.reshape(flat, (b, k_slots, d))
            hidden = T.relu(T.add(T.matmul(T.layer_norm(slots), p["slot.mlp1.w"]), p["slot.mlp1.b"]))
            slots = T.add(slots, T.add(T.matmul(hidden, p["slot.mlp2.w"]), p["slot.mlp2.b"]))

        pooled = T.mean(slots, axis=1)                              # (B, D)
        return T.add(T.matmul(pooled, p["slot.out.w"]), p["slot.out.b"])

    def encode(self, entity_set, slot_rng: np.random.Generator | None = None) -> T.Tensor:
        features = entity_set.features if hasattr(entity_set, "features") else np.asarray(entity_set)
        return T.reshape(self.encode_batch([features], slot_rng), (self.latent_dim,))


class GATEncoder:
    """Two-layer multi-head graph attention with a global mean pool.

    Scores follow the attentive variant: e(i, j) = a_h . leaky_relu(
    W_recv h_i + W_send h_j), computed densely over a masked adjacency.
    The receiving/sending projections are shared across heads (the
    attention vectors are per head), which keeps the default encoder
    within its parameter budget. Heads concatenate in hidden layers and
    average in the last one; self-loops are always added.
    """

    kind = "gnn"

    def __init__(self, rng: np.random.Generator, in_dim: int, layers: int = 2,
                 heads: int = 4, hidden: int = 16, latent_dim: int = 64,
                 edge_kinds: bool = False, leaky_slope: float = 0.2):
        if layers < 1:
            raise ValueError("need at least one layer")
        self.in_dim = in_dim
        self.layers = layers
        self.heads = heads
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.edge_kinds = edge_kinds
        self.leaky_slope = leaky_slope
        p = self.params = ParamDict()
        dims = [in_dim] + [heads * hidden] * (layers - 1)
        for layer, f_in in enumerate(dims):
            p.add(f"gat.l{layer}.w_recv", parameter(uniform_init(rng, f_in, (f_in, hidden))))
            p.add(f"gat.l{layer}.w_send", parameter(uniform_init(rng, f_in, (f_in, hidden))))
            p.add(f"gat.l{layer}.att", parameter(uniform_init(rng, hidden, (hidden, heads))))
            if edge_kinds:
                p.add(f"gat.l{layer}.w_edge", parameter(uniform_init(rng, 2, (2, hidden))))
        w, b = linear_params(rng, hidden, latent_dim)
        p.add("gat.out.w", w)
        p.add("gat.out.b", b)
        p.add("gat.null", parameter(np.zeros(latent_dim, dtype=T.get_default_dtype())))

    def encode_batch(self, graphs: list[GraphObs]) -> T.Tensor:
        sizes = [g.num_nodes for g in graphs]
        nonempty, empty, inverse = _split_empty(sizes)
        parts = []
        if nonempty:
            parts.append(self._encode_nonempty([graphs[i] for i in nonempty]))
        if empty:
            null = T.reshape(self.params["gat.null"], (1, self.latent_dim))
            parts.append(T.broadcast_to(null, (len(empty), self.latent_dim)))
        merged = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
        if not empty or not nonempty:
            return merged
        return T.take_rows(merged, inverse)

    def _dense_batch(self, graphs: list[GraphObs]):
        """Canonicalized node features, adjacency mask, edge-kind planes."""
        dtype = T.get_default_dtype()
        b = len(graphs)
        n_max = max(g.num_nodes for g in graphs)
        feats = np.zeros((b, n_max, self.in_dim), dtype=dtype)
        node_mask = np.zeros((b, n_max), dtype=dtype)
        adj = np.zeros((b, n_max, n_max), dtype=bool)
        portal = np.zeros((b, n_max, n_max), dtype=bool)
        idx = np.arange(n_max)
        adj[:, idx, idx] = True  # self-loops (padding rows stay NaN-free too)
        for i, g in enumerate(graphs):
            n = g.num_nodes
            rows = g.nodes.features
            if rows.shape[1] != self.in_dim:
                raise ValueError(f"graph feature dim {rows.shape[1]} != encoder in_dim {self.in_dim}")
            order = canonical_order(rows)
            feats[i, :n] = rows[order]
            node_mask[i, :n] = 1.0
            if len(g.edges):
                remap = np.empty(n, dtype=np.int64)
                remap[order] = np.arange(n)
                src = remap[g.edges[:, 0]]
                dst = remap[g.edges[:, 1]]
                adj[i, dst, src] = True  # adj[i, receiver, sender]
                portal[i, dst[g.edge_kinds == EDGE_PORTAL], src[g.edge_kinds == EDGE_PORTAL]] = True
        return feats, node_mask, adj, portal

    def _encode_nonempty(self, graphs: list[GraphObs]) -> T.Tensor:
        p = self.params
        feats, node_mask, adj, portal = self._dense_batch(graphs)
        b, n, _ = feats.shape
        h = T.Tensor(feats)
        neg = np.where(adj, 0.0, -1e30).astype(T.get_default_dtype())
        score_mask = T.Tensor(np.broadcast_to(neg[..., None], (b, n, n, self.heads)).copy())
        portal_plane = np.stack([~portal & adj, portal], axis=-1).astype(T.get_default_dtype())

        for layer in range(self.layers):
            recv = T.matmul(h, p[f"gat.l{layer}.w_recv"])   # (B, N, hidden)
            send = T.matmul(h, p[f"gat.l{layer}.w_send"])
            pair = T.outer_add(recv, send)                  # (B, N_recv, N_send, hidden)
            if self.edge_kinds:
                pair = T.add(pair, T.matmul(T.Tensor(portal_plane), p[f"gat.l{layer}.w_edge"]))
            scores = T.matmul(T.leaky_relu(pair, self.leaky_slope), p[f"gat.l{layer}.att"])
            alpha = T.softmax(T.add(scores, score_mask), axis=2)    # (B, N_recv, N_send, H)
            alpha = T.transpose(alpha, (0, 3, 1, 2))                # (B, H, N_recv, N_send)
            out = T.matmul(alpha, T.reshape(send, (b, 1, n, self.hidden)))
            if layer < self.layers - 1:
                out = T.transpose(out, (0, 2, 1, 3))                # concat heads
                h = T.relu(T.reshape(out, (b, n, self.heads * self.hidden)))
            else:
                h = T.mean(out, axis=1)                             # average heads
        pool_mask = np.broadcast_to(node_mask[..., None], (b, n, self.hidden)).copy()
        inv_counts = (1.0 / node_mask.sum(axis=1))[:, None] * np.ones((1, self.hidden))
        pooled = T.mul(T.sum(T.mul(h, T.Tensor(pool_mask)), axis=1),
                       T.Tensor(inv_counts.astype(T.get_default_dtype())))
        return T.add(T.matmul(pooled, p["gat.out.w"]), p["gat.out.b"])

    def encode(self, graph: GraphObs) -> T.Tensor:
        return T.reshape(self.encode_batch([graph]), (self.latent_dim,))
