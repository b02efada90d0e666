"""Root-relative 3D mesh decoder.

Chebyshev spectral graph convolution with K-hop locality, the Inception
graph block (three parallel Chebyshev branches of increasing order, fused
by concatenation + a linear mix, applied as two sequential sub-blocks with
SE-style channel gating), and the coarse-to-fine decoding pipeline: a
fully connected layer seeds coarse-level vertex features from the latent
vector, two {block, upsample} stages walk down the graph hierarchy, and a
standalone graph convolution emits per-vertex 3D offsets in meters,
root-relative.
"""

import numpy as np

from . import tensor as T
from . import meshgraph as M


class ChebConvLayer(T.Module):
    """Spectral filter y = sum_k T_k(L~) x W_k + b over one hierarchy level.

    T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}. A K-order filter mixes
    information from at most K-1 hops away.
    """

    def __init__(self, rng, lap, K, c_in, c_out):
        super().__init__()
        if K < 1:
            raise T.ShapeError(f"Chebyshev order K must be >= 1, got {K}")
        self.K = K
        self.lap = lap      # ScaledLaplacian
        self.c_in = c_in
        self.c_out = c_out
        w = rng.normal(0.0, np.sqrt(2.0 / (K * c_in)), size=(K, c_in, c_out))
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(c_out))

    def __call__(self, x):
        n = self.lap.shape[0]
        vtx_axis = x.ndim - 2
        if x.shape[vtx_axis] != n or x.shape[-1] != self.c_in:
            raise T.ShapeError(
                f"cheb_conv expects (..,{n},{self.c_in}), got {x.shape}")
        t_prev2 = x                                  # T_0 x
        acc = T.matmul(t_prev2, self.w[0])
        if self.K > 1:
            t_prev1 = T.graph_matmul(self.lap.matrix, x)     # T_1 x
            acc = acc + T.matmul(t_prev1, self.w[1])
            for k in range(2, self.K):
                t_k = 2.0 * T.graph_matmul(self.lap.matrix, t_prev1) - t_prev2
                acc = acc + T.matmul(t_k, self.w[k])
                t_prev2, t_prev1 = t_prev1, t_k
        return acc + self.b


def cheb_conv(layer, x):
    return layer(x)


class SEGate(T.Module):
    """Squeeze-and-excitation channel gate used as graph attention.

    s = sigmoid(W2 relu(W1 mean_over_vertices(x))); output = x * s.
    """

    def __init__(self, rng, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = self.add_child("fc1", T.Linear(rng, channels, hidden))
        self.fc2 = self.add_child("fc2", T.Linear(rng, hidden, channels))

    def __call__(self, x):
        vtx_axis = x.ndim - 2
        pooled = T.mean(x, axis=vtx_axis, keepdims=True)     # (..,1,C)
        s = T.sigmoid(self.fc2(T.relu(self.fc1(pooled))))
        return x * s


class InceptionSubBlock(T.Module):
    """One inception stage: parallel Chebyshev branches, concat, mix, ReLU.

    With residual=True the input is added back after the activation, which
    requires c_in == c_out. serial=True chains the branches instead of
    running them side by side (kept as an experimental variant).
    """

    def __init__(self, rng, lap, c_in, c_out, orders=(2, 3, 4),
                 residual=False, serial=False):
        super().__init__()
        if len(set(orders)) != len(orders) or list(orders) != sorted(orders):
            raise T.ShapeError(f"branch orders must be strictly increasing, got {orders}")
        if residual and c_in != c_out:
            raise T.ShapeError(
                f"residual sub-block needs matching channels, got {c_in} != {c_out}")
        self.residual = residual
        self.serial = serial
        self.orders = tuple(orders)
        self.branches = []
        for i, k in enumerate(orders):
            cin = c_in if (not serial or i == 0) else c_out
            br = self.add_child(f"branch{k}", ChebConvLayer(rng, lap, k, cin, c_out))
            self.branches.append(br)
        if not serial:
            self.mix = self.add_child("mix", T.Linear(rng, c_out * len(orders), c_out))

    def __call__(self, x):
        if self.serial:
            h = x
            for i, br in enumerate(self.branches):
                h = br(h)
                if i < len(self.branches) - 1:
                    h = T.relu(h)
            out = T.relu(h)
        else:
            cat = T.concat([br(x) for br in self.branches], axis=x.ndim - 1)
            out = T.relu(self.mix(cat))
        if self.residual:
            out = out + x
        return out

    @property
    def receptive_hops(self):
        """Graph radius the output can see: max branch order - 1 (parallel)."""
        if self.serial:
            return sum(k - 1 for k in self.orders)
        return max(self.orders) - 1


class InceptionGraphBlock(T.Module):
    """Two inception sub-blocks followed by SE gating with a residual skip.

    sub-block 1 maps c_in -> c_out (residual added when the counts match);
    sub-block 2 keeps c_out and its input is re-added after the SE gate, so
    a zero-weight block degenerates to the identity when c_in == c_out.
    """

    def __init__(self, rng, lap, c_in, c_out, orders=(2, 3, 4),
                 se_reduction=4, serial=False):
        super().__init__()
        self.sb1 = self.add_child("sb1", InceptionSubBlock(
            rng, lap, c_in, c_out, orders, residual=(c_in == c_out), serial=serial))
        self.sb2 = self.add_child("sb2", InceptionSubBlock(
            rng, lap, c_out, c_out, orders, residual=False, serial=serial))
        self.se = self.add_child("se", SEGate(rng, c_out, se_reduction))

    def __call__(self, x):
        h1 = self.sb1(x)
        h2 = self.sb2(h1)
        return self.se(h2) + h1


def inception_block_forward(block, x):
    return block(x)


def se_gate(gate, x):
    return gate(x)


class LatentEncoder(T.Module):
    """Two residual FC blocks mapping pooled image features to the latent."""

    def __init__(self, rng, d_in, d=512):
        super().__init__()
        self.d = d
        self.fc_in = self.add_child("fc_in", T.Linear(rng, d_in, d))
        for i in range(2):
            self.add_child(f"res{i}a", T.Linear(rng, d, d))
            self.add_child(f"res{i}b", T.Linear(rng, d, d))

    def __call__(self, x):
        h = T.relu(self.fc_in(x))
        for i in range(2):
            fa = self._children[f"res{i}a"]
            fb = self._children[f"res{i}b"]
            h = h + fb(T.relu(fa(h)))
        return h


class MeshDecoder(T.Module):
    """Latent vector -> root-relative mesh vertices on the base graph.

    An FC layer seeds features at hierarchy level ``len(channels) - 1``;
    each {InceptionGraphBlock, upsample} stage halves the level index while
    shrinking channels per the channel plan; a standalone Chebyshev layer
    finally maps to 3 coordinates and fake rows are dropped.
    """

    def __init__(self, rng, hierarchy, d_latent, channels=(256, 128, 64),
                 orders=(2, 3, 4), final_order=3, se_reduction=4, serial=False):
        super().__init__()
        self.h = hierarchy
        self.channels = tuple(channels)
        self.start_level = len(channels) - 1
        if hierarchy.num_levels <= self.start_level:
            raise T.ShapeError(
                f"decoder needs hierarchy depth > {self.start_level}, "
                f"got {hierarchy.num_levels} levels")
        self.laps = [M.build_scaled_laplacian(
            hierarchy.levels[i], hierarchy.edge_weights[i] if i > 0 else None)
            for i in range(self.start_level + 1)]
        self.n_start = hierarchy.levels[self.start_level].num_vertices
        self.d_latent = d_latent
        self.fc = self.add_child("fc", T.Linear(rng, d_latent, self.n_start * channels[0]))
        for i in range(len(channels) - 1):
            level = self.start_level - i
            self.add_child(f"block{i}", InceptionGraphBlock(
                rng, self.laps[level], channels[i], channels[i + 1],
                orders, se_reduction, serial))
        self.final = self.add_child("final", ChebConvLayer(
            rng, self.laps[0], final_order, channels[-1], 3))

    def __call__(self, latent):
        if latent.shape[-1] != self.d_latent:
            raise T.ShapeError(
                f"latent dim {latent.shape[-1]} != configured {self.d_latent}")
        b = latent.shape[0]
        x = T.relu(self.fc(latent))
        x = T.reshape(x, (b, self.n_start, self.channels[0]))
        for i in range(len(self.channels) - 1):
            level = self.start_level - i
            x = self._children[f"block{i}"](x)
            x = M.upsample_features(x, self.h, level)
        verts = self.final(x)
        return M.drop_fake(verts, self.h, 0)


def mesh_decoder_forward(decoder, latent):
    return decoder(latent)
