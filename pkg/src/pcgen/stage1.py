"""Tree-structured graph-convolution generator: latent code -> sparse cloud.

The latent vector is the root of a tree that alternates two steps per
level: a branching step mapping every point to ``d_l`` children through
per-branch linear maps, and a graph-convolution step

    p_next = sigma( loop(p) + sum_j U_j . ancestor_j(p) + b )

where ``loop`` is a two-stage linear map with a small support width and
the ancestor sum runs over the point's whole chain up to the root.  The
last level is linear and 3 wide, producing the coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractViolation


@dataclass
class TreeLayerSpec:
    """Static shape description of the generator tree."""

    degrees: tuple          # branching factor per level
    widths: tuple           # feature width per layer, widths[0] = z width
    support: int = 10       # hidden width of the loop transform

    def __post_init__(self):
        self.degrees = tuple(int(d) for d in self.degrees)
        self.widths = tuple(int(w) for w in self.widths)
        if any(d < 1 for d in self.degrees):
            raise ContractViolation(f"degrees must be >= 1, got {self.degrees}")
        if len(self.widths) != len(self.degrees) + 1:
            raise ContractViolation(
                f"need {len(self.degrees) + 1} widths for {len(self.degrees)} "
                f"levels, got {len(self.widths)}"
            )
        if self.widths[-1] != 3:
            raise ContractViolation("final layer width must be 3 (coordinates)")
        if self.support < 1:
            raise ContractViolation("support width must be >= 1")

    @property
    def levels(self):
        return len(self.degrees)

    @property
    def point_count(self):
        return int(np.prod(self.degrees))

    def layer_sizes(self):
        sizes = [1]
        for d in self.degrees:
            sizes.append(sizes[-1] * d)
        return sizes


def default_widths(degrees, z_dim=96):
    """96 -> ... -> 3 schedule, halving roughly every other level."""
    n = len(degrees)
    inner = [max(8, z_dim >> ((i + 1) // 2)) for i in range(n - 1)]
    return tuple([z_dim] + inner + [3])


@dataclass
class TreeState:
    """Per-layer features of a (possibly batched) generator tree.

    ``layers[j]`` has shape (batch * N_j, width_j) where N_j is the product
    of the first j degrees.  Ancestor lookups are index arithmetic on the
    layer sizes, so the tables never need storing.
    """

    spec: TreeLayerSpec
    batch: int
    layers: list = field(default_factory=list)

    @property
    def depth(self):
        return len(self.layers) - 1

    def layer_size(self, j):
        return self.spec.layer_sizes()[j]

    def ancestor_index(self, layer, depth):
        """Row indices into ``layers[depth]`` for the points of ``layer``."""
        sizes = self.spec.layer_sizes()
        if not 0 <= depth < layer <= self.depth:
            raise ContractViolation(
                f"ancestor depth {depth} invalid for layer {layer}"
            )
        n_layer, n_anc = sizes[layer], sizes[depth]
        stride = n_layer // n_anc
        local = np.arange(n_layer) // stride
        return np.concatenate(
            [local + b * n_anc for b in range(self.batch)]
        ).astype(np.int64)

    def parent_index(self, layer):
        return self.ancestor_index(layer, layer - 1)

    def check_consistency(self):
        sizes = self.spec.layer_sizes()
        for j, feats in enumerate(self.layers):
            if feats.shape[0] != self.batch * sizes[j]:
                raise ContractViolation(
                    f"layer {j} holds {feats.shape[0]} rows, expected "
                    f"{self.batch * sizes[j]}"
                )


class Stage1Generator:
    """Latent codes (B, z) -> point clouds (B * N1, 3)."""

    def __init__(self, rng, spec: TreeLayerSpec, dtype=np.float32,
                 leaky_slope=0.2):
        self.spec = spec
        self.dtype = dtype
        self.leaky_slope = leaky_slope
        self.params = {}
        widths = spec.widths
        K = spec.support

        def par(name, shape, fan_in, terms=1):
            # 1/fan variance, split across the terms summed in the block so
            # activations keep a stable scale down the tree
            std = np.sqrt(1.0 / (fan_in * terms))
            self.params[name] = T.as_parameter(
                rng.normal(0.0, std, size=shape), dtype=dtype)

        for l, d in enumerate(spec.degrees):
            w_in, w_out = widths[l], widths[l + 1]
            n_terms = l + 2  # loop + one ancestor term per depth
            for j in range(d):
                par(f"lvl{l}/branch{j}/V", (w_in, w_in), w_in)
            par(f"lvl{l}/loop/Wa", (w_in, K), w_in)
            par(f"lvl{l}/loop/Wb", (K, w_out), K, terms=n_terms)
            for j in range(l + 1):
                par(f"lvl{l}/anc{j}/U", (widths[j], w_out), widths[j], terms=n_terms)
            self.params[f"lvl{l}/b"] = T.as_parameter(
                np.zeros(w_out), dtype=dtype)

    # -- building blocks ------------------------------------------------------

    def branch(self, feats, level):
        """Map each point to d_l children via per-branch linear maps."""
        d = self.spec.degrees[level]
        w = feats.shape[1]
        parts = [T.matmul(feats, self.params[f"lvl{level}/branch{j}/V"])
                 for j in range(d)]
        stacked = T.concat(parts, axis=1) if d > 1 else parts[0]
        return T.reshape(stacked, (feats.shape[0] * d, w))

    def gcn_block(self, state: TreeState, level):
        """Transform the deepest layer using loop + ancestor terms.

        The deepest layer must hold the freshly branched children of
        ``layers[level]``; ancestors are layers 0..level.
        """
        state.check_consistency()
        children = state.layers[-1]
        loop = T.matmul(T.matmul(children, self.params[f"lvl{level}/loop/Wa"]),
                        self.params[f"lvl{level}/loop/Wb"])
        total = T.add(loop, self.params[f"lvl{level}/b"])
        for j in range(level + 1):
            anc = T.gather_rows(state.layers[j],
                                state.ancestor_index(level + 1, j))
            total = T.add(total, T.matmul(anc, self.params[f"lvl{level}/anc{j}/U"]))
        if level == self.spec.levels - 1:
            return total  # coordinates stay linear
        return T.leaky_relu(total, self.leaky_slope)

    def expand(self, state: TreeState):
        """Grow the tree by one level: branch then graph-convolve."""
        level = state.depth
        if level >= self.spec.levels:
            raise ContractViolation("tree is already fully expanded")
        children = self.branch(state.layers[level], level)
        state.layers.append(children)
        state.layers[-1] = self.gcn_block(state, level)
        return state

    # -- entry points ----------------------------------------------------------

    def run_tree(self, z):
        """Expand the full tree; returns the TreeState (leaves last)."""
        zt = z if isinstance(z, T.Tensor) else T.Tensor(np.asarray(z), dtype=self.dtype)
        if zt.ndim == 1:
            zt = T.reshape(zt, (1, zt.shape[0]))
        if zt.shape[1] != self.spec.widths[0]:
            raise ContractViolation(
                f"latent width {zt.shape[1]} != {self.spec.widths[0]}"
            )
        state = TreeState(self.spec, batch=zt.shape[0], layers=[zt])
        for _ in range(self.spec.levels):
            self.expand(state)
        return state

    def generate(self, z):
        """Latent (B, z) or (z,) -> coordinates (B * N1, 3) Tensor."""
        return self.run_tree(z).layers[-1]

    def generate_np(self, z):
        with T.no_grad():
            return self.generate(z).data.copy()
