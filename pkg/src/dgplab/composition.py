"""Deep composition of constrained layers, Lipschitz diagnostics, input/output
rescaling, and the stacked single-process view of a layer collection.

Layers are lists of per-component GridFunctions (inner layers interpolate
multilinearly, which preserves the value bounds), or arbitrary callables for
the exact algebraic identities exercised by the rescaling tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridFunction
from .sampling import LayerSpec

#: Tolerance when validating that intermediate outputs stay inside [-1,1].
_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class DeepGPSpec:
    """Validated stack of H >= 2 layer specifications ending in one output.

    Derived constants: K_min/K_max over the active derivative bounds and the
    composition Lipschitz bound (1 + K_max * d_max)^H.
    """

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        H = len(self.layers)
        if H < 2:
            raise ValueError("a deep spec needs at least two layers")
        if self.layers[-1].d_out != 1:
            raise ValueError("last layer must have a single output component")
        for h in range(H - 1):
            if self.layers[h].d_out != self.layers[h + 1].d_in:
                raise ValueError(f"layer {h + 1} output dim != layer {h + 2} input dim")
        for h, layer in enumerate(self.layers, start=1):
            if h <= H - 1 and not layer.value_bound_active:
                raise ValueError(f"layer {h} must carry the value bound")
            if h == H and layer.value_bound_active:
                raise ValueError("last layer carries no value bound")
            if h >= 2 and layer.deriv_bounds is None:
                raise ValueError(f"layer {h} must carry derivative bounds")
            if h == 1 and layer.deriv_bounds is not None:
                raise ValueError("first layer carries no derivative bounds")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def d_max(self) -> int:
        return max(layer.d_in for layer in self.layers)

    @property
    def k_min(self) -> float:
        return min(float(np.min(l.deriv_bound_array())) for l in self.layers[1:])

    @property
    def k_max(self) -> float:
        return max(float(np.max(l.deriv_bound_array())) for l in self.layers[1:])

    def component_index(self):
        """Lexicographic bijection (h, i) -> 0..|I|-1 over all components (0-based)."""
        pairs = [(h, i) for h, layer in enumerate(self.layers) for i in range(layer.d_out)]
        return {pair: pos for pos, pair in enumerate(pairs)}


def lipschitz_bound(spec: DeepGPSpec) -> float:
    """Composition Lipschitz constant (1 + K_max * d_max)^H."""
    return float((1.0 + spec.k_max * spec.d_max) ** spec.depth)


def compose(layers, inputs: np.ndarray) -> np.ndarray:
    """Evaluate the deep composition at input points in [-1,1]^d.

    layers: per-layer list of per-component functions (GridFunction or any
    callable mapping (n, d_h) points to (n,) values).  Raises if an
    intermediate output leaves [-1,1], which signals an upstream constraint
    violation.
    """
    pts = np.atleast_2d(np.asarray(inputs, dtype=float))
    for depth, comps in enumerate(layers):
        outs = np.stack([np.asarray(comp(pts), dtype=float) for comp in comps], axis=-1)
        if depth < len(layers) - 1:
            overshoot = np.max(np.abs(outs)) - 1.0
            if overshoot > _DOMAIN_SLACK:
                raise ValueError(
                    f"intermediate output of layer {depth + 1} leaves [-1,1] "
                    f"by {overshoot:.3e}: upstream constraint violation"
                )
            outs = np.clip(outs, -1.0, 1.0)
        pts = outs
    return pts[:, 0]


def sup_distance(layers_a, layers_b) -> float:
    """Max over components of the sup grid distance between two layer stacks."""
    worst = 0.0
    for comps_a, comps_b in zip(layers_a, layers_b):
        for fa, fb in zip(comps_a, comps_b):
            worst = max(worst, float(np.max(np.abs(fa.values - fb.values))))
    return worst


def verify_lipschitz(layers_a, layers_b, inputs: np.ndarray) -> float:
    """Ratio ||C_a - C_b||_inf / ||a - b||_inf over the test inputs (0/0 -> 0)."""
    num = float(np.max(np.abs(compose(layers_a, inputs) - compose(layers_b, inputs))))
    den = sup_distance(layers_a, layers_b)
    if den == 0.0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# rescaling (linear input/output changes preserving the composition)
# ---------------------------------------------------------------------------


def rescale_layers(layers, bounds):
    """Rescaled layers Y with Y_h(t) = Z_h(L_h * t) / L_{h+1} (no output
    division for the last layer), which leaves the composition unchanged.

    layers: per-layer lists of callables on (n, d_h) arrays.
    bounds: list of per-layer positive scale vectors L_1..L_{H+1} with
    L_1 = (1,...,1) and L_{H+1} = (1,); L_{h} scales the inputs of layer h
    and L_{h+1} its outputs.
    """
    H = len(layers)
    L = [np.asarray(b, dtype=float).ravel() for b in bounds]
    if len(L) != H + 1:
        raise ValueError("need H+1 scale vectors (inputs of each layer plus final output)")
    if any(np.any(b <= 0) for b in L):
        raise ValueError("scale bounds must be positive")
    if not np.allclose(L[0], 1.0):
        raise ValueError("first-layer input scales must equal 1")
    if L[H].size != 1 or not np.isclose(L[H][0], 1.0):
        raise ValueError("final output scale must equal 1")

    def make(comp, in_scale, out_scale):
        def scaled(pts):
            return np.asarray(comp(np.atleast_2d(pts) * in_scale[None, :]), dtype=float) / out_scale

        return scaled

    out = []
    for h in range(H):
        in_scale = L[h]
        out_scales = L[h + 1] if h < H - 1 else np.ones(len(layers[h]))
        if len(layers[h]) != out_scales.size:
            raise ValueError(f"layer {h + 1} has {len(layers[h])} components, "
                             f"but {out_scales.size} output scales were given")
        out.append([make(comp, in_scale, out_scales[i]) for i, comp in enumerate(layers[h])])
    return out


def rescale_deriv_bounds(deriv_bounds, bounds):
    """Map per-layer derivative bounds K of Z to those of the rescaled Y:
    new K[h][i][j] = (L_{h,j} / L_{h+1,i}) * K[h][i][j] (layers h >= 2)."""
    L = [np.asarray(b, dtype=float).ravel() for b in bounds]
    out = []
    for h, K in enumerate(deriv_bounds):  # h = 0 denotes layer 2
        layer_idx = h + 1  # 0-based position in the stack
        K = np.asarray(K, dtype=float)
        in_scale = L[layer_idx]
        is_last = layer_idx == len(deriv_bounds)
        out_scale = np.ones(K.shape[0]) if is_last else L[layer_idx + 1]
        out.append(K * in_scale[None, :] / out_scale[:, None])
    return out


# ---------------------------------------------------------------------------
# stacked single-process view
# ---------------------------------------------------------------------------


@dataclass
class StackedFunction:
    """All layer components indexed as one function of (t, h, i), where t
    ranges over [-1,1]^{d_max} and each component only reads its first d_h
    coordinates."""

    layers: list

    def __post_init__(self):
        if not self.layers or any(not comps for comps in self.layers):
            raise ValueError("stacked function needs at least one component per layer")

    @property
    def d_max(self) -> int:
        return max(comps[0].grid.dim for comps in self.layers)

    def index(self):
        pairs = [(h, i) for h, comps in enumerate(self.layers) for i in range(len(comps))]
        return {pair: pos for pos, pair in enumerate(pairs)}

    def component(self, h: int, i: int) -> GridFunction:
        return self.layers[h][i]

    def value(self, points: np.ndarray, h: int, i: int) -> np.ndarray:
        """Evaluate component (h, i) at d_max-dimensional points (extra axes ignored)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d_h = self.layers[h][i].grid.dim
        return self.layers[h][i].interp(pts[:, :d_h])

    def sup_norm(self) -> float:
        return max(fn.sup_norm() for comps in self.layers for fn in comps)

    def sup_distance(self, other: "StackedFunction") -> float:
        return sup_distance(self.layers, other.layers)


def stack_global(layers) -> StackedFunction:
    """Stack per-layer component GridFunctions into the single global view."""
    return StackedFunction([list(comps) for comps in layers])


def project(stacked: StackedFunction, h: int, i: int) -> GridFunction:
    """Recover component (h, i) from the stacked view (exact round trip)."""
    return stacked.component(h, i)
