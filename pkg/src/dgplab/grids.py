"""Uniform grids on [-1,1]^k and functions sampled on them.

A GridFunction stores values at the nodes of a uniform tensor grid in
row-major (C) order and evaluates anywhere in the closed cube by
multilinear interpolation.  Multilinear interpolation never overshoots the
node values, so functions bounded by 1 on the nodes stay bounded by 1
everywhere; the composition machinery relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Hard cap on the total number of nodes of a single grid.
MAX_NODES = 2**24


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over [-1,1]^dim with points_per_axis nodes per axis."""

    dim: int
    points_per_axis: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("grid dim must be >= 1")
        if self.points_per_axis < 3:
            raise ValueError("grid needs at least 3 points per axis")
        if self.points_per_axis**self.dim > MAX_NODES:
            raise ValueError(
                f"grid has {self.points_per_axis}^{self.dim} nodes, "
                f"exceeding the configured limit {MAX_NODES}"
            )

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def mesh(self) -> float:
        """Spacing between adjacent nodes along one axis."""
        return 2.0 / (self.points_per_axis - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.points_per_axis)

    def points(self) -> np.ndarray:
        """All nodes as an (n_nodes, dim) array, row-major in the axes."""
        axes = [self.axis()] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int) -> "GridSpec":
        """Grid with (m-1)*factor + 1 points per axis (same node locations plus new ones)."""
        return GridSpec(self.dim, (self.points_per_axis - 1) * factor + 1)


@dataclass
class GridFunction:
    """Values of a real function at the nodes of a GridSpec, row-major order."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_nodes:
            raise ValueError(
                f"value vector has length {self.values.size}, "
                f"grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def reshaped(self) -> np.ndarray:
        """Values as a dim-dimensional array."""
        return self.values.reshape((self.grid.points_per_axis,) * self.grid.dim)

    def interp(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at points inside the closed cube.

        points: array of shape (n, dim) or (dim,).  Raises ValueError for
        points outside [-1,1]^dim (no extrapolation).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.grid.dim:
            raise ValueError(f"points have dim {pts.shape[1]}, grid is {self.grid.dim}-dimensional")
        if np.any(pts < -1.0) or np.any(pts > 1.0):
            raise ValueError("interpolation point outside [-1,1]^dim")
        if self.grid.dim == 1:
            return np.interp(pts[:, 0], self.grid.axis(), self.values)
        return _multilinear(self.grid, self.values, pts)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.interp(points)

    # --- serialization (one value per line under a '# grid dim=k m=m' header) ---

    def to_csv(self, path, extra_markers: tuple[str, ...] = ()) -> None:
        with open(path, "w") as fh:
            fh.write(f"# grid dim={self.grid.dim} m={self.grid.points_per_axis}\n")
            for marker in extra_markers:
                fh.write(f"# {marker}\n")
            for v in self.values:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        markers, values = read_grid_csv(path)
        dim, m = markers["dim"], markers["m"]
        return cls(GridSpec(dim, m), np.array(values))


def read_grid_csv(path):
    """Parse a GridFunction CSV; returns ({'dim':k,'m':m,'markers':[...]}, values)."""
    meta = {"markers": []}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("grid"):
                    for tok in body.split()[1:]:
                        key, _, val = tok.partition("=")
                        meta[key] = int(val)
                else:
                    meta["markers"].append(body)
            else:
                values.append(float(line))
    if "dim" not in meta or "m" not in meta:
        raise ValueError(f"{path}: missing '# grid dim=k m=m' header")
    return meta, values


def _multilinear(grid: GridSpec, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Tensor-product linear interpolation on the uniform grid (any dim)."""
    m = grid.points_per_axis
    # fractional index per axis
    u = (pts + 1.0) / grid.mesh
    i0 = np.clip(np.floor(u).astype(int), 0, m - 2)
    w = u - i0
    vals = values.reshape((m,) * grid.dim)
    out = np.zeros(pts.shape[0])
    for corner in range(2**grid.dim):
        idx = []
        weight = np.ones(pts.shape[0])
        for ax in range(grid.dim):
            bit = (corner >> ax) & 1
            idx.append(i0[:, ax] + bit)
            weight *= w[:, ax] if bit else (1.0 - w[:, ax])
        out += weight * vals[tuple(idx)]
    return out


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    """Node weights of the tensor-product trapezoid rule on [-1,1]^dim (flat, row-major)."""
    w1 = np.full(grid.points_per_axis, grid.mesh)
    w1[0] *= 0.5
    w1[-1] *= 0.5
    w = w1
    for _ in range(grid.dim - 1):
        w = np.multiply.outer(w, w1)
    return w.ravel()


def trapezoid_integral(fn: GridFunction) -> float:
    """Trapezoid-rule integral of a GridFunction over [-1,1]^dim."""
    return float(trapezoid_weights(fn.grid) @ fn.values)
