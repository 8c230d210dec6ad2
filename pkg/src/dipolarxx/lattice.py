"""Periodic Bravais lattices, power-law couplings and displacement classes.

Sites of an ``Lx x Ly`` cell are indexed row-major along the first primitive
vector: ``site = x + Lx * y`` with ``0 <= x < Lx`` and ``0 <= y < Ly``. The
periodic cell is spanned by ``Lx * a1`` and ``Ly * a2``, so the triangular cell
is a rhombus in real space.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

GEOMETRIES = ("square", "triangular")

_PRIMITIVE = {
    "square": np.array([[1.0, 0.0], [0.0, 1.0]]),
    "triangular": np.array([[1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]]),
}

# generators of the point group acting on primitive coordinates (n1, n2)
_GENERATORS = {
    "square": [np.array([[0, -1], [1, 0]]), np.array([[0, 1], [1, 0]])],
    "triangular": [np.array([[0, -1], [1, 1]]), np.array([[0, 1], [1, 0]])],
}


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of a periodic planar lattice.

    ``L`` is the linear size; ``Ly`` defaults to ``L`` and is only needed for
    rectangular cells such as 5x4.
    """

    geometry: str = "square"
    L: int = 4
    alpha: float = 3.0
    Ly: int | None = None
    boundary: str = field(default="periodic", init=False)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if self.Ly is not None and (int(self.Ly) != self.Ly or self.Ly < 2):
            raise ValueError(f"Ly must be an integer >= 2, got {self.Ly}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def Lx(self) -> int:
        return int(self.L)

    @property
    def Ly_(self) -> int:
        return int(self.L if self.Ly is None else self.Ly)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Lx, self.Ly_

    @property
    def N(self) -> int:
        return self.Lx * self.Ly_

    @property
    def primitive_vectors(self) -> np.ndarray:
        return _PRIMITIVE[self.geometry]

    def coords(self, site: int) -> tuple[int, int]:
        return site % self.Lx, site // self.Lx

    def site(self, x: int, y: int) -> int:
        return (x % self.Lx) + self.Lx * (y % self.Ly_)

    def label(self) -> str:
        return f"{self.geometry}_{self.Lx}x{self.Ly_}_a{self.alpha:g}"


def _check_site(spec: LatticeSpec, i: int):
    if not 0 <= i < spec.N:
        raise ValueError(f"site {i} outside 0..{spec.N - 1}")


def min_image_displacement(spec: LatticeSpec, i: int, j: int) -> tuple[int, int, float]:
    """Shortest periodic image of the displacement from site i to site j.

    Returns primitive coordinates ``(n1, n2)`` of the chosen image and its
    Euclidean length. Ties are broken by the first image in lexicographic
    order of the shift, which keeps the choice deterministic.
    """
    _check_site(spec, i)
    _check_site(spec, j)
    if i == j:
        raise ValueError("distance undefined for i == j")
    xi, yi = spec.coords(i)
    xj, yj = spec.coords(j)
    d1 = (xj - xi) % spec.Lx
    d2 = (yj - yi) % spec.Ly_
    a = spec.primitive_vectors
    best = None
    for k1, k2 in product((-1, 0, 1), repeat=2):
        n1, n2 = d1 + k1 * spec.Lx, d2 + k2 * spec.Ly_
        r = float(np.hypot(*(n1 * a[0] + n2 * a[1])))
        if best is None or r < best[2] - 1e-12:
            best = (n1, n2, r)
    return best


def min_image_distance(spec: LatticeSpec, i: int, j: int) -> float:
    return min_image_displacement(spec, i, j)[2]


def point_group(spec: LatticeSpec) -> list[np.ndarray]:
    """Integer point-group matrices compatible with the periodic cell."""
    group = [np.eye(2, dtype=int)]
    frontier = list(group)
    while frontier:
        new = []
        for g in frontier:
            for h in _GENERATORS[spec.geometry]:
                m = h @ g
                if not any(np.array_equal(m, e) for e in group):
                    group.append(m)
                    new.append(m)
        frontier = new
    # keep operations mapping the superlattice onto itself
    lx, ly = spec.shape
    keep = []
    for g in group:
        c1 = g @ np.array([lx, 0])
        c2 = g @ np.array([0, ly])
        if c1[0] % lx == 0 and c1[1] % ly == 0 and c2[0] % lx == 0 and c2[1] % ly == 0:
            keep.append(g)
    return keep


@dataclass(frozen=True)
class CouplingTable:
    spec: LatticeSpec
    distances: np.ndarray  # N x N, zero diagonal
    couplings: np.ndarray  # N x N, J_ij = r^-alpha, zero diagonal
    class_of: np.ndarray  # N x N int, -1 on the diagonal
    class_reps: list  # representative (n1, n2) per class
    class_distance: np.ndarray
    class_size: np.ndarray  # number of unordered pairs per class

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def n_classes(self) -> int:
        return len(self.class_reps)

    @cached_property
    def class_masks(self) -> np.ndarray:
        """Boolean (n_classes, N, N) indicator of ordered pairs in each class."""
        return np.stack([self.class_of == d for d in range(self.n_classes)])

    @cached_property
    def displacement_class(self) -> np.ndarray:
        """Class id indexed by the periodic displacement (d1, d2) from site 0."""
        lx, ly = self.spec.shape
        table = np.full((ly, lx), -1, dtype=int)
        for j in range(1, self.N):
            x, y = self.spec.coords(j)
            table[y, x] = self.class_of[0, j]
        return table

    @cached_property
    def class_coupling(self) -> np.ndarray:
        return self.class_distance ** (-self.spec.alpha)

    def pair_sum(self) -> float:
        return float(np.sum(self.class_size * self.class_coupling))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "r_ij", "J_ij", "class_id"])
            for i in range(self.N):
                for j in range(i + 1, self.N):
                    w.writerow([i, j, f"{self.distances[i, j]:.12g}",
                                f"{self.couplings[i, j]:.12g}", int(self.class_of[i, j])])


def build_coupling_table(spec: LatticeSpec) -> CouplingTable:
    """Minimum-image couplings ``1/r_ij^alpha`` grouped into symmetry classes."""
    n = spec.N
    lx, ly = spec.shape
    group = point_group(spec)

    # classes are orbits of torus displacements under the point group
    orbit_id = {}
    reps, rep_r = [], []
    for d2 in range(ly):
        for d1 in range(lx):
            if (d1, d2) == (0, 0) or (d1, d2) in orbit_id:
                continue
            cid = len(reps)
            for g in group:
                e1, e2 = g @ np.array([d1, d2])
                orbit_id[(int(e1) % lx, int(e2) % ly)] = cid
            n1, n2, r = min_image_displacement(spec, 0, spec.site(d1, d2))
            reps.append((n1, n2))
            rep_r.append(r)

    dist = np.zeros((n, n))
    cls = np.full((n, n), -1, dtype=int)
    xs = np.arange(n) % lx
    ys = np.arange(n) // lx
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            key = ((xs[j] - xs[i]) % lx, (ys[j] - ys[i]) % ly)
            cls[i, j] = orbit_id[key]
            dist[i, j] = min_image_distance(spec, i, j)
    coup = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    coup[off] = dist[off] ** (-spec.alpha)

    class_size = np.bincount(cls[np.triu_indices(n, 1)], minlength=len(reps))
    return CouplingTable(spec, dist, coup, cls, reps, np.array(rep_r), class_size)


def kac_factor(spec: LatticeSpec, alpha: float | None = None) -> float:
    """Mean total coupling per site, ``(1/N) sum_{i != j} r_ij^-alpha``."""
    a = spec.alpha if alpha is None else alpha
    n = spec.N
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += min_image_distance(spec, i, j) ** (-a)
    return total / n


def normalization(spec: LatticeSpec) -> float:
    """Coupling normalization: N for all-to-all (alpha=0), 1 otherwise."""
    return float(spec.N) if spec.alpha == 0 else 1.0
