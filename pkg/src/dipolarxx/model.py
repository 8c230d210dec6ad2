"""The long-range XX Hamiltonian shared by the exact and variational engines."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lattice import CouplingTable, LatticeSpec, build_coupling_table, kac_factor, normalization


@dataclass(frozen=True)
class XXModel:
    """H = -(coupling / norm) sum_{i<j} J_ij (S^x_i S^x_j + S^y_i S^y_j).

    ``norm`` defaults to N for alpha = 0 and 1 otherwise; pass ``"kac"`` to
    use the Kac factor instead.
    """

    spec: LatticeSpec
    coupling: float = 1.0
    norm: float | str | None = None
    table: CouplingTable = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.table is None:
            object.__setattr__(self, "table", build_coupling_table(self.spec))

    @property
    def N(self) -> int:
        return self.spec.N

    @cached_property
    def norm_value(self) -> float:
        if self.norm is None:
            return normalization(self.spec)
        if self.norm == "kac":
            return kac_factor(self.spec)
        return float(self.norm)

    @cached_property
    def flip_amplitude(self) -> np.ndarray:
        """Matrix element <s'|H|s> for exchanging anti-aligned spins i, j."""
        return -(self.coupling / (2.0 * self.norm_value)) * self.table.couplings

    @cached_property
    def kac(self) -> float:
        return kac_factor(self.spec)

    def kac_time(self, t):
        """Time measured in units of the Kac-normalized Hamiltonian."""
        return np.asarray(t) * self.coupling * self.kac / self.norm_value
