"""2D tensor-product operators built from two 1D SBP operators.

Fields are stored as (n_xi, n_eta) arrays and flattened in C order, so
node (i, j) maps to index i * n_eta + j. With that convention

    D_xi  = D1_xi (x) I_eta      acts as  d_xi @ u
    D_eta = I_xi  (x) D1_eta     acts as  u @ d_eta.T

Both a matrix-free application path and assembled sparse matrices are
provided; the solver uses the former, analysis and verification the
latter.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .sbp1d import SbpOperator1D

_SIDES = {"first": 0, "last": -1}


@dataclass(frozen=True)
class Operator2D:
    op_xi: SbpOperator1D
    op_eta: SbpOperator1D

    @property
    def n_xi(self) -> int:
        return self.op_xi.n

    @property
    def n_eta(self) -> int:
        return self.op_eta.n

    @property
    def n(self) -> int:
        return self.n_xi * self.n_eta

    @property
    def shape(self):
        return (self.n_xi, self.n_eta)

    @cached_property
    def d_xi_1d(self) -> np.ndarray:
        return self.op_xi.d

    @cached_property
    def d_eta_1d(self) -> np.ndarray:
        return self.op_eta.d

    @cached_property
    def h_weights(self) -> np.ndarray:
        """2D norm diagonal as an (n_xi, n_eta) array."""
        return np.outer(self.op_xi.h_diag, self.op_eta.h_diag)

    # matrix-free applications ------------------------------------------------

    def apply_dxi(self, u: np.ndarray) -> np.ndarray:
        return self.d_xi_1d @ u

    def apply_deta(self, u: np.ndarray) -> np.ndarray:
        return u @ self.d_eta_1d.T

    # assembled matrices ------------------------------------------------------

    @cached_property
    def dxi_matrix(self) -> sparse.csr_matrix:
        return sparse.kron(sparse.csr_matrix(self.d_xi_1d),
                           sparse.identity(self.n_eta), format="csr")

    @cached_property
    def deta_matrix(self) -> sparse.csr_matrix:
        return sparse.kron(sparse.identity(self.n_xi),
                           sparse.csr_matrix(self.d_eta_1d), format="csr")

    @cached_property
    def h_matrix(self) -> sparse.dia_matrix:
        return sparse.diags(self.h_weights.ravel())

    @cached_property
    def qxi_matrix(self) -> sparse.csr_matrix:
        return sparse.kron(sparse.csr_matrix(self.op_xi.q),
                           sparse.diags(self.op_eta.h_diag), format="csr")

    @cached_property
    def qeta_matrix(self) -> sparse.csr_matrix:
        return sparse.kron(sparse.diags(self.op_xi.h_diag),
                           sparse.csr_matrix(self.op_eta.q), format="csr")

    def face_restriction(self, axis: str, side: str) -> sparse.csr_matrix:
        """Trace operator onto one face, ordered along the face coordinate."""
        idx = _SIDES[side]
        if axis == "xi":
            e = np.zeros(self.n_xi)
            e[idx] = 1.0
            return sparse.kron(sparse.csr_matrix(e),
                               sparse.identity(self.n_eta), format="csr")
        if axis == "eta":
            e = np.zeros(self.n_eta)
            e[idx] = 1.0
            return sparse.kron(sparse.identity(self.n_xi),
                               sparse.csr_matrix(e), format="csr")
        raise ValueError(f"unknown axis {axis!r}")

    def face_norm(self, axis: str) -> np.ndarray:
        """Quadrature weights along a face perpendicular to ``axis``."""
        return self.op_eta.h_diag if axis == "xi" else self.op_xi.h_diag

    def e_face(self, axis: str, side: str) -> sparse.csr_matrix:
        r = self.face_restriction(axis, side)
        return (r.T @ sparse.diags(self.face_norm(axis)) @ r).tocsr()

    def e_xi(self) -> sparse.csr_matrix:
        return (self.e_face("xi", "last") - self.e_face("xi", "first")).tocsr()

    def e_eta(self) -> sparse.csr_matrix:
        return (self.e_face("eta", "last") - self.e_face("eta", "first")).tocsr()


def assemble_2d(op_xi: SbpOperator1D, op_eta: SbpOperator1D) -> Operator2D:
    """Bundle two 1D operators into the tensor-product operator set."""
    return Operator2D(op_xi=op_xi, op_eta=op_eta)
