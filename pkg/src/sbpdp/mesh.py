"""Cartesian element meshes on the unit square with periodic coupling.

The domain [0,1]^2 is split into n_x x n_y axis-aligned elements, each
mapped affinely onto the reference square. The mesh patterns control the
per-element node counts only:

* ``uniform``       -- every element gets n1 nodes per direction;
* ``quadrant``      -- the four quadrants alternate n1/n2 in a 2x2 layout,
                       so nodes disagree along both mid-seams (and along
                       the periodic wrap seams);
* ``checkerboard``  -- elements alternate n1/n2 like a checkerboard, so no
                       interior interface is conforming when n_x, n_y are
                       even.

Every element face belongs to exactly one interface; periodic wrap faces
are ordinary interfaces between the boundary elements. Non-conforming
interfaces carry a projection pair onto an intermediate grid chosen by
the glue policy.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .glue import (
    IntermediateGrid,
    ProjectionPair,
    build_projection,
    build_reduced_projection,
    intermediate_from_operator,
    legendre_gauss,
)
from .sbp1d import (
    OperatorKind,
    SbpOperator1D,
    construct_classical,
    construct_degree_preserving,
)
from .tensor2d import Operator2D, assemble_2d

CONFORMING_ATOL = 1e-13

GLUE_POLICIES = ("left", "right", "double", "gauss_minimal", "explicit")


@dataclass(frozen=True)
class MeshPattern:
    kind: str
    n_x: int
    n_y: int
    n_nodes: int
    n_nodes_2: int | None = None

    @classmethod
    def uniform(cls, n_nodes: int, n_x: int, n_y: int) -> "MeshPattern":
        return cls("uniform", n_x, n_y, n_nodes)

    @classmethod
    def quadrant(cls, n1: int, n2: int, n_x: int, n_y: int) -> "MeshPattern":
        if n_x % 2 or n_y % 2:
            raise ValueError("quadrant pattern needs even element counts")
        return cls("quadrant", n_x, n_y, n1, n2)

    @classmethod
    def checkerboard(cls, n1: int, n2: int, n_x: int, n_y: int) -> "MeshPattern":
        return cls("checkerboard", n_x, n_y, n1, n2)

    def node_count(self, ix: int, iy: int) -> int:
        if self.kind == "uniform":
            return self.n_nodes
        if self.kind == "quadrant":
            # 2x2 layout of quadrants: main diagonal n1, off diagonal n2
            left = ix < self.n_x // 2
            bottom = iy < self.n_y // 2
            return self.n_nodes if left == bottom else self.n_nodes_2
        if self.kind == "checkerboard":
            return self.n_nodes if (ix + iy) % 2 == 0 else self.n_nodes_2
        raise ValueError(f"unknown mesh pattern {self.kind!r}")

    def node_counts(self) -> tuple:
        counts = {self.node_count(ix, iy)
                  for ix in range(self.n_x) for iy in range(self.n_y)}
        return tuple(sorted(counts))


class OperatorRegistry:
    """Cache of constructed 1D operators keyed by (kind, p, n)."""

    def __init__(self):
        self._ops = {}

    def add(self, op: SbpOperator1D) -> None:
        self._ops[(op.kind, op.p, op.n)] = op

    def get(self, kind: OperatorKind, p: int, n: int) -> SbpOperator1D:
        try:
            return self._ops[(OperatorKind(kind), p, n)]
        except KeyError:
            raise ConfigurationError(
                f"operator ({OperatorKind(kind).value}, p={p}, N={n}) "
                "is not in the registry") from None

    def ensure(self, kind: OperatorKind, p: int, n: int) -> SbpOperator1D:
        kind = OperatorKind(kind)
        key = (kind, p, n)
        if key not in self._ops:
            builder = (construct_classical if kind is OperatorKind.CLASSICAL
                       else construct_degree_preserving)
            self._ops[key] = builder(p, n)
        return self._ops[key]

    def operators(self):
        return list(self._ops.values())


@dataclass(frozen=True)
class GluePolicy:
    policy: str
    grid: IntermediateGrid | None = None

    def __post_init__(self):
        if self.policy not in GLUE_POLICIES:
            raise ConfigurationError(
                f"unknown glue policy {self.policy!r}; "
                f"expected one of {GLUE_POLICIES}")
        if self.policy == "explicit" and self.grid is None:
            raise ConfigurationError("explicit glue policy needs a grid")


@dataclass
class Element:
    index: int
    ix: int
    iy: int
    x0: float
    x1: float
    y0: float
    y1: float
    ops: Operator2D
    jac: float
    lam_xi: float
    lam_eta: float
    u: np.ndarray = None  # view into the owning group's storage

    @property
    def n(self) -> int:
        return self.ops.n

    @property
    def x_nodes(self) -> np.ndarray:
        ref = self.ops.op_xi.grid.nodes
        return self.x0 + (ref + 1.0) * (self.x1 - self.x0) / 2.0

    @property
    def y_nodes(self) -> np.ndarray:
        ref = self.ops.op_eta.grid.nodes
        return self.y0 + (ref + 1.0) * (self.y1 - self.y0) / 2.0

    def coords(self):
        return np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")


@dataclass
class Interface:
    axis: str  # "x" couples xi-direction faces, "y" couples eta-direction
    left: Element
    right: Element
    pair: ProjectionPair
    sigma: float
    lam: float

    @property
    def conforming(self) -> bool:
        return self.pair.identity_left and self.pair.identity_right


@dataclass
class ElementGroup:
    ops: Operator2D
    element_indices: list
    u: np.ndarray  # (len(elements), n_xi, n_eta)


@dataclass
class Mesh:
    pattern: MeshPattern
    sigma: float
    beta: tuple
    elements: list
    interfaces: list
    groups: list
    group_of: dict = field(default_factory=dict)  # element index -> (gid, slot)
    plan: object = None  # solver kernels, attached lazily by advect

    @property
    def dofs(self) -> int:
        return sum(e.n for e in self.elements)

    def state(self) -> np.ndarray:
        return np.concatenate([e.u.ravel() for e in self.elements])

    def set_state(self, vec: np.ndarray) -> None:
        pos = 0
        for e in self.elements:
            e.u[...] = vec[pos:pos + e.n].reshape(e.ops.shape)
            pos += e.n
        if pos != vec.size:
            raise ValueError("state vector length does not match mesh dofs")

    def apply_initial_condition(self, fn) -> None:
        for e in self.elements:
            xx, yy = e.coords()
            e.u[...] = fn(xx, yy)

    def total_quadrature(self) -> float:
        """sum_e J_e 1^T H_e 1; equals the domain area for valid norms."""
        total = 0.0
        for e in self.elements:
            total += e.jac * float(np.sum(e.ops.h_weights))
        return total


def _intermediate_for(policy: GluePolicy, registry: OperatorRegistry,
                      kind: OperatorKind, p: int,
                      op_l: SbpOperator1D, op_r: SbpOperator1D) -> IntermediateGrid:
    if policy.policy == "left":
        return intermediate_from_operator(op_l)
    if policy.policy == "right":
        return intermediate_from_operator(op_r)
    if policy.policy == "double":
        n_double = 2 * max(op_l.n, op_r.n)
        return intermediate_from_operator(registry.get(kind, p, n_double))
    if policy.policy == "gauss_minimal":
        return legendre_gauss(p + 1)
    return policy.grid


def build_mesh(pattern: MeshPattern, registry: OperatorRegistry,
               glue: GluePolicy, sigma: float, kind: OperatorKind, p: int,
               beta: tuple = (1.0, 1.0), pair_cache: dict = None) -> Mesh:
    """Create elements, group them by shape, and register all interfaces.

    Conforming faces (nodewise equal within 1e-13) get identity pairs.
    Non-conforming faces get a projection pair of degree p for
    degree-preserving operators and degree p-1 for classical ones, built
    on the intermediate grid selected by the glue policy. Passing a
    ``pair_cache`` dict shares built pairs across meshes of one study.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    kind = OperatorKind(kind)
    n_x, n_y = pattern.n_x, pattern.n_y
    dx, dy = 1.0 / n_x, 1.0 / n_y
    beta_x, beta_y = beta

    ops2d = {}
    for n in pattern.node_counts():
        op1d = registry.get(kind, p, n)
        ops2d[n] = assemble_2d(op1d, op1d)

    elements = []
    for iy in range(n_y):
        for ix in range(n_x):
            n = pattern.node_count(ix, iy)
            elements.append(Element(
                index=iy * n_x + ix, ix=ix, iy=iy,
                x0=ix * dx, x1=(ix + 1) * dx,
                y0=iy * dy, y1=(iy + 1) * dy,
                ops=ops2d[n],
                jac=dx * dy / 4.0,
                lam_xi=beta_x * dy / 2.0,
                lam_eta=beta_y * dx / 2.0,
            ))

    groups = []
    group_ids = {}
    group_of = {}
    for e in elements:
        n = e.ops.n_xi
        if n not in group_ids:
            group_ids[n] = len(groups)
            groups.append(ElementGroup(ops=e.ops, element_indices=[], u=None))
        gid = group_ids[n]
        group_of[e.index] = (gid, len(groups[gid].element_indices))
        groups[gid].element_indices.append(e.index)
    for g in groups:
        g.u = np.zeros((len(g.element_indices),) + g.ops.shape)
    for e in elements:
        gid, slot = group_of[e.index]
        e.u = groups[gid].u[slot]

    if pair_cache is None:
        pair_cache = {}

    def pair_for(op_l: SbpOperator1D, op_r: SbpOperator1D) -> ProjectionPair:
        key = (kind, p, glue.policy, op_l.n, op_r.n)
        if key in pair_cache:
            return pair_cache[key]
        conforming = (op_l.n == op_r.n and np.abs(
            op_l.grid.nodes - op_r.grid.nodes).max() <= CONFORMING_ATOL)
        if conforming:
            inter = intermediate_from_operator(op_l)
            pair = build_projection(op_l.grid, op_r.grid, inter,
                                    op_l.h_diag, op_r.h_diag, p)
        else:
            inter = _intermediate_for(glue, registry, kind, p, op_l, op_r)
            if kind is OperatorKind.DEGREE_PRESERVING:
                pair = build_projection(op_l.grid, op_r.grid, inter,
                                        op_l.h_diag, op_r.h_diag, p)
            else:
                pair = build_reduced_projection(op_l.grid, op_r.grid, inter,
                                                op_l.h_diag, op_r.h_diag, p)
        pair_cache[key] = pair
        return pair

    interfaces = []
    for e in elements:
        right = elements[e.iy * n_x + (e.ix + 1) % n_x]
        interfaces.append(Interface(
            axis="x", left=e, right=right,
            pair=pair_for(e.ops.op_eta, right.ops.op_eta),
            sigma=sigma, lam=e.lam_xi))
        assert abs(e.lam_xi - right.lam_xi) < 1e-15
        top = elements[((e.iy + 1) % n_y) * n_x + e.ix]
        interfaces.append(Interface(
            axis="y", left=e, right=top,
            pair=pair_for(e.ops.op_xi, top.ops.op_xi),
            sigma=sigma, lam=e.lam_eta))
        assert abs(e.lam_eta - top.lam_eta) < 1e-15

    return Mesh(pattern=pattern, sigma=sigma, beta=(beta_x, beta_y),
                elements=elements, interfaces=interfaces, groups=groups,
                group_of=group_of)
