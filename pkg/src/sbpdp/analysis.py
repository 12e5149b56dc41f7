"""Quantitative verification: errors, convergence orders, conservation,
energy, global operator assembly, spectra, and the empirical CFL limit."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .advect import cfl_timestep, rhs_state, stability_polynomial
from .errors import SearchFailedError, SpectrumTooLargeError
from .mesh import Mesh

DENSE_EIG_GUARD = 8000


# ---------------------------------------------------------------------------
# norm-weighted functionals


def mass(mesh: Mesh) -> float:
    """Discrete integral of the solution, sum_e J_e 1^T H_e u_e."""
    return float(sum(e.jac * np.sum(e.ops.h_weights * e.u)
                     for e in mesh.elements))


def energy(mesh: Mesh) -> float:
    """Discrete squared L2 norm, sum_e J_e u_e^T H_e u_e."""
    return float(sum(e.jac * np.sum(e.ops.h_weights * e.u * e.u)
                     for e in mesh.elements))


def conservation_metric(mesh: Mesh, state0: np.ndarray,
                        state_t: np.ndarray) -> float:
    """|mass(state_t) - mass(state0)| on the same mesh."""
    saved = mesh.state()
    try:
        mesh.set_state(state0)
        m0 = mass(mesh)
        mesh.set_state(state_t)
        m1 = mass(mesh)
    finally:
        mesh.set_state(saved)
    return abs(m1 - m0)


def l2_error(mesh: Mesh, exact, t: float) -> float:
    """Norm-weighted L2 distance to ``exact(x, y, t)`` over all elements."""
    total = 0.0
    for e in mesh.elements:
        xx, yy = e.coords()
        diff = e.u - exact(xx, yy, t)
        total += e.jac * float(np.sum(e.ops.h_weights * diff * diff))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# convergence bookkeeping


@dataclass
class ConvergenceRow:
    dofs: int
    l2_error: float
    eoc: float | None = None


def eoc(rows: list) -> list:
    """Fill experimental convergence orders from successive rows.

    EOC_d = log(L2_d / L2_{d-1}) / log(sqrt(DOFS_{d-1} / DOFS_d));
    rows with zero error get no order (undefined marker).
    """
    if len(rows) < 2:
        return rows
    for prev, cur in zip(rows[:-1], rows[1:]):
        if cur.dofs <= prev.dofs:
            raise ValueError("convergence rows must have increasing dofs")
        if cur.l2_error == 0.0 or prev.l2_error == 0.0:
            cur.eoc = None
            continue
        cur.eoc = (math.log(cur.l2_error / prev.l2_error)
                   / math.log(math.sqrt(prev.dofs / cur.dofs)))
    return rows


# ---------------------------------------------------------------------------
# global operator and spectrum


def assemble_global(mesh: Mesh) -> sparse.csr_matrix:
    """Matrix A with du/dt = A u, assembled by probing unit states."""
    n = mesh.dofs
    cols = np.empty((n, n))
    probe = np.zeros(n)
    for j in range(n):
        probe[j] = 1.0
        cols[:, j] = rhs_state(mesh, probe)
        probe[j] = 0.0
    a = sparse.csr_matrix(cols)
    a.eliminate_zeros()
    return a


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    max_real: float
    max_abs_real: float
    dimension: int
    operator_norm: float


def spectrum(a, guard: int = DENSE_EIG_GUARD,
             check_residuals: bool = True) -> SpectrumReport:
    """Dense eigenvalue set of the global operator.

    Each eigenpair is verified against ||A v - lambda v|| <= 1e-8 ||A||.
    """
    n = a.shape[0]
    if n > guard:
        raise SpectrumTooLargeError(
            f"operator dimension {n} exceeds the dense guard {guard}; "
            "use a smaller mesh")
    dense = a.toarray() if sparse.issparse(a) else np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(dense, 2))
    eigenvalues, vectors = np.linalg.eig(dense)
    if check_residuals:
        residual = np.abs(dense @ vectors - vectors * eigenvalues[None, :])
        worst = float(residual.max())
        if worst > 1e-8 * max(norm, 1e-30):
            raise ArithmeticError(
                f"eigenpair residual {worst:.3e} exceeds 1e-8 * ||A||")
    return SpectrumReport(
        eigenvalues=eigenvalues,
        max_real=float(eigenvalues.real.max()),
        max_abs_real=float(np.abs(eigenvalues.real).max()),
        dimension=n,
        operator_norm=norm,
    )


# ---------------------------------------------------------------------------
# empirical CFL limit


@dataclass
class MaxCflResult:
    value: float
    criterion: str
    dimension: int
    tolerance: float


def max_cfl(mesh_factory, lo: float = 0.5, hi: float = 4.0,
            tol: float = 0.01) -> MaxCflResult:
    """Largest CFL for which every dt*lambda stays inside the RK
    stability region.

    The criterion is spectral: the full eigenvalue set of the assembled
    operator of a representative mesh, scaled by the CFL time step, must
    satisfy |R(dt lambda)| <= 1 for the five-stage scheme's amplification
    polynomial R.
    """
    mesh = mesh_factory()
    a = assemble_global(mesh)
    n = a.shape[0]
    if n > DENSE_EIG_GUARD:
        raise SpectrumTooLargeError(
            f"representative mesh has {n} dofs; pick a smaller one")
    eigenvalues = np.linalg.eigvals(a.toarray())
    base_dt = cfl_timestep(mesh, 1.0)
    coeffs = stability_polynomial()[::-1]

    def stable(cfl: float) -> bool:
        z = cfl * base_dt * eigenvalues
        return bool(np.abs(np.polyval(coeffs, z)).max() <= 1.0 + 1e-9)

    if not stable(lo):
        raise SearchFailedError(f"lower bound cfl={lo} is already unstable")
    if stable(hi):
        raise SearchFailedError(f"upper bound cfl={hi} is still stable")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return MaxCflResult(value=0.5 * (lo + hi),
                        criterion="spectral-stability-region",
                        dimension=n, tolerance=tol)


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_convergence_csv(path, rows: list) -> None:
    lines = ["dofs,l2,eoc"]
    lines += [f"{r.dofs},{_fmt(r.l2_error)},{_fmt(r.eoc)}" for r in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_spectrum_csv(path, report: SpectrumReport) -> None:
    order = np.lexsort((report.eigenvalues.imag, report.eigenvalues.real))
    lines = ["re,im"]
    lines += [f"{_fmt(float(ev.real))},{_fmt(float(ev.imag))}"
              for ev in report.eigenvalues[order]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path, times, energies, masses) -> None:
    lines = ["t,energy,mass"]
    lines += [f"{_fmt(float(t))},{_fmt(float(e))},{_fmt(float(m))}"
              for t, e, m in zip(times, energies, masses)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
