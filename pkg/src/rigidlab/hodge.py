"""Hodge split of a matrix field into a gradient and a tangential
divergence-free residual.

``beta = Du + Y`` where ``u`` solves the row-wise Neumann problem driven
by ``div beta`` with flux ``beta n``, the gradient is filled with that
flux on boundary faces, and ``Y = beta - Du``.  On the staggered layout
the three certificates (row divergence of ``Y``, normal trace of ``Y``,
curl transfer ``curl Y = curl beta``) then hold to machine precision and
are re-measured here rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConsistencyError, DegenerateInputError, DomainError
from .fields import (
    CELL,
    STAGGERED,
    IncompatibilityMeasure,
    NormSpec,
    TensorField,
    VectorField,
    critical_exponent,
    lp_norm,
)
from .operators import curl_edge_data, div_rows, grad
from .poisson import NeumannProblem, SolveInfo, solve_neumann


@dataclass
class HodgeSplit:
    """Gradient part, residual, and certified residual norms."""

    gradient_part: TensorField
    residual: TensorField
    potential: VectorField
    div_residual: float
    trace_residual: float
    curl_transfer_residual: float
    infos: List[SolveInfo]

    def as_record(self) -> dict:
        return {
            "type": "hodge-split",
            "div_residual": self.div_residual,
            "trace_residual": self.trace_residual,
            "curl_transfer_residual": self.curl_transfer_residual,
        }


def _relative_div(Y: TensorField, beta: TensorField) -> float:
    div_y = div_rows(Y).values
    div_b = div_rows(beta).values
    h = min(beta.grid.spacing)
    scale = max(float(np.abs(div_b).max()), _sup(beta) / h, 1e-300)
    return float(np.abs(div_y).max()) / scale


def _sup(beta: TensorField) -> float:
    if beta.placement == CELL:
        return float(np.abs(beta.values).max())
    return max(float(np.abs(c).max()) for row in beta.comps for c in row)


def _trace_residual(Y: TensorField) -> float:
    worst = 0.0
    for i in range(Y.n):
        for g in Y.boundary_flux(i).values():
            worst = max(worst, float(np.abs(g).max(initial=0.0)))
    return worst / max(_sup(Y), 1e-300)


def _curl_transfer_residual(Y: TensorField, beta: TensorField) -> float:
    ey = curl_edge_data(Y)
    eb = curl_edge_data(beta)
    err, scale = 0.0, 0.0
    for row_y, row_b in zip(ey, eb):
        for key in row_y:
            err = max(err, float(np.abs(row_y[key] - row_b[key]).max(initial=0.0)))
            scale = max(scale, float(np.abs(row_b[key]).max(initial=0.0)))
    scale = max(scale, _sup(beta) / min(beta.grid.spacing))
    return err / max(scale, 1e-300)


def hodge_split(beta: TensorField) -> HodgeSplit:
    """Split ``beta`` against the row-wise Neumann solve on a cube."""
    if not beta.domain.is_cube:
        raise DomainError("the split is defined on cube domains")
    if beta.placement != STAGGERED:
        raise DomainError("the split needs a staggered field")
    problem = NeumannProblem.from_field(beta)
    u, infos = solve_neumann(problem)
    flux_rows = [beta.boundary_flux(i) for i in range(beta.n)]
    du = grad(VectorField(beta.domain, u, CELL), flux_rows=flux_rows)
    Y = beta - du
    return HodgeSplit(
        gradient_part=du,
        residual=Y,
        potential=VectorField(beta.domain, u, CELL),
        div_residual=_relative_div(Y, beta),
        trace_residual=_trace_residual(Y),
        curl_transfer_residual=_curl_transfer_residual(Y, beta),
        infos=infos,
    )


def divcurl_ratio(Y: TensorField, measure: Optional[IncompatibilityMeasure] = None,
                  p: Optional[float] = None, tangential_tol: float = 1e-6) -> float:
    """Critical-norm-to-curl-mass ratio of a div-free tangential field.

    Returns ``|Y|_{L^p} / |curl Y|(domain)`` with ``p`` defaulting to the
    critical exponent ``n/(n-1)``.  When a symbolic measure is supplied
    its total variation is used (rasterized mass would inflate under
    refinement); otherwise the mass of the discrete curl is summed.
    The hypotheses are certified first: fields that are measurably not
    divergence-free and tangential are rejected, and a vanishing curl
    with a nonzero field is reported instead of silently dividing.
    """
    from .operators import curl_general  # local to avoid cycles at import

    if p is None:
        p = critical_exponent(Y.n)
    div_rel = float(np.abs(div_rows(Y).values).max()) * min(Y.grid.spacing)
    sup = _sup(Y)
    if sup == 0.0:
        raise DegenerateInputError("zero field has no ratio")
    if div_rel / sup > tangential_tol:
        raise ConsistencyError(f"field is not divergence-free: {div_rel / sup:.3e}")
    if _trace_residual(Y) > tangential_tol:
        raise ConsistencyError("field has a nonzero normal boundary trace")
    if measure is not None:
        tv = measure.total_variation()
    else:
        tv = curl_general(Y).total_variation()
    norm = lp_norm(Y, NormSpec(p))
    if tv <= 0.0:
        raise ConsistencyError(
            f"curl mass vanished (norm {norm:.3e}); the ratio hypotheses fail"
        )
    return norm / tv
