"""Aggregation cost terms, hypothesis selection and the planar-prior baseline cost."""
import math
from dataclasses import dataclass, field

import numpy as np

from core.config import AggregationParams, BaselineAggParams
from core.errors import DomainError
from core.geometry import PlaneHypothesis

from stages.prior.candidates import Choice

# Candidates in tie-break order: the more informative prior wins ties
SELECTION_ORDER = (Choice.SAM, Choice.TRI, Choice.RAW)


def smooth_term(neighbor_L) -> float:
    """min(L) / sum(L) over the available neighbours; 0 when none or when the sum is 0."""
    values = [float(v) for v in neighbor_L]
    if any(v < 0 or not math.isfinite(v) for v in values):
        raise DomainError(f"neighbour costs must be finite and >= 0, got {values}")
    total = sum(values)
    if not values or total == 0:
        return 0.0
    return min(values) / total


def global_agg_cost(cost_ph: float, cost_geo: float, l_smooth: float, params: AggregationParams) -> float:
    """L_agg = Cost_ph + alpha_geo * Cost_geo + L_smooth."""
    return cost_ph + params.alpha_geo * cost_geo + l_smooth


def likelihood_factors(cost_ph: float, cost_geo: float, l_smooth: float,
                       alpha_geo: float) -> tuple[float, float, float]:
    """Photometric likelihood, planar prior and aggregation likelihood of one hypothesis.

    Their product is exp(-L_agg).
    """
    return math.exp(-cost_ph), math.exp(-alpha_geo * cost_geo), math.exp(-l_smooth)


def penalty(choice: Choice, params: AggregationParams) -> float:
    return {Choice.SAM: 0.0, Choice.TRI: params.P1, Choice.RAW: params.P2}[choice]


def select_hypothesis(L_sam: float | None, L_tri: float | None, L_raw: float,
                      params: AggregationParams) -> tuple[Choice, float]:
    """argmin{L_sam, L_tri + P1, L_raw + P2}; returns the winner and its un-penalised L."""
    values = {Choice.SAM: L_sam, Choice.TRI: L_tri, Choice.RAW: L_raw}
    best, best_total = Choice.RAW, math.inf
    for choice in SELECTION_ORDER:
        value = values[choice]
        if value is None:
            continue
        total = value + penalty(choice, params)
        if total < best_total:
            best, best_total = choice, total
    return best, values[best]


def baseline_acmp_cost(cost_mph: float, hyp: PlaneHypothesis, prior: PlaneHypothesis,
                       params: BaselineAggParams) -> float:
    """Cost_mph^2 / alpha - log[gamma + exp(-(d_i - d_p) / 2 l_d) exp(-arccos^2(n_i . n_p) / 2 l_n)].

    d_i - d_p is taken relative to d_p.
    """
    return float(
        baseline_cost_array(
            np.float64(cost_mph), np.float64(hyp.depth), np.asarray(hyp.normal),
            np.float64(prior.depth), np.asarray(prior.normal), params,
        )
    )


def baseline_cost_array(cost_mph, d_i, n_i, d_p, n_p, params: BaselineAggParams) -> np.ndarray:
    """Vectorised baseline cost; normals on the last axis."""
    cos = np.clip(np.sum(np.asarray(n_i) * np.asarray(n_p), axis=-1), -1.0, 1.0)
    rel = (np.asarray(d_i) - d_p) / d_p
    with np.errstate(over="ignore"):
        prior_term = np.exp(-rel / (2.0 * params.lambda_d)) * np.exp(-np.arccos(cos) ** 2 / (2.0 * params.lambda_n))
    return np.asarray(cost_mph) ** 2 / params.alpha - np.log(params.gamma + prior_term)


@dataclass
class HypothesisUpdateContext:
    """Everything the update of one pixel conditions on."""

    pixel: tuple[int, int]
    choice: Choice
    theta_i: PlaneHypothesis
    theta_p: PlaneHypothesis | None
    cost_ph: float
    cost_geo: float
    theta_n: list[PlaneHypothesis] = field(default_factory=list)
    L_n: list[float] = field(default_factory=list)
    # Source views that saw the hypothesis (cost below the cap)
    V_src: list[bool] = field(default_factory=list)


def neg_log_posterior(ctx: HypothesisUpdateContext, params: AggregationParams) -> float:
    """-log of the product of the three likelihood factors; equals L_agg."""
    factors = likelihood_factors(ctx.cost_ph, ctx.cost_geo, smooth_term(ctx.L_n), params.alpha_geo)
    return -math.log(math.prod(factors))
