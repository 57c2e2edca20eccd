"""Diagnostics: key spectral quantities, the three-way error decomposition,
Wedin/Procrustes checks, the bias/variance regime classifier, the estimator
recommender and the minimax lower bound.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .datamodel import Dataset, GroundTruth
from .estimators import FirstStage
from .speclin import (
    ThinSvd,
    condition_number,
    cross_condition,
    operator_norm,
    principal_angle_cosines,
    procrustes_rotation,
    thin_svd,
)

TIE_TOL = 1e-9


class TruthRequired(ValueError):
    pass


class InvalidInput(ValueError):
    pass


class Regime(str, enum.Enum):
    BIAS_DOMINATED = "BiasDominated"
    VARIANCE_DOMINATED = "VarianceDominated"
    INDETERMINATE = "Indeterminate"


class Recommendation(str, enum.Enum):
    CCA = "CCA"
    WHITEN = "Whiten"
    PCA = "PCA"
    BOUNDARY = "Boundary"


class TruthFactors:
    """Spectral factors of the clean signals, computed lazily and reused."""

    def __init__(self, truth: GroundTruth):
        if truth is None:
            raise TruthRequired("ground truth is required")
        self.truth = truth

    @cached_property
    def x(self) -> ThinSvd:
        return thin_svd(self.truth.x)

    @cached_property
    def w(self) -> ThinSvd:
        return thin_svd(self.truth.w)

    @cached_property
    def overlap(self) -> np.ndarray:
        return self.w.u.T @ self.x.u

    @cached_property
    def delta(self) -> ThinSvd:
        # oracle weights: identity on the left, Sigma_* on the right
        return thin_svd(self.overlap * self.x.s[None, :])


def _factors(truth) -> TruthFactors:
    return truth if isinstance(truth, TruthFactors) else TruthFactors(truth)


# ---------------------------------------------------------------- key quantities


@dataclass
class KeyQuantities:
    nsr_x: float | None
    nsr_w: float | None
    kappa_x: float | None
    kappa_w: float | None
    kappa_xw: float | None
    sigma_min_x: float | None
    sigma_max_x: float | None
    sigma_min_w: float | None
    sigma_max_w: float | None
    overlap_cosines: list[float] | None
    overlap_cosines_empirical: list[float]
    r: int
    r_star: int | None
    sigma_bar_sq: float | None
    c_ell: float
    c_k: float

    def to_dict(self) -> dict:
        return asdict(self)


def restricted_eigen_constants(z_x: np.ndarray, z_w: np.ndarray, k: int, ell: int) -> tuple[float, float]:
    """c_ell and c_k from the full noisy overlap Utilde^T U = Q S R^T.

    Q and R are restricted to their leading min(k, ell) columns before the
    row truncation, so full column rank is attainable.
    """
    u = thin_svd(z_x).u
    ut = thin_svd(z_w).u
    q, _, rt = np.linalg.svd(ut.T @ u, full_matrices=False)
    m = min(k, ell, q.shape[1])
    q_ell = q[:ell, :m]
    r_k = rt.T[:k, :m]
    c_ell = float(np.linalg.eigvalsh(q_ell.T @ q_ell)[0])
    c_k = float(np.linalg.eigvalsh(r_k.T @ r_k)[0])
    return max(c_ell, 0.0), max(c_k, 0.0)


def key_quantities(dataset: Dataset, fs: FirstStage, sigma_bar_sq: float | None = None,
                   require_truth: bool = True) -> KeyQuantities:
    """Noise-to-signal ratios, condition numbers, overlaps and ranks.

    Without ground truth the truth-dependent fields are None, unless
    ``require_truth`` is set, in which case TruthRequired is raised.
    """
    k, ell = fs.cov.rank, fs.inst.rank
    empirical = np.clip(np.linalg.svd(fs.overlap, compute_uv=False), 0.0, None).tolist()
    c_ell, c_k = restricted_eigen_constants(dataset.z_x, dataset.z_w, fs.cov.requested or k,
                                            fs.inst.requested or ell)
    if dataset.truth is None:
        if require_truth:
            raise TruthRequired("key quantities need ground truth")
        return KeyQuantities(None, None, None, None, None, None, None, None, None, None,
                             empirical, fs.r, None, sigma_bar_sq, c_ell, c_k)

    tf = TruthFactors(dataset.truth)
    sx, sw = tf.x.s, tf.w.s
    nsr_x = operator_norm(dataset.h_x) ** 2 / sx[-1] ** 2
    nsr_w = operator_norm(dataset.h_w) ** 2 / sw[-1] ** 2
    cosines = principal_angle_cosines(tf.x.u, tf.w.u).tolist()
    return KeyQuantities(
        nsr_x=float(nsr_x),
        nsr_w=float(nsr_w),
        kappa_x=condition_number(sx),
        kappa_w=condition_number(sw),
        kappa_xw=cross_condition(sx[0], sw[-1]),
        sigma_min_x=float(sx[-1]),
        sigma_max_x=float(sx[0]),
        sigma_min_w=float(sw[-1]),
        sigma_max_w=float(sw[0]),
        overlap_cosines=cosines,
        overlap_cosines_empirical=empirical,
        r=fs.r,
        r_star=tf.delta.rank,
        sigma_bar_sq=sigma_bar_sq,
        c_ell=c_ell,
        c_k=c_k,
    )


# ---------------------------------------------------------------- decomposition


@dataclass
class DecompositionReport:
    term_row: float
    term_null: float
    term_perp: float
    total: float

    @property
    def residual(self) -> float:
        return abs(self.total - (self.term_row + self.term_null + self.term_perp))

    def identity_holds(self, rel: float = 1e-9, floor: float = 1e-20) -> bool:
        # exact fits leave a roundoff-sized total, where relative error means nothing
        return self.residual <= rel * self.total + floor


@dataclass
class ProjectorSuite:
    row: np.ndarray
    null: np.ndarray
    perp: np.ndarray
    null_star: np.ndarray | None = None
    perp_star: np.ndarray | None = None


def projector_suite(fs: FirstStage, truth=None) -> ProjectorSuite:
    """Materialized p x p projectors; use for checks on modest p."""
    vk = fs.cov.v
    p = vk.shape[0]
    b = vk @ fs.delta_svd.v
    row = b @ b.T
    vvt = vk @ vk.T
    null = vvt - row
    perp = np.eye(p) - vvt
    null_star = perp_star = None
    if truth is not None:
        tf = _factors(truth)
        vs = tf.x.v
        bs = vs @ tf.delta.v
        null_star = vs @ vs.T - bs @ bs.T
        perp_star = np.eye(p) - vs @ vs.T
    return ProjectorSuite(row, null, perp, null_star, perp_star)


def _null_part(v: np.ndarray, t: np.ndarray, b: np.ndarray) -> np.ndarray:
    """V (I - T T^T) V^T b without forming p x p matrices."""
    c = v.T @ b
    return v @ (c - t @ (t.T @ c))


def error_decomposition(beta_hat: np.ndarray, truth, fs: FirstStage) -> DecompositionReport:
    """Split ||beta_hat - beta*||^2 into row-space, null-space and off-span terms."""
    if truth is None:
        raise TruthRequired("error decomposition needs ground truth")
    tf = _factors(truth)
    beta = tf.truth.beta
    vk, t = fs.cov.v, fs.delta_svd.v
    vs, ts = tf.x.v, tf.delta.v

    diff = beta_hat - beta
    term_row = float(np.sum((t.T @ (vk.T @ diff)) ** 2))
    null_gap = _null_part(vs, ts, beta) - _null_part(vk, t, beta)
    # (Pi*_perp - Pi_perp) beta = V_k V_k^T beta - V_* V_*^T beta
    perp_gap = vk @ (vk.T @ beta) - vs @ (vs.T @ beta)
    return DecompositionReport(
        term_row=term_row,
        term_null=float(null_gap @ null_gap),
        term_perp=float(perp_gap @ perp_gap),
        total=float(diff @ diff),
    )


# ---------------------------------------------------------------- Wedin check


@dataclass
class WedinReport:
    lhs_v: float
    rhs_v: float
    lhs_u: float
    rhs_u: float
    holds_v: bool
    holds_u: bool
    small_noise_x: bool
    small_noise_w: bool

    @property
    def holds(self) -> bool:
        return self.holds_v and self.holds_u

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def wedin_check(dataset: Dataset, fs: FirstStage) -> WedinReport:
    """Procrustes-aligned singular-subspace deviations against the Wedin bounds."""
    if dataset.truth is None:
        raise TruthRequired("Wedin check needs ground truth")
    tf = TruthFactors(dataset.truth)
    hx = operator_norm(dataset.h_x)
    hw = operator_norm(dataset.h_w)
    sk, sl = tf.x.s[-1], tf.w.s[-1]

    def aligned_gap(star: np.ndarray, est: np.ndarray) -> float:
        if star.shape != est.shape:
            return math.nan
        q = procrustes_rotation(star, est)
        return operator_norm(star - est @ q)

    lhs_v = aligned_gap(tf.x.v, fs.cov.v)
    lhs_u = aligned_gap(tf.w.u, fs.inst.u)
    rhs_v = math.sqrt(2.0) * hx / sk
    rhs_u = math.sqrt(2.0) * hw / sl
    return WedinReport(
        lhs_v=lhs_v, rhs_v=rhs_v, lhs_u=lhs_u, rhs_u=rhs_u,
        holds_v=bool(lhs_v <= rhs_v + 1e-12),
        holds_u=bool(lhs_u <= rhs_u + 1e-12),
        small_noise_x=bool(hx <= sk),
        small_noise_w=bool(hw <= sl),
    )


# ---------------------------------------------------------------- phase diagram


def classify_regime(nsr_total: float, kappa_xw: float, sigma_bar_sq: float, r: int,
                    c_bias: float = 1.0, c_var: float = 1.0) -> Regime:
    """Bias- versus variance-dominated region of the phase diagram.

    ``c_bias`` and ``c_var`` stand in for the unspecified universal constants
    of the two inequalities.
    """
    k2 = kappa_xw**2
    t_hi = c_bias * sigma_bar_sq * r / k2
    t_lo = c_var * sigma_bar_sq * r / k2 - 1.0 / k2
    if nsr_total >= t_hi:
        return Regime.BIAS_DOMINATED
    if nsr_total <= t_lo:
        return Regime.VARIANCE_DOMINATED
    return Regime.INDETERMINATE


def recommend_estimator(regime: Regime, sigma_min_x: float, sigma_max_w: float, kappa_w: float,
                        tol: float = TIE_TOL) -> Recommendation:
    """Pick the weighting with the smallest upper bound in the given regime."""
    regime = Regime(regime)
    if regime is Regime.INDETERMINATE:
        return Recommendation.BOUNDARY
    g = sigma_max_w if regime is Regime.VARIANCE_DOMINATED else kappa_w
    s = sigma_min_x
    # each region: margins that must be >= 0
    regions = {
        Recommendation.CCA: (1.0 - g, 1.0 - g * s),
        Recommendation.PCA: (s - 1.0, g * s - 1.0),
        Recommendation.WHITEN: (g - 1.0, 1.0 - s),
    }
    inside = [rec for rec, margins in regions.items() if min(margins) > tol]
    if len(inside) == 1:
        return inside[0]
    return Recommendation.BOUNDARY


@dataclass
class LowerBound:
    value: float
    term1: float
    term2: float
    low_rank_condition: bool


def minimax_lower_bound(sigma_eps: float, sigma_x_noise: float, r_star: int,
                        sigma_min_w: float, sigma_max_overlap: float) -> LowerBound:
    """Evaluate the two-term minimax lower bound; a nonpositive denominator gives inf."""
    if sigma_eps <= 0 or r_star < 1 or sigma_min_w <= 0:
        raise InvalidInput("need sigma_eps > 0, r_star >= 1, sigma_min_w > 0")
    if not 0 < sigma_max_overlap <= 1:
        raise InvalidInput(f"sigma_max_overlap must lie in (0, 1], got {sigma_max_overlap}")
    if sigma_x_noise < 0:
        raise InvalidInput("sigma_x_noise must be nonnegative")
    numer = sigma_eps**2 * r_star * sigma_min_w**2
    s2 = sigma_max_overlap**2
    denom = s2 - r_star * sigma_x_noise**2 * sigma_min_w**2 / 8.0
    term1 = numer / denom if denom > 0 else math.inf
    term2 = numer / s2
    noise_side = sigma_x_noise**2 * sigma_min_w**2
    low_rank = noise_side == 0 or r_star < 8.0 * s2 / noise_side
    return LowerBound(max(term1, term2), term1, term2, bool(low_rank))


def to_json_safe(obj):
    """Replace infinities by the string "inf" (and NaN by None) recursively."""
    if isinstance(obj, dict):
        return {k: to_json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_json_safe(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return None
        return f
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
