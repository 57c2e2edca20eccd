"""Canonical correlation regression and its baselines.

Every member of the family regresses the outcome on

    P = U_inst @ A_L @ (U_inst.T @ U_cov) @ A_R @ V_cov.T

where (U_cov, V_cov) come from the rank-k truncated SVD of the noisy
covariates and U_inst from the rank-ell truncated SVD of the noisy
instruments.  PCA, whitening and CCA first stages differ only in the
diagonal weights (A_L, A_R).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .speclin import (
    RANK_TOL,
    ThinSvd,
    TruncatedSvd,
    min_norm_solve,
    thin_svd,
    truncate,
)


class SingularWeight(ValueError):
    pass


class EstimatorKind(str, enum.Enum):
    NAIVE = "naive"
    PCA = "pca"
    WHITEN = "whiten"
    CCA = "cca"
    ORACLE = "oracle"
    CUSTOM = "custom"


class LeftWeight(str, enum.Enum):
    IDENTITY = "identity"
    INVERSE_INSTRUMENT_SPECTRUM = "inverse_instrument_spectrum"
    CUSTOM = "custom"


class RightWeight(str, enum.Enum):
    IDENTITY = "identity"
    COVARIATE_SPECTRUM = "covariate_spectrum"
    CUSTOM = "custom"


@dataclass(frozen=True)
class WeightSpec:
    left: LeftWeight = LeftWeight.IDENTITY
    right: RightWeight = RightWeight.IDENTITY
    left_values: tuple[float, ...] | None = None
    right_values: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "left", LeftWeight(self.left))
        object.__setattr__(self, "right", RightWeight(self.right))
        for side, kind, values in (("left", self.left, self.left_values),
                                   ("right", self.right, self.right_values)):
            if kind.value == "custom":
                if values is None or len(values) == 0:
                    raise ValueError(f"custom {side} weight needs values")
                if min(values) <= 0:
                    raise ValueError(f"custom {side} weights must be strictly positive")


NAMED_WEIGHTS = {
    EstimatorKind.PCA: WeightSpec(LeftWeight.IDENTITY, RightWeight.COVARIATE_SPECTRUM),
    EstimatorKind.WHITEN: WeightSpec(LeftWeight.IDENTITY, RightWeight.IDENTITY),
    EstimatorKind.CCA: WeightSpec(LeftWeight.INVERSE_INSTRUMENT_SPECTRUM, RightWeight.IDENTITY),
}

DISPLAY_NAMES = {
    EstimatorKind.NAIVE: "Naive2SLS",
    EstimatorKind.PCA: "Pca2SLS",
    EstimatorKind.WHITEN: "Whiten2SLS",
    EstimatorKind.CCA: "Cca2SLS",
    EstimatorKind.ORACLE: "OracleTSLS",
    EstimatorKind.CUSTOM: "CustomCCR",
}


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind
    k: int = 8
    ell: int = 10
    pinv_tol: float = RANK_TOL
    weights: WeightSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if self.k < 1 or self.ell < 1:
            raise ValueError(f"truncation ranks must be positive, got k={self.k}, ell={self.ell}")
        if self.kind is EstimatorKind.CUSTOM and self.weights is None:
            raise ValueError("custom estimator needs a WeightSpec")
        if self.k > self.ell:
            warnings.warn(f"k={self.k} > ell={self.ell}: fewer instrument than covariate directions",
                          stacklevel=2)

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def weight_spec(self) -> WeightSpec:
        if self.kind is EstimatorKind.CUSTOM:
            return self.weights
        try:
            return NAMED_WEIGHTS[self.kind]
        except KeyError:
            raise ValueError(f"{self.kind.value} is not a CCR family member with fixed weights") from None


@dataclass(frozen=True)
class FirstStage:
    cov: TruncatedSvd
    inst: TruncatedSvd
    overlap: np.ndarray  # U_inst.T @ U_cov, ell x k
    a_left: np.ndarray  # diagonal entries, length ell
    a_right: np.ndarray  # diagonal entries, length k
    delta: np.ndarray
    delta_svd: ThinSvd
    flags: tuple[str, ...] = field(default=())

    @property
    def r(self) -> int:
        return self.delta_svd.rank

    def design(self) -> np.ndarray:
        """Materialized second-stage design; only for tests and small problems."""
        return self.inst.u @ self.delta @ self.cov.v.T


def resolve_weights(spec: EstimatorSpec | WeightSpec, cov: ThinSvd, inst: ThinSvd,
                    pinv_tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal weights (A_L, A_R) as 1-D arrays."""
    if isinstance(spec, EstimatorSpec):
        pinv_tol = spec.pinv_tol
        ws = spec.weight_spec()
    else:
        ws = spec
    ell, k = inst.rank, cov.rank

    if ws.left is LeftWeight.IDENTITY:
        a_left = np.ones(ell)
    elif ws.left is LeftWeight.INVERSE_INSTRUMENT_SPECTRUM:
        s = inst.s
        if s.size and np.any(s <= pinv_tol * s[0]):
            raise SingularWeight("instrument spectrum too small to invert")
        a_left = 1.0 / s
    else:
        a_left = np.asarray(ws.left_values, dtype=np.float64)[:ell]
        if a_left.shape[0] != ell:
            raise ValueError(f"custom left weight has {len(ws.left_values)} entries, need {ell}")

    if ws.right is RightWeight.IDENTITY:
        a_right = np.ones(k)
    elif ws.right is RightWeight.COVARIATE_SPECTRUM:
        a_right = cov.s.copy()
    else:
        a_right = np.asarray(ws.right_values, dtype=np.float64)[:k]
        if a_right.shape[0] != k:
            raise ValueError(f"custom right weight has {len(ws.right_values)} entries, need {k}")
    return a_left, a_right


def first_stage_from_svds(cov: TruncatedSvd, inst: TruncatedSvd, weights: WeightSpec,
                          pinv_tol: float = RANK_TOL) -> FirstStage:
    a_left, a_right = resolve_weights(weights, cov, inst, pinv_tol)
    overlap = inst.u.T @ cov.u
    delta = (a_left[:, None] * overlap) * a_right[None, :]
    flags = []
    if cov.shortfall:
        flags.append(f"rank_shortfall_cov:{cov.rank}<{cov.requested}")
    if inst.shortfall:
        flags.append(f"rank_shortfall_inst:{inst.rank}<{inst.requested}")
    return FirstStage(cov, inst, overlap, a_left, a_right, delta,
                      thin_svd(delta, pinv_tol), tuple(flags))


def build_first_stage(z_x: np.ndarray, z_w: np.ndarray, spec: EstimatorSpec,
                      cov_svd: ThinSvd | None = None, inst_svd: ThinSvd | None = None) -> FirstStage:
    cov = truncate(cov_svd if cov_svd is not None else thin_svd(z_x), spec.k)
    inst = truncate(inst_svd if inst_svd is not None else thin_svd(z_w), spec.ell)
    return first_stage_from_svds(cov, inst, spec.weight_spec(), spec.pinv_tol)


def ccr_fit(y: np.ndarray, fs: FirstStage, pinv_tol: float = RANK_TOL) -> np.ndarray:
    """beta = V_cov V_D S_D^{-1} U_D^T U_inst^T y, without forming the n x p design."""
    d = fs.delta_svd
    p = fs.cov.v.shape[0]
    if d.rank == 0:
        warnings.warn("zero first-stage design; returning the zero vector", stacklevel=2)
        return np.zeros(p)
    keep = d.s > pinv_tol * d.s[0]
    coef = (d.u[:, keep].T @ (fs.inst.u.T @ y)) / d.s[keep]
    return fs.cov.v @ (d.v[:, keep] @ coef)


def oracle_2sls(y: np.ndarray, x: np.ndarray, w: np.ndarray, pinv_tol: float = RANK_TOL,
                inst_svd: ThinSvd | None = None) -> np.ndarray:
    """(proj_W X)^+ y with the clean signals."""
    u_w = (inst_svd if inst_svd is not None else thin_svd(w, pinv_tol)).u
    return min_norm_solve(u_w @ (u_w.T @ x), y, pinv_tol)


def naive_2sls(y: np.ndarray, z_x: np.ndarray, z_w: np.ndarray, pinv_tol: float = RANK_TOL,
               inst_svd: ThinSvd | None = None) -> np.ndarray:
    """(proj_{Z_W} Z_X)^+ y with no spectral truncation."""
    u_w = (inst_svd if inst_svd is not None else thin_svd(z_w, pinv_tol)).u
    return min_norm_solve(u_w @ (u_w.T @ z_x), y, pinv_tol)


def full_rank_first_stage(a: np.ndarray, b: np.ndarray, pinv_tol: float = RANK_TOL,
                          cov_svd: ThinSvd | None = None, inst_svd: ThinSvd | None = None) -> FirstStage:
    """PCA-weighted first stage at full numerical ranks.

    With covariates ``a`` and instruments ``b`` this reproduces the untruncated
    2SLS design proj_b a, so oracle and naive fits can be decomposed like any
    other family member.
    """
    cov_full = cov_svd if cov_svd is not None else thin_svd(a, pinv_tol)
    inst_full = inst_svd if inst_svd is not None else thin_svd(b, pinv_tol)
    cov = truncate(cov_full, max(cov_full.rank, 1))
    inst = truncate(inst_full, max(inst_full.rank, 1))
    return first_stage_from_svds(cov, inst, NAMED_WEIGHTS[EstimatorKind.PCA], pinv_tol)


def cca_consistency_check(fs: FirstStage, pinv_tol: float = RANK_TOL) -> tuple[float, bool]:
    """Max deviation between two routes to the CCA design, plus a truncation-mismatch flag.

    Route (a): What (What^T What)^+ applied to the rank-k truncation of the
    whitened cross-moment Wunder^T Xunder.  Route (b): U_inst diag(1/s_inst)
    overlap V_cov^T.
    """
    inst, cov = fs.inst, fs.cov
    if np.any(inst.s <= pinv_tol * inst.s[0]):
        raise SingularWeight("instrument spectrum too small to invert")
    k = cov.rank
    w_hat = inst.reconstruct()
    cross = inst.whitened().T @ cov.whitened()
    cross_trunc = truncate(thin_svd(cross, pinv_tol), k).reconstruct()
    gram_pinv = np.linalg.pinv(w_hat.T @ w_hat, rcond=pinv_tol, hermitian=True)
    route_a = w_hat @ (gram_pinv @ cross_trunc)
    route_b = (inst.u / inst.s) @ fs.overlap @ cov.v.T
    mismatch = np.linalg.matrix_rank(fs.overlap, tol=1e-8) < k
    return float(np.max(np.abs(route_a - route_b))), bool(mismatch)


def _default_tol_svds(cache: dict, z_x: np.ndarray, z_w: np.ndarray) -> tuple[ThinSvd, ThinSvd]:
    out = []
    for name, a in (("z_x", z_x), ("z_w", z_w)):
        key = (name, RANK_TOL)
        if key not in cache:
            cache[key] = thin_svd(a)
        out.append(cache[key])
    return out[0], out[1]


@dataclass
class FitResult:
    beta: np.ndarray
    first_stage: FirstStage
    flags: tuple[str, ...] = ()


def fit(spec: EstimatorSpec, y: np.ndarray, z_x: np.ndarray, z_w: np.ndarray,
        x: np.ndarray | None = None, w: np.ndarray | None = None, cache: dict | None = None) -> FitResult:
    """Fit any estimator kind; the returned first stage reproduces the fit via ccr_fit.

    ``cache`` maps (name, tol) to thin SVDs of the inputs, named "z_x", "z_w",
    "x", "w", so estimators fitted to one dataset factor each matrix once.
    """
    kind = spec.kind
    tol = spec.pinv_tol
    cache = {} if cache is None else cache

    def svd(name: str, a: np.ndarray) -> ThinSvd:
        key = (name, tol)
        if key not in cache:
            cache[key] = thin_svd(a, tol)
        return cache[key]

    if kind is EstimatorKind.ORACLE:
        if x is None or w is None:
            raise ValueError("oracle 2SLS needs the clean signals")
        fs = full_rank_first_stage(x, w, tol, svd("x", x), svd("w", w))
        beta = oracle_2sls(y, x, w, tol, svd("w", w))
    elif kind is EstimatorKind.NAIVE:
        fs = full_rank_first_stage(z_x, z_w, tol, svd("z_x", z_x), svd("z_w", z_w))
        beta = naive_2sls(y, z_x, z_w, tol, svd("z_w", z_w))
    else:
        # truncation always uses the default rank cutoff, as build_first_stage does
        fs = build_first_stage(z_x, z_w, spec, *_default_tol_svds(cache, z_x, z_w))
        beta = ccr_fit(y, fs, tol)
    return FitResult(beta, fs, fs.flags)
