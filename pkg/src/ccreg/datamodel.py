"""Datasets and the synthetic low-rank IV data generating process.

The generator draws a rank-k covariate signal and a rank-ell instrument
signal whose left factors overlap with strength ``delta``, adds Gaussian
measurement noise that is correlated between covariates and instruments on
their common columns, and builds a disturbance that is endogenous with
respect to X but orthogonal to the instrument space.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .speclin import thin_svd

MAGIC = b"CCRD1\n"
HIGH_DIM_CAP = 5000


class InvalidDims(ValueError):
    pass


class DimensionError(ValueError):
    pass


class DegenerateDisturbance(ValueError):
    pass


class FormatError(ValueError):
    """Malformed dataset file; the message names the offending section."""


class Regime(str, enum.Enum):
    MODERATE = "moderate"
    HIGH = "high"


@dataclass
class DgpConfig:
    n: int = 300
    regime: Regime = Regime.MODERATE
    k: int = 8
    ell: int = 10
    alpha: float = 1.5
    delta: float = 0.65
    rho: float = 0.9
    sigma_eps: float = 1.25
    c1: float = 2.0
    gamma_scale: float = 1.0
    base_seed: int = 0

    def __post_init__(self) -> None:
        self.regime = Regime(self.regime)

    @property
    def dims(self) -> tuple[int, int]:
        return dims_for_regime(self.n, self.regime)

    def validate(self) -> None:
        if self.n < 1:
            raise DimensionError(f"n must be positive, got {self.n}")
        if not 1 <= self.k <= self.ell:
            raise DimensionError(f"need 1 <= k <= ell, got k={self.k}, ell={self.ell}")
        if not 0.0 <= self.delta <= 1.0:
            raise DimensionError(f"delta must lie in [0, 1], got {self.delta}")
        if not -1.0 <= self.rho <= 1.0:
            raise DimensionError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.sigma_eps < 0 or self.c1 < 0:
            raise DimensionError("sigma_eps and c1 must be nonnegative")
        p, p_w = self.dims
        if self.k > min(self.n, p) or self.ell > min(self.n, p_w):
            raise DimensionError(
                f"ranks (k={self.k}, ell={self.ell}) exceed dims (n={self.n}, p={p}, p_w={p_w})"
            )
        # U_perp needs min(k, ell) directions outside span(U_X)
        if self.k + min(self.k, self.ell) > self.n or self.ell > self.n:
            raise DimensionError(f"n={self.n} too small for k={self.k}, ell={self.ell}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["regime"] = self.regime.value
        return d


@dataclass(frozen=True)
class GroundTruth:
    x: np.ndarray
    w: np.ndarray
    beta: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    z_x: np.ndarray
    z_w: np.ndarray
    truth: GroundTruth | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        n = self.y.shape[0]
        if self.z_x.shape[0] != n or self.z_w.shape[0] != n:
            raise DimensionError("row counts of y, z_x, z_w disagree")
        arrays = [self.y, self.z_x, self.z_w]
        if self.truth is not None:
            arrays += [self.truth.x, self.truth.w, self.truth.beta, self.truth.eps]
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("dataset contains non-finite values")

    @property
    def h_x(self) -> np.ndarray:
        return self.z_x - self.truth.x

    @property
    def h_w(self) -> np.ndarray:
        return self.z_w - self.truth.w

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.y, self.z_x, self.z_w):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def dims_for_regime(n: int, regime: Regime | str) -> tuple[int, int]:
    regime = Regime(regime)
    if regime is Regime.MODERATE:
        p, p_w = n // 2, n // 3
    else:
        p, p_w = min(n - 100, HIGH_DIM_CAP), min(n - 200, HIGH_DIM_CAP)
    if p <= 0 or p_w <= 0:
        raise InvalidDims(f"n={n} gives nonpositive dims (p={p}, p_w={p_w}) in {regime.value} regime")
    return p, p_w


# ---------------------------------------------------------------- RNG streams

_PURPOSES = {"coefficients": 1, "signal": 2, "noise": 3, "outcome": 4}


def _float_key(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def block_key(config: DgpConfig) -> tuple[int, ...]:
    regime_code = 0 if config.regime is Regime.MODERATE else 1
    return (regime_code, int(config.n), _float_key(config.delta))


def substream(base_seed: int, key: tuple[int, ...], purpose: str) -> np.random.Generator:
    """Independent Philox stream keyed by (base_seed, key, purpose)."""
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(*key, _PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(seq))


def replication_seed(base_seed: int, key: tuple[int, ...], rep_index: int) -> int:
    """A printable 64-bit identifier for a replication's substream."""
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(*key, int(rep_index)))
    return int(seq.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- generator


def _orthonormal(g: np.ndarray) -> np.ndarray:
    """QR orthonormalization with column order and orientation preserved."""
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def make_coefficients(config: DgpConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Block-level unit-norm coefficient draw and endogeneity vector gamma."""
    p, _ = config.dims
    beta = rng.standard_normal(p)
    beta /= np.linalg.norm(beta)
    gamma = rng.standard_normal(p)
    gamma *= config.gamma_scale / np.linalg.norm(gamma)
    return beta, gamma


def generate_signal(config: DgpConfig, rng: np.random.Generator):
    """Return (X, W, U_W) with rank k and rank ell and overlap controlled by delta."""
    config.validate()
    n, (p, p_w) = config.n, config.dims
    k, ell, delta = config.k, config.ell, config.delta
    r = min(k, ell)

    u_x = _orthonormal(rng.standard_normal((n, k)))
    v_x = _orthonormal(rng.standard_normal((p, k)))
    v_w = _orthonormal(rng.standard_normal((p_w, ell)))

    # ell columns orthogonal to span(U_X); those past r fill out U_W, so
    # delta alone sets every true canonical correlation
    g = rng.standard_normal((n, ell))
    g -= u_x @ (u_x.T @ g)
    u_perp = _orthonormal(g)
    u_perp -= u_x @ (u_x.T @ u_perp)  # second pass for numerical orthogonality
    u_perp = _orthonormal(u_perp)

    mixed = delta * u_x[:, :r] + np.sqrt(1.0 - delta**2) * u_perp[:, :r]
    u_w = _orthonormal(np.hstack([mixed, u_perp[:, r:]]))

    sx = (np.arange(1, k + 1) + 1.0) ** (-config.alpha)
    sw = (np.arange(1, ell + 1) + 1.0) ** (-config.alpha)
    x = (u_x * sx) @ v_x.T
    w = (u_w * sw) @ v_w.T
    return x, w, u_w


def noise_scales(config: DgpConfig) -> tuple[float, float]:
    """Marginal noise standard deviations (sigma_H_X, sigma_H_W)."""
    p, p_w = config.dims
    s_x = config.c1 / ((config.k + 1) ** config.alpha * np.sqrt(p))
    s_w = config.c1 / ((config.ell + 1) ** config.alpha * np.sqrt(p_w))
    return float(s_x), float(s_w)


def generate_noise(config: DgpConfig, x: np.ndarray, w: np.ndarray, rng: np.random.Generator):
    """Return (Z_X, Z_W) with correlated Gaussian noise on the common columns."""
    n, p = x.shape
    p_w = w.shape[1]
    s_x, s_w = noise_scales(config)
    rho = config.rho
    m = min(p, p_w)
    e_w = rng.standard_normal((n, p_w))
    e_x = rng.standard_normal((n, p))
    h_w = s_w * e_w
    h_x = np.empty((n, p))
    h_x[:, :m] = s_x * (rho * e_w[:, :m] + np.sqrt(1.0 - rho**2) * e_x[:, :m])
    h_x[:, m:] = s_x * e_x[:, m:]
    return x + h_x, w + h_w


def generate_outcome(
    config: DgpConfig,
    x: np.ndarray,
    w: np.ndarray,
    beta: np.ndarray,
    gamma: np.ndarray,
    rng: np.random.Generator,
    u_w: np.ndarray | None = None,
):
    """Return (Y, eps) with eps endogenous in X but orthogonal to col(W)."""
    n = x.shape[0]
    if u_w is None:
        u_w = thin_svd(w).u
    eps0 = x @ gamma + config.sigma_eps * rng.standard_normal(n)
    eps = eps0 - u_w @ (u_w.T @ eps0)
    if config.sigma_eps == 0.0:
        eps = np.zeros(n)
    else:
        sd = np.sqrt(np.var(eps))
        if sd == 0.0:
            raise DegenerateDisturbance("disturbance vanishes after projecting out the instruments")
        eps = eps * (config.sigma_eps / sd)
        # rescaling reintroduces no instrument component; re-project against roundoff
        eps -= u_w @ (u_w.T @ eps)
    return x @ beta + eps, eps


def generate_dataset(config: DgpConfig, rep_index: int = 0) -> Dataset:
    """One replication: block coefficients plus per-replication signal, noise and outcome."""
    config.validate()
    key = block_key(config)
    beta0, gamma = make_coefficients(config, substream(config.base_seed, key, "coefficients"))
    rep_key = (*key, int(rep_index))
    x, w, u_w = generate_signal(config, substream(config.base_seed, rep_key, "signal"))
    # target is the min-norm representative of {b : X b = X beta0}
    v_x = thin_svd(x).v
    beta = v_x @ (v_x.T @ beta0)
    z_x, z_w = generate_noise(config, x, w, substream(config.base_seed, rep_key, "noise"))
    y, eps = generate_outcome(config, x, w, beta, gamma, substream(config.base_seed, rep_key, "outcome"), u_w)
    meta = {"config": config.to_dict(), "rep_index": int(rep_index),
            "seed": replication_seed(config.base_seed, key, rep_index)}
    return Dataset(y, z_x, z_w, GroundTruth(x, w, beta, eps), meta)


# ---------------------------------------------------------------- file format

_BLOCKS = ("y", "z_x", "z_w")
_TRUTH_BLOCKS = ("x", "w", "beta", "eps")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    arrays = {"y": dataset.y, "z_x": dataset.z_x, "z_w": dataset.z_w}
    if dataset.truth is not None:
        t = dataset.truth
        arrays.update(x=t.x, w=t.w, beta=t.beta, eps=t.eps)
    header = {
        "n": int(dataset.y.shape[0]),
        "p": int(dataset.z_x.shape[1]),
        "p_w": int(dataset.z_w.shape[1]),
        "has_truth": dataset.truth is not None,
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": dataset.meta,
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays.values():
            f.write(np.asarray(a, dtype="<f8").tobytes(order="F"))


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError("missing CCRD1 magic line")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError("header: missing JSON header line")
    try:
        header = json.loads(data[len(MAGIC):end])
    except json.JSONDecodeError as e:
        raise FormatError(f"header: invalid JSON ({e.msg} at column {e.colno})") from None
    for key in ("blocks", "has_truth"):
        if key not in header:
            raise FormatError(f"header: missing field {key!r}")

    expected = list(_BLOCKS) + (list(_TRUTH_BLOCKS) if header["has_truth"] else [])
    names = [b.get("name") for b in header["blocks"]]
    if names != expected:
        raise FormatError(f"header: blocks {names} do not match expected {expected}")

    arrays = {}
    offset = end + 1
    for block in header["blocks"]:
        shape = tuple(int(s) for s in block["shape"])
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(data):
            raise FormatError(f"block {block['name']!r}: truncated ({len(data) - offset} of {nbytes} bytes)")
        flat = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset)
        arrays[block["name"]] = np.array(flat.reshape(shape, order="F"), dtype=np.float64)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"trailing data: {len(data) - offset} unexpected bytes after last block")

    truth = None
    if header["has_truth"]:
        truth = GroundTruth(arrays["x"], arrays["w"], arrays["beta"], arrays["eps"])
    return Dataset(arrays["y"], arrays["z_x"], arrays["z_w"], truth, header.get("meta", {}))
