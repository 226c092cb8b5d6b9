"""
A module fitting Gaussian mixtures to grasp poses on ℝ³ × S³.

Each component lives in the tangent space at its mean (μ_t, μ_q): a pose
(t, q) has coordinates [t − μ_t, log(μ_q⁻¹ ⊗ q)], where q is first flipped
into the hemisphere of μ_q, so q and −q always get the same coordinates.
Means are hemisphere-canonical (w ≥ 0) when stored.

Classes:
    GraspGmm: Weights, means and tangent covariances.
    EmConfig: EM iteration settings.

Functions:
    tangent_coords, exp_map, fit_gmm, select_gmm_bic, gmm_log_density,
    sample_gmm, write_gmm, read_gmm.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from utils.seeding import rng_for

from .errors import CorruptFile, DegenerateData, InvalidCount, InvalidParams, NonFinite
from .geometry import Pose, quat_canonical, quat_conjugate, quat_from_rotvec, quat_multiply, quat_to_rotvec
from .meshio import read_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DIM = 6
WEIGHT_TOL = 1e-9
EIG_TOL = 1e-12


@dataclass(frozen=True)
class GraspGmm:
    """
    Attributes:
        weights (np.ndarray): (K,) mixture weights summing to 1.
        translations (np.ndarray): (K, 3) mean translations μ_t.
        rotations (np.ndarray): (K, 4) mean quaternions μ_q, w ≥ 0.
        covariances (np.ndarray): (K, 6, 6) tangent covariances, translation first.
        log_likelihoods (Tuple[float, ...]): Training log-likelihood per EM iteration.
    """

    weights: np.ndarray
    translations: np.ndarray
    rotations: np.ndarray
    covariances: np.ndarray
    log_likelihoods: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))
        k = len(self.weights)
        object.__setattr__(self, "translations", np.asarray(self.translations, dtype=np.float64).reshape(k, 3))
        object.__setattr__(self, "rotations", quat_canonical(np.asarray(self.rotations).reshape(k, 4)))
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=np.float64).reshape(k, DIM, DIM))

    @property
    def k(self) -> int:
        return len(self.weights)

    def validate(self, floor: float = 0.0) -> "GraspGmm":
        """
        Check weights and covariances. Every covariance eigenvalue must reach
        `floor`; fitted mixtures pass their regularization, loaded ones only
        need positive semi-definite covariances.

        Raises:
            InvalidParams: on bad weights or covariances.
        """
        if self.k < 1:
            raise InvalidParams("weights", "a mixture needs at least one component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidParams("weights", f"must be non-negative and sum to 1, got {self.weights.sum()}")
        for i, cov in enumerate(self.covariances):
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise InvalidParams("covariances", f"component {i} is not symmetric")
            low = linalg.eigvalsh(cov)[0]
            if low < floor - EIG_TOL:
                raise InvalidParams("covariances", f"component {i} has eigenvalue {low:.3g} below {floor:.3g}")
        return self

    def component_mean(self, i: int) -> Pose:
        return Pose(self.rotations[i], self.translations[i])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": [self.component_mean(i).to_list() for i in range(self.k)],
            "covariances": [c.reshape(-1).tolist() for c in self.covariances],
        }

    @staticmethod
    def from_dict(d: dict) -> "GraspGmm":
        means = np.asarray(d["means"], dtype=np.float64)
        covs = np.asarray(d["covariances"], dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != 7 or covs.shape != (len(means), DIM * DIM):
            raise CorruptFile(f"bad mixture shapes: means {means.shape}, covariances {covs.shape}")
        return GraspGmm(d["weights"], means[:, 4:], means[:, :4], covs).validate()


@dataclass(frozen=True)
class EmConfig:
    """
    Attributes:
        max_iterations (int): EM iteration cap.
        tolerance (float): Stop once the log-likelihood gain falls below this.
        regularization (float): Added to every covariance diagonal.
        mean_iterations (int): Tangent-mean iterations per rotation update.
    """

    max_iterations: int = 100
    tolerance: float = 1e-8
    regularization: float = 1e-6
    mean_iterations: int = 10

    def validate(self) -> "EmConfig":
        if self.max_iterations < 1:
            raise InvalidParams("max_iterations", "must be >= 1")
        if not self.tolerance > 0:
            raise InvalidParams("tolerance", "must be > 0")
        if not self.regularization > 0:
            raise InvalidParams("regularization", "must be > 0")
        if self.mean_iterations < 1:
            raise InvalidParams("mean_iterations", "must be >= 1")
        return self


def _as_arrays(poses: Sequence[Pose]) -> Tuple[np.ndarray, np.ndarray]:
    t = np.array([p.translation for p in poses], dtype=np.float64).reshape(-1, 3)
    q = quat_canonical(np.array([p.rotation for p in poses], dtype=np.float64).reshape(-1, 4))
    return t, q


def _rotation_log(mu_q: np.ndarray, q: np.ndarray) -> np.ndarray:
    """log(μ⁻¹ ⊗ q) after flipping q into the hemisphere of μ."""
    sign = np.where(q @ mu_q < 0, -1.0, 1.0)
    return quat_to_rotvec(quat_multiply(quat_conjugate(mu_q), q * sign[:, None]))


def tangent_coords(t: np.ndarray, q: np.ndarray, mu_t: np.ndarray, mu_q: np.ndarray) -> np.ndarray:
    """(N, 6) coordinates [t − μ_t, log(μ_q⁻¹ ⊗ ±q)] of poses at one component mean."""
    return np.concatenate([t - mu_t, _rotation_log(mu_q, q)], axis=1)


def exp_map(x: np.ndarray, mu_t: np.ndarray, mu_q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of tangent_coords: translations and canonical quaternions."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, DIM)
    q = quat_multiply(mu_q, quat_from_rotvec(x[:, 3:]))
    return mu_t + x[:, :3], quat_canonical(q)


def _component_log_pdf(t: np.ndarray, q: np.ndarray, mu_t, mu_q, cov) -> np.ndarray:
    x = tangent_coords(t, q, mu_t, mu_q)
    return multivariate_normal.logpdf(x, mean=np.zeros(DIM), cov=cov, allow_singular=True).reshape(-1)


def _joint_log(gmm: GraspGmm, t: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(N, K) log w_k + log N_k(x)."""
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    cols = [
        log_w[k] + _component_log_pdf(t, q, gmm.translations[k], gmm.rotations[k], gmm.covariances[k])
        for k in range(gmm.k)
    ]
    return np.stack(cols, axis=1)


def gmm_log_density(gmm: GraspGmm, poses: Sequence[Pose] | Pose) -> np.ndarray:
    """Log density of each pose; q and −q give the same value."""
    if isinstance(poses, Pose):
        poses = [poses]
    t, q = _as_arrays(poses)
    return logsumexp(_joint_log(gmm, t, q), axis=1)


def _distinct(t: np.ndarray, q: np.ndarray) -> int:
    return len(np.unique(np.concatenate([t, q], axis=1), axis=0))


def _pose_distance2(t: np.ndarray, q: np.ndarray, mu_t: np.ndarray, mu_q: np.ndarray) -> np.ndarray:
    return np.sum(tangent_coords(t, q, mu_t, mu_q) ** 2, axis=1)


def _initial_means(t: np.ndarray, q: np.ndarray, k: int, rng: np.random.Generator) -> List[int]:
    """k-means++ seeding on the tangent distance."""
    chosen = [int(rng.integers(len(t)))]
    d2 = _pose_distance2(t, q, t[chosen[0]], q[chosen[0]])
    while len(chosen) < k:
        total = d2.sum()
        if not total > 0:
            raise DegenerateData(f"only {len(chosen)} distinct poses for {k} components")
        nxt = int(rng.choice(len(t), p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _pose_distance2(t, q, t[nxt], q[nxt]))
    return chosen


def _m_step(
    t: np.ndarray, q: np.ndarray, resp: np.ndarray, prev: GraspGmm, config: EmConfig
) -> GraspGmm:
    n, k = resp.shape
    nk = resp.sum(axis=0)
    weights = (nk + 1e-12) / (n + k * 1e-12)
    translations = prev.translations.copy()
    rotations = prev.rotations.copy()
    covariances = prev.covariances.copy()
    for j in range(k):
        if nk[j] < 1e-12:
            continue
        r = resp[:, j] / nk[j]
        translations[j] = r @ t
        mu_q = rotations[j]
        for _ in range(config.mean_iterations):
            step = r @ _rotation_log(mu_q, q)
            mu_q = quat_multiply(mu_q, quat_from_rotvec(step))
            if np.linalg.norm(step) < 1e-12:
                break
        rotations[j] = quat_canonical(mu_q)
        x = tangent_coords(t, q, translations[j], rotations[j])
        cov = (x * r[:, None]).T @ x
        covariances[j] = 0.5 * (cov + cov.T) + config.regularization * np.eye(DIM)
    return GraspGmm(weights, translations, rotations, covariances)


def _log_likelihood(gmm: GraspGmm, t: np.ndarray, q: np.ndarray) -> Tuple[float, np.ndarray]:
    joint = _joint_log(gmm, t, q)
    norm = logsumexp(joint, axis=1)
    ll = float(norm.sum())
    if not np.isfinite(ll):
        raise NonFinite("mixture log-likelihood is not finite")
    return ll, np.exp(joint - norm[:, None])


def fit_gmm(poses: Sequence[Pose], k: int, config: EmConfig = EmConfig(), seed: int = 0) -> GraspGmm:
    """
    Fit a K-component mixture by EM in tangent coordinates.

    The E-step scores every pose under each component's tangent Gaussian.
    The M-step re-estimates weights, translation means, rotation means (by
    iterating the weighted tangent mean) and covariances, plus a diagonal
    floor. An iteration that would lower the log-likelihood is discarded and
    ends the fit, so the recorded log-likelihoods never decrease.

    Args:
        poses (Sequence[Pose]): Training poses.
        k (int): Number of components.
        config (EmConfig): Iteration settings.
        seed (int): Initialization seed.

    Returns:
        GraspGmm: The fitted mixture with its log-likelihood history.

    Raises:
        InvalidCount: if k < 1.
        DegenerateData: if there are fewer distinct poses than k.
    """
    config.validate()
    if k < 1:
        raise InvalidCount(f"component count must be >= 1, got {k}")
    t, q = _as_arrays(poses)
    distinct = _distinct(t, q)
    if distinct < k:
        raise DegenerateData(f"{distinct} distinct poses for {k} components")

    rng = rng_for(seed, "gmm", k)
    chosen = _initial_means(t, q, k, rng)
    covs = []
    for i in chosen:
        x = tangent_coords(t, q, t[i], q[i])
        covs.append(x.T @ x / len(x) / k + config.regularization * np.eye(DIM))
    gmm = GraspGmm(np.full(k, 1.0 / k), t[chosen], q[chosen], np.stack(covs))

    ll, resp = _log_likelihood(gmm, t, q)
    history = [ll]
    for it in range(config.max_iterations):
        candidate = _m_step(t, q, resp, gmm, config)
        new_ll, new_resp = _log_likelihood(candidate, t, q)
        if new_ll < ll:
            logger.debug("em: iteration %d lowers the log-likelihood (%.12g < %.12g), stopping", it, new_ll, ll)
            break
        gmm, resp = candidate, new_resp
        history.append(new_ll)
        gain, ll = new_ll - ll, new_ll
        if gain < config.tolerance:
            break
    logger.debug("em: k=%d, %d iterations, log-likelihood %.6f", k, len(history) - 1, ll)
    fitted = GraspGmm(gmm.weights, gmm.translations, gmm.rotations, gmm.covariances, tuple(history))
    return fitted.validate(config.regularization)


def bic(gmm: GraspGmm, n: int) -> float:
    """−2 log L + p ln n with p = K·(6 + 21) + K − 1 free parameters."""
    p = gmm.k * (DIM + DIM * (DIM + 1) // 2) + gmm.k - 1
    return -2.0 * gmm.log_likelihoods[-1] + p * np.log(n)


def select_gmm_bic(
    poses: Sequence[Pose],
    k_range: Sequence[int] = range(1, 6),
    config: EmConfig = EmConfig(),
    seed: int = 0,
) -> GraspGmm:
    """
    Fit every K in k_range and keep the lowest BIC (smallest K on ties).
    Sizes exceeding the number of distinct poses are skipped.

    Raises:
        DegenerateData: if no size in k_range can be fitted.
    """
    best, best_score = None, np.inf
    for k in k_range:
        try:
            gmm = fit_gmm(poses, k, config, seed)
        except DegenerateData:
            continue
        score = bic(gmm, len(poses))
        logger.debug("bic: k=%d -> %.6f", k, score)
        if score < best_score:
            best, best_score = gmm, score
    if best is None:
        raise DegenerateData(f"no mixture size in {list(k_range)} fits {len(poses)} poses")
    return best


def sample_gmm(gmm: GraspGmm, n: int, seed: int) -> List[Pose]:
    """
    Draw n poses: a component by weight, a tangent Gaussian draw, then the
    exponential map at the component mean.

    Raises:
        InvalidCount: if n < 0.
    """
    if n < 0:
        raise InvalidCount(f"sample count must be >= 0, got {n}")
    gmm.validate()
    rng = rng_for(seed, "gmm-sample")
    comp = rng.choice(gmm.k, size=n, p=gmm.weights / gmm.weights.sum())
    z = rng.standard_normal((n, DIM))
    out: List[Pose] = []
    roots = []
    for cov in gmm.covariances:
        vals, vecs = linalg.eigh(cov)
        roots.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
    for i in range(n):
        j = comp[i]
        t, q = exp_map(roots[j] @ z[i], gmm.translations[j], gmm.rotations[j])
        out.append(Pose(q[0], t[0]))
    return out


def write_gmm(path: PathLike, gmm: GraspGmm) -> None:
    """JSON {weights, means (7 each), covariances (36 each, row-major)}."""
    Path(path).write_text(json.dumps(gmm.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def read_gmm(path: PathLike) -> GraspGmm:
    """
    Raises:
        CorruptFile: if the file is not a valid mixture.
    """
    try:
        return GraspGmm.from_dict(json.loads(read_text(path)))
    except (json.JSONDecodeError, KeyError, TypeError, InvalidParams) as e:
        raise CorruptFile(f"{path}: {e}") from e
