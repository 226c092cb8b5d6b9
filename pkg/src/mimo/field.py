"""
A module implementing the multi-feature implicit field.

A per-point network followed by a max-pool over the points encodes an
observed cloud into a latent c. A partly-shared decoder maps (c, x − centroid)
through a common trunk into one head per branch. The hidden activations of
the descriptor heads, concatenated, form the point descriptor z(x | P).

Classes:
    BranchSpec: Name, output width and loss of one decoder branch.
    MimoConfig: Architecture of the field.
    TrainConfig: Optimization settings.
    Latent: Encoded cloud with the centroid queries are expressed against.
    Prediction: Branch outputs for a batch of queries.
    MimoModel: Parameters and inference.
    LossCurves: Per-step branch losses, log-variances and totals.

Functions:
    train: Fit a model to feature datasets.
    occupancy_accuracy: Share of queries whose occupancy is predicted right.
    descriptor_distance_map: L1 descriptor distance of queries to a reference point.
    descriptor_pca_colors: RGB colors of descriptors by principal components.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from utils.seeding import rng_for

from .autodiff import Tensor, concat, no_grad
from .errors import ConfigMismatch, InvalidCount, InvalidParams, NonFinite, TooFewPoints
from .features import FeatureDataset, scf_power_spectrum
from .geometry import PointCloud, quat_to_matrix, random_rotation
from .layers import Adam, Linear, Mlp, OptimizerState, set_max_pool
from .losses import SDF_CLAMP, MultiTaskLossState, branch_loss, multitask_loss
from .sh import ShBasis, make_quadrature
from .types import LossKind, ModelVariant

logger = logging.getLogger(__name__)

MIN_POINTS = 8
INFERENCE_CHUNK = 8192


class BranchSpec(NamedTuple):
    name: str
    out_dim: int
    kind: LossKind


@dataclass(frozen=True)
class MimoConfig:
    """
    Attributes:
        latent_dim (int): Size of the latent c.
        encoder_widths (Tuple[int, ...]): Per-point hidden widths before the pool.
        trunk_widths (Tuple[int, ...]): Shared decoder widths.
        head_widths (Tuple[Tuple[int, ...], ...]): Hidden widths of each head,
            in branch order.
        degree (int): ESCF harmonic degree L.
        variant (ModelVariant): Branch set.
        descriptor_layers (str): "all" hidden layers of the descriptor heads, or
            only the "last" one.
        sdf_clamp (float): Clamp bound δ of the signed-distance loss.
        rotation_augmentation (bool): Train on randomly rotated examples.
    """

    latent_dim: int = 128
    encoder_widths: Tuple[int, ...] = (64, 128, 128)
    trunk_widths: Tuple[int, ...] = (128, 128)
    head_widths: Tuple[Tuple[int, ...], ...] = ((64, 64), (64, 64), (64, 64), (64, 64))
    degree: int = 5
    variant: ModelVariant = ModelVariant.FOUR
    descriptor_layers: str = "all"
    sdf_clamp: float = SDF_CLAMP
    rotation_augmentation: bool = False

    def validate(self) -> "MimoConfig":
        if self.latent_dim < 1:
            raise InvalidParams("latent_dim", "must be >= 1")
        if not self.encoder_widths or not self.trunk_widths:
            raise InvalidParams("encoder_widths", "encoder and trunk need at least one layer")
        widths = list(self.encoder_widths) + list(self.trunk_widths)
        widths += [w for head in self.head_widths for w in head]
        if any(w < 1 for w in widths):
            raise InvalidParams("widths", "every layer width must be >= 1")
        if len(self.head_widths) < len(self.branches()):
            raise InvalidParams(
                "head_widths", f"{len(self.head_widths)} heads for {len(self.branches())} branches"
            )
        if any(not self.head_widths[i] for i in self.descriptor_branches()):
            raise InvalidParams("head_widths", "descriptor heads need a hidden layer")
        if self.degree < 0:
            raise InvalidParams("degree", "must be >= 0")
        if self.descriptor_layers not in ("all", "last"):
            raise InvalidParams("descriptor_layers", "must be 'all' or 'last'")
        if self.sdf_clamp <= 0:
            raise InvalidParams("sdf_clamp", "must be > 0")
        return self

    def branches(self) -> List[BranchSpec]:
        occ = BranchSpec("occ", 1, LossKind.BCE)
        sdf = BranchSpec("sdf", 1, LossKind.CLAMPED_L1)
        if self.variant == ModelVariant.FOUR:
            return [
                occ,
                sdf,
                BranchSpec("escf", (self.degree + 1) ** 2, LossKind.L1),
                BranchSpec("cdd", 1, LossKind.L1),
            ]
        if self.variant == ModelVariant.THREE:
            return [occ, sdf, BranchSpec("power", self.degree + 1, LossKind.L1)]
        return [occ]

    def descriptor_branches(self) -> List[int]:
        """Indices of the heads whose activations form the descriptor."""
        names = {ModelVariant.FOUR: ("escf", "cdd"), ModelVariant.THREE: ("power",)}.get(self.variant, ())
        return [i for i, b in enumerate(self.branches()) if b.name in names]

    @property
    def descriptor_dim(self) -> int:
        dims = [self.head_widths[i] for i in self.descriptor_branches()]
        if self.descriptor_layers == "last":
            return sum(d[-1] for d in dims)
        return sum(sum(d) for d in dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["encoder_widths"] = list(self.encoder_widths)
        d["trunk_widths"] = list(self.trunk_widths)
        d["head_widths"] = [list(h) for h in self.head_widths]
        return d

    @staticmethod
    def from_dict(d: dict) -> "MimoConfig":
        d = dict(d)
        try:
            if "variant" in d:
                d["variant"] = ModelVariant(d["variant"])
            for key in ("encoder_widths", "trunk_widths"):
                if key in d:
                    d[key] = tuple(int(w) for w in d[key])
            if "head_widths" in d:
                d["head_widths"] = tuple(tuple(int(w) for w in h) for h in d["head_widths"])
            return MimoConfig(**d)
        except (TypeError, ValueError) as e:
            raise InvalidParams("model", str(e)) from e


@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes:
        epochs (int): Passes over every dataset.
        batch_size (int): Queries per optimizer step.
        lr (float): Adam learning rate.
        seed (int): Shuffling and augmentation seed.
    """

    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise InvalidParams("epochs", "must be >= 0")
        if self.batch_size < 1:
            raise InvalidParams("batch_size", "must be >= 1")
        if self.lr < 0:
            raise InvalidParams("lr", "must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Latent:
    """
    Attributes:
        c (np.ndarray): (latent_dim,) encoding.
        centroid (np.ndarray): (3,) centroid of the encoded cloud.
    """

    c: np.ndarray
    centroid: np.ndarray


class Prediction(NamedTuple):
    """Branch outputs for M queries; absent branches are None."""

    occ: np.ndarray  # (M,) logits
    sdf: Optional[np.ndarray]  # (M,)
    escf: Optional[np.ndarray]  # (M, (L+1)²)
    cdd: Optional[np.ndarray]  # (M,)
    power: Optional[np.ndarray] = None  # (M, L+1)

    def occupancy(self) -> np.ndarray:
        """sigmoid(logit)."""
        return 1.0 / (1.0 + np.exp(-self.occ))


def cloud_centroid(points: np.ndarray) -> np.ndarray:
    """Correctly rounded mean of each coordinate, independent of point order."""
    n = len(points)
    return np.array([math.fsum(points[:, k]) / n for k in range(3)])


def _canonical_points(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centered, lexicographically sorted distinct points and the centroid."""
    centroid = cloud_centroid(points)
    centered = np.unique(points - centroid, axis=0)
    return centered, centroid


class MimoModel:
    """
    Parameters of the field and its inference passes.

    Attributes:
        config (MimoConfig): Architecture.
        encoder (Mlp): Per-point network; its last layer is linear.
        trunk (Mlp): Shared decoder layers.
        heads (List[Tuple[Optional[Mlp], Linear]]): Hidden layers and output of each branch.
        loss_state (MultiTaskLossState): Log-variances s_i.
        optimizer (Optional[OptimizerState]): Adam state after training.
        meta (Dict): Training metadata (step, epoch, dataset digest).
    """

    def __init__(self, config: MimoConfig, seed: int = 0):
        self.config = config.validate()
        rng = rng_for(seed, "init")
        self.encoder = Mlp(
            (3, *config.encoder_widths, config.latent_dim), rng, "encoder", final_relu=False
        )
        self.trunk = Mlp((config.latent_dim + 3, *config.trunk_widths), rng, "trunk")
        width = config.trunk_widths[-1]
        self.heads: List[Tuple[Optional[Mlp], Linear]] = []
        for spec, widths in zip(config.branches(), config.head_widths):
            hidden = Mlp((width, *widths), rng, f"head.{spec.name}") if widths else None
            out = Linear(widths[-1] if widths else width, spec.out_dim, rng, f"head.{spec.name}.out")
            self.heads.append((hidden, out))
        self.loss_state = MultiTaskLossState.create(
            [b.kind for b in config.branches()], config.sdf_clamp
        )
        self.optimizer: Optional[OptimizerState] = None
        self.meta: Dict = {"step": 0, "epoch": 0, "dataset": ""}

    # ------------------------------------------------------------------
    # parameters

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        params = self.encoder.parameters() + self.trunk.parameters()
        for hidden, out in self.heads:
            params += (hidden.parameters() if hidden else []) + out.parameters()
        params.append(self.loss_state.s)
        return [(p.name, p) for p in params]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def digest(self) -> str:
        """Hash of the architecture and every parameter value."""
        h = hashlib.sha256(repr(sorted(self.config.to_dict().items())).encode())
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()[:16]

    # ------------------------------------------------------------------
    # forward passes

    def _encode_tensor(self, centered: np.ndarray) -> Tensor:
        return set_max_pool(self.encoder(Tensor(centered)), axis=0)

    def _decode_tensor(
        self, c: Tensor, x_rel: Tensor | np.ndarray
    ) -> Tuple[List[Tensor], List[List[Tensor]]]:
        """Branch outputs and the hidden activations of every head."""
        x_rel = x_rel if isinstance(x_rel, Tensor) else Tensor(x_rel)
        latent = c.reshape(1, -1).rows(np.zeros(x_rel.shape[0], dtype=np.int64))
        h = self.trunk(concat([latent, x_rel], axis=1))
        outputs, hidden_acts = [], []
        for hidden, out in self.heads:
            acts = hidden.forward(h) if hidden else []
            outputs.append(out(acts[-1] if acts else h))
            hidden_acts.append(acts)
        return outputs, hidden_acts

    def descriptor_tensor(self, c: Tensor, x_rel: Tensor) -> Tensor:
        """(M, D) descriptors as a differentiable function of centered queries."""
        heads = self.config.descriptor_branches()
        if not heads:
            raise InvalidParams("variant", f"{self.config.variant.value} model has no descriptor")
        _, acts = self._decode_tensor(c, x_rel)
        layers = []
        for i in heads:
            layers += acts[i] if self.config.descriptor_layers == "all" else acts[i][-1:]
        return concat(layers, axis=1)

    def frozen(self) -> "MimoModel":
        """Copy whose parameters take no gradient (for optimizing inputs)."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.requires_grad = False
            p.grad = None
        return clone

    def encode(self, cloud: PointCloud | np.ndarray) -> Latent:
        """
        Encode an observed cloud. Invariant to point order, duplicate points
        and (on exactly representable inputs) uniform translation.

        Raises:
            TooFewPoints: if the cloud has fewer than 8 points.
        """
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        if len(points) < MIN_POINTS:
            raise TooFewPoints(f"encoder needs >= {MIN_POINTS} points, got {len(points)}")
        centered, centroid = _canonical_points(points)
        with no_grad():
            c = self._encode_tensor(centered)
        return Latent(c.data.copy(), centroid)

    def predict(self, latent: Latent, x: np.ndarray) -> Prediction:
        """
        Branch outputs at queries x, given in the frame of the encoded cloud.

        Args:
            latent (Latent): Output of encode.
            x (np.ndarray): (3,) or (M, 3) queries.

        Returns:
            Prediction: Arrays with a leading query axis of length M.
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        names = [b.name for b in self.config.branches()]
        columns: Dict[str, List[np.ndarray]] = {n: [] for n in names}
        c = Tensor(latent.c)
        with no_grad():
            for s in range(0, len(x), INFERENCE_CHUNK):
                outputs, _ = self._decode_tensor(c, x[s : s + INFERENCE_CHUNK] - latent.centroid)
                for n, o in zip(names, outputs):
                    columns[n].append(o.data)
        merged = {n: np.concatenate(v) if v else np.zeros((0, 1)) for n, v in columns.items()}

        def scalar(name: str) -> Optional[np.ndarray]:
            return merged[name][:, 0] if name in merged else None

        return Prediction(
            occ=scalar("occ"),
            sdf=scalar("sdf"),
            escf=merged.get("escf"),
            cdd=scalar("cdd"),
            power=merged.get("power"),
        )

    def descriptors(self, latent: Latent, x: np.ndarray) -> np.ndarray:
        """(M, descriptor_dim) descriptors of queries under an encoded cloud."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        c = Tensor(latent.c)
        parts = []
        with no_grad():
            for s in range(0, len(x), INFERENCE_CHUNK):
                x_rel = Tensor(x[s : s + INFERENCE_CHUNK] - latent.centroid)
                parts.append(self.descriptor_tensor(c, x_rel).data)
        if not self.config.descriptor_branches():
            raise InvalidParams("variant", f"{self.config.variant.value} model has no descriptor")
        if not parts:
            return np.zeros((0, self.config.descriptor_dim))
        return np.concatenate(parts)

    def point_descriptor(self, cloud: PointCloud | np.ndarray, x: np.ndarray) -> np.ndarray:
        """
        z(x | P): hidden activations of the descriptor heads, in layer order.

        Args:
            cloud: Observed cloud P (at inference, the reconstruction resample).
            x (np.ndarray): (3,) query or (M, 3) queries.

        Returns:
            np.ndarray: (D,) or (M, D).
        """
        z = self.descriptors(self.encode(cloud), x)
        return z[0] if np.asarray(x).ndim == 1 else z


# ---------------------------------------------------------------------------
# training


@dataclass
class LossCurves:
    """
    Attributes:
        branches (List[str]): Branch names, in loss order.
        steps (List[int]): Global optimizer step of each row.
        losses (List[List[float]]): L_i before the step.
        s (List[List[float]]): s_i before the step.
        total (List[float]): Σ exp(−s_i) L_i + s_i.
    """

    branches: List[str]
    steps: List[int] = field(default_factory=list)
    losses: List[List[float]] = field(default_factory=list)
    s: List[List[float]] = field(default_factory=list)
    total: List[float] = field(default_factory=list)

    def append(self, step: int, losses: Sequence[float], s: Sequence[float], total: float) -> None:
        self.steps.append(step)
        self.losses.append([float(v) for v in losses])
        self.s.append([float(v) for v in s])
        self.total.append(float(total))

    def rows(self) -> List[List[float]]:
        """step, L_1..L_k, s_1..s_k, total per recorded step."""
        return [[st, *l, *s, t] for st, l, s, t in zip(self.steps, self.losses, self.s, self.total)]

    def header(self) -> List[str]:
        k = len(self.branches)
        return ["step"] + [f"L{i + 1}" for i in range(k)] + [f"s{i + 1}" for i in range(k)] + ["total"]


class _Example(NamedTuple):
    centered: np.ndarray
    centroid: np.ndarray
    x: np.ndarray
    targets: List[np.ndarray]


def dataset_digest(datasets: Sequence[FeatureDataset]) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        h.update(ds.digest().encode())
    return h.hexdigest()[:16]


def _targets(config: MimoConfig, ds: FeatureDataset, idx: np.ndarray, escf: np.ndarray, cdd: np.ndarray):
    out = []
    for b in config.branches():
        if b.name == "occ":
            out.append(ds.occ[idx].astype(np.float64).reshape(-1, 1))
        elif b.name == "sdf":
            out.append(ds.sdf[idx].reshape(-1, 1))
        elif b.name == "escf":
            out.append(escf)
        elif b.name == "cdd":
            out.append(cdd.reshape(-1, 1))
        else:
            out.append(scf_power_spectrum(escf, config.degree))
    return out


class _Augmenter:
    """Rigidly rotates clouds, queries and their targets."""

    def __init__(self, config: MimoConfig, datasets: Sequence[FeatureDataset]):
        if any(ds.closest_dirs is None for ds in datasets):
            raise InvalidParams(
                "rotation_augmentation", "datasets carry no closest directions; attach them first"
            )
        cfg = datasets[0].config
        self.basis = ShBasis.build(config.degree, make_quadrature(cfg.directions, 2 * config.degree))
        self.v_p = np.asarray(cfg.principal_direction, dtype=np.float64)

    def __call__(self, ds: FeatureDataset, idx: np.ndarray, rng: np.random.Generator) -> _Example:
        r = quat_to_matrix(random_rotation(rng))
        centered, centroid = _canonical_points(ds.observed.points @ r.T)
        escf = ds.escf[idx] @ self.basis.rotation(r).T
        cdd = np.clip((ds.closest_dirs[idx] @ r.T) @ self.v_p, -1.0, 1.0)
        return _Example(centered, centroid, ds.x[idx] @ r.T, [escf, cdd])


def train(
    model: MimoModel,
    datasets: Sequence[FeatureDataset],
    config: TrainConfig = TrainConfig(),
    verbose: bool = False,
) -> LossCurves:
    """
    Minimize the uncertainty-weighted loss over model weights and s.

    Epochs shuffle shapes and queries from streams derived from
    (config.seed, epoch), so a model resumed from a checkpoint written at an
    epoch boundary continues exactly as the uninterrupted run.

    Args:
        model (MimoModel): Trained in place; training resumes from
            model.meta["epoch"] and model.optimizer when present.
        datasets (Sequence[FeatureDataset]): Shapes of one category.
        config (TrainConfig): Optimization settings.
        verbose (bool): Show progress.

    Returns:
        LossCurves: One row per optimizer step taken in this call.

    Raises:
        InvalidCount: if there are no datasets.
        ConfigMismatch: if the dataset degree differs from the model's.
        NonFinite: if the loss becomes NaN/Inf, with the step index.
    """
    config.validate()
    if not datasets:
        raise InvalidCount("training needs at least one dataset")
    for ds in datasets:
        if ds.degree != model.config.degree:
            raise ConfigMismatch(
                f"{ds.shape_id}: dataset degree {ds.degree} != model degree {model.config.degree}"
            )
        if len(ds.observed) < MIN_POINTS:
            raise TooFewPoints(f"{ds.shape_id}: observed cloud has {len(ds.observed)} points")
    digest = dataset_digest(datasets)
    if model.meta.get("dataset") and model.meta["dataset"] != digest:
        raise ConfigMismatch("resumed model was trained on a different dataset")
    model.meta["dataset"] = digest

    mcfg = model.config
    params = model.parameters()
    adam = Adam(params, lr=config.lr)
    if model.optimizer is not None:
        adam.state = replace(model.optimizer, lr=config.lr)
    augment = _Augmenter(mcfg, datasets) if mcfg.rotation_augmentation else None
    canonical = [_canonical_points(ds.observed.points) for ds in datasets]
    curves = LossCurves([b.name for b in mcfg.branches()])
    step = int(model.meta.get("step", 0))

    epochs = range(int(model.meta.get("epoch", 0)), config.epochs)
    for epoch in tqdm(epochs, desc="train", disable=not verbose):
        rng = rng_for(config.seed, "epoch", epoch)
        batches = []
        for k in rng.permutation(len(datasets)):
            perm = rng.permutation(len(datasets[k]))
            batches += [(k, perm[s : s + config.batch_size]) for s in range(0, len(perm), config.batch_size)]
        for k, idx in batches:
            ds = datasets[k]
            if augment is not None:
                ex = augment(ds, idx, rng)
                targets = _targets(mcfg, ds, idx, *ex.targets)
            else:
                centered, centroid = canonical[k]
                ex = _Example(centered, centroid, ds.x[idx], [])
                targets = _targets(mcfg, ds, idx, ds.escf[idx], ds.cdd[idx])

            adam.zero_grad()
            c = model._encode_tensor(ex.centered)
            outputs, _ = model._decode_tensor(c, ex.x - ex.centroid)
            losses = [
                branch_loss(b.kind, o, t, mcfg.sdf_clamp)
                for b, o, t in zip(mcfg.branches(), outputs, targets)
            ]
            s_before = model.loss_state.s.data.copy()
            try:
                total = multitask_loss(model.loss_state, losses)
            except NonFinite as e:
                raise NonFinite("training loss is not finite", step=step) from e
            curves.append(step, [l.item() for l in losses], s_before, total.item())
            total.backward()
            adam.step()
            step += 1
        model.meta["epoch"] = epoch + 1
        model.meta["step"] = step
        if verbose:
            logger.info("epoch %d: total %.5f", epoch, curves.total[-1] if curves.total else float("nan"))
    model.optimizer = adam.state
    return curves


# ---------------------------------------------------------------------------
# metrics and inspection


def occupancy_accuracy(model: MimoModel, datasets: Sequence[FeatureDataset]) -> float:
    """Share of queries with (sigmoid(logit) > 0.5) == occ, over all datasets."""
    hits = total = 0
    for ds in datasets:
        pred = model.predict(model.encode(ds.observed), ds.x)
        hits += int(np.sum((pred.occupancy() > 0.5) == (ds.occ == 1)))
        total += len(ds)
    if total == 0:
        raise InvalidCount("no queries to score")
    return hits / total


def descriptor_distance_map(
    model: MimoModel,
    reference_cloud: PointCloud,
    reference_point: np.ndarray,
    cloud: PointCloud,
    queries: np.ndarray,
) -> Tuple[np.ndarray, int]:
    """
    L1 distance between the descriptor of a reference point and the
    descriptors of queries on another cloud.

    Returns:
        Tuple[np.ndarray, int]: (M,) distances and the index of the nearest
        query (lowest index on ties).
    """
    z_ref = model.point_descriptor(reference_cloud, np.asarray(reference_point, dtype=np.float64).reshape(3))
    z = model.point_descriptor(cloud, np.asarray(queries, dtype=np.float64).reshape(-1, 3))
    dist = np.abs(z - z_ref).sum(axis=1)
    return dist, int(np.argmin(dist))


def descriptor_pca_colors(descriptors: np.ndarray) -> np.ndarray:
    """
    Project descriptors onto their first three principal components and
    rescale each to [0, 1]. Constant components map to 0.5.

    Returns:
        np.ndarray: (M, 3) RGB.
    """
    z = np.asarray(descriptors, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise InvalidCount("need a non-empty (M, D) descriptor array")
    centered = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:3].T
    if proj.shape[1] < 3:
        proj = np.hstack([proj, np.zeros((len(z), 3 - proj.shape[1]))])
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = hi - lo
    return np.where(span > 0, (proj - lo) / np.where(span > 0, span, 1.0), 0.5)
