"""
A module scoring grasps with a network on top of a frozen field encoder.

The evaluator reads the encoding c of an object cloud and the gripper
keypoints placed by the grasp pose, relative to the cloud centroid, and
returns a success logit. The encoder is a frozen copy of a trained field;
its digest is stored with the evaluator and checked on load.

Refinement raises the logit by gradient ascent on a world-frame increment
[ω, v] applied on the left of the grasp pose.

Classes:
    EvaluatorConfig: Decoder widths and training settings.
    LabeledGrasp: One (cloud, pose, label) training example.
    EvaluatorModel: Frozen encoder plus decoder.
    GraspScorer: What refine_grasp needs from a scorer.
    RefineConfig, RefineResult: Refinement settings and outcome.

Functions:
    train_evaluator, evaluate_grasp, refine_grasp, roc_auc,
    save_evaluator, load_evaluator, write_labeled_grasps, read_labeled_grasps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata
from tqdm import tqdm

from utils.seeding import rng_for

from .autodiff import Tensor, concat, no_grad
from .checkpoint import decode_checkpoint, encode_checkpoint, restore_parameters
from .errors import CorruptFile, InvalidCount, InvalidParams, NonFinite, SingleClassDataset
from .field import Latent, MimoConfig, MimoModel
from .geometry import PointCloud, Pose
from .gripper import GripperModel, gripper_keypoints
from .layers import Adam, Linear, Mlp
from .losses import branch_loss
from .meshio import read_bytes, read_ply, read_text, write_ply
from .types import GraspLabel, LossKind

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_HALVINGS = 20


@dataclass(frozen=True)
class EvaluatorConfig:
    """
    Attributes:
        widths (Tuple[int, ...]): Hidden widths of the decoder.
        epochs (int): Passes over the labeled set.
        batch_size (int): Examples per step.
        lr (float): Adam learning rate.
        seed (int): Initialization and shuffling seed.
    """

    widths: Tuple[int, ...] = (128, 64)
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def validate(self) -> "EvaluatorConfig":
        if not self.widths or any(w < 1 for w in self.widths):
            raise InvalidParams("widths", "need at least one positive width")
        if self.epochs < 0:
            raise InvalidParams("epochs", "must be >= 0")
        if self.batch_size < 1:
            raise InvalidParams("batch_size", "must be >= 1")
        if not self.lr > 0:
            raise InvalidParams("lr", "must be > 0")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EvaluatorConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(int(w) for w in d["widths"])
        try:
            return EvaluatorConfig(**d).validate()
        except TypeError as e:
            raise InvalidParams("evaluator", str(e)) from e


class LabeledGrasp(NamedTuple):
    cloud: PointCloud
    pose: Pose
    label: GraspLabel


class EvaluatorModel:
    """
    Success network φ(T_g, P^k | c).

    Attributes:
        encoder (MimoModel): Frozen copy of the source field.
        encoder_digest (str): Digest of the source field's parameters.
        gripper (GripperModel): Hand whose keypoints are scored.
        config (EvaluatorConfig): Decoder settings.
        hidden (Mlp): Decoder hidden layers.
        out (Linear): Logit layer.
        history (List[float]): Mean training loss per epoch.
    """

    def __init__(self, encoder: MimoModel, gripper: GripperModel, config: EvaluatorConfig = EvaluatorConfig()):
        self.config = config.validate()
        self.gripper = gripper.validate()
        self.encoder = encoder.frozen()
        self.encoder_digest = encoder.digest()
        self.keypoints = gripper_keypoints(gripper)
        rng = rng_for(config.seed, "evaluator")
        in_dim = encoder.config.latent_dim + 3 * len(self.keypoints)
        self.hidden = Mlp((in_dim, *config.widths), rng, "evaluator")
        self.out = Linear(config.widths[-1], 1, rng, "evaluator.out")
        self.history: List[float] = []

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(p.name, p) for p in self.hidden.parameters() + self.out.parameters()]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def encode(self, cloud: PointCloud | Latent) -> Latent:
        return cloud if isinstance(cloud, Latent) else self.encoder.encode(cloud)

    def keypoint_features(self, latent: Latent, poses: Sequence[Pose]) -> np.ndarray:
        """(B, 3K) keypoints placed by each pose, relative to the cloud centroid."""
        rows = [(p.apply(self.keypoints) - latent.centroid).reshape(-1) for p in poses]
        return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)

    def logit_tensor(self, c: np.ndarray, features: Tensor) -> Tensor:
        """(B, 1) logits; c is shared by all rows."""
        latent = Tensor(np.asarray(c).reshape(1, -1)).rows(np.zeros(features.shape[0], dtype=np.int64))
        return self.out(self.hidden(concat([latent, features], axis=1)))

    def logits(self, cloud: PointCloud | Latent, poses: Sequence[Pose]) -> np.ndarray:
        latent = self.encode(cloud)
        with no_grad():
            out = self.logit_tensor(latent.c, Tensor(self.keypoint_features(latent, poses)))
        return out.data[:, 0]

    def score(self, cloud: PointCloud | Latent, pose: Pose) -> Tuple[float, np.ndarray]:
        """
        Logit and its gradient with respect to [ω, v] on the left of the pose.

        With keypoints y_j = T·k_j and g_j = ∂logit/∂y_j the gradient is
        [Σ y_j × g_j, Σ g_j].
        """
        latent = self.encode(cloud)
        y = pose.apply(self.keypoints)
        y_rel = Tensor(y - latent.centroid, requires_grad=True)
        logit = self.logit_tensor(latent.c, y_rel.reshape(1, -1)).reshape(())
        logit.backward()
        for p in self.parameters():
            p.zero_grad()
        g = y_rel.grad if y_rel.grad is not None else np.zeros_like(y)
        return logit.item(), np.concatenate([np.cross(y, g).sum(axis=0), g.sum(axis=0)])


def _labels(samples: Sequence[LabeledGrasp]) -> np.ndarray:
    return np.array([1.0 if s.label == GraspLabel.SUCCESS else 0.0 for s in samples])


def train_evaluator(
    model: MimoModel,
    samples: Sequence[LabeledGrasp],
    gripper: GripperModel,
    config: EvaluatorConfig = EvaluatorConfig(),
    verbose: bool = False,
) -> EvaluatorModel:
    """
    Fit the decoder with binary cross-entropy; the encoder stays frozen.

    Args:
        model (MimoModel): Trained field providing the encoder.
        samples (Sequence[LabeledGrasp]): Labeled grasps, both labels present.
        gripper (GripperModel): Hand geometry.
        config (EvaluatorConfig): Training settings.
        verbose (bool): Show progress.

    Returns:
        EvaluatorModel: Trained evaluator; history holds the loss per epoch.

    Raises:
        InvalidCount: if there are no samples.
        SingleClassDataset: if every sample has the same label.
    """
    if not samples:
        raise InvalidCount("evaluator training needs at least one sample")
    y = _labels(samples)
    if y.min() == y.max():
        raise SingleClassDataset(f"all {len(y)} grasps are labeled {samples[0].label.value}")
    ev = EvaluatorModel(model, gripper, config)

    latents: Dict[int, Latent] = {}
    c_rows, f_rows = [], []
    for s in samples:
        key = id(s.cloud)
        if key not in latents:
            latents[key] = ev.encode(s.cloud)
        lat = latents[key]
        c_rows.append(lat.c)
        f_rows.append(ev.keypoint_features(lat, [s.pose])[0])
    inputs = np.concatenate([np.asarray(c_rows), np.asarray(f_rows)], axis=1)

    params = ev.parameters()
    adam = Adam(params, lr=config.lr)
    for epoch in tqdm(range(config.epochs), desc="evaluator", disable=not verbose):
        rng = rng_for(config.seed, "evaluator-epoch", epoch)
        perm = rng.permutation(len(samples))
        total = 0.0
        for s in range(0, len(perm), config.batch_size):
            idx = perm[s : s + config.batch_size]
            adam.zero_grad()
            logits = ev.out(ev.hidden(Tensor(inputs[idx])))
            loss = branch_loss(LossKind.BCE, logits, y[idx].reshape(-1, 1))
            if not np.isfinite(loss.item()):
                raise NonFinite("evaluator loss is not finite", step=epoch)
            loss.backward()
            adam.step()
            total += loss.item() * len(idx)
        ev.history.append(total / len(samples))
        if verbose:
            logger.info("evaluator epoch %d: loss %.5f", epoch, ev.history[-1])
    return ev


def evaluate_grasp(evaluator: EvaluatorModel, cloud: PointCloud | Latent, pose: Pose) -> float:
    """Success probability sigmoid(logit) in [0, 1]."""
    return float(expit(evaluator.logits(cloud, [pose])[0]))


class GraspScorer(Protocol):
    def encode(self, cloud: Any) -> Any: ...

    def score(self, encoded: Any, pose: Pose) -> Tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class RefineConfig:
    """
    Attributes:
        threshold (float): ξ; grasps scoring at least this are left alone.
        step_size (float): Ascent step on the logit gradient.
        max_iterations (int): Ascent step cap.
        backtracking (bool): Halve a step that lowers the probability; off
            means plain fixed-step ascent.
    """

    threshold: float = 0.9
    step_size: float = 1e-3
    max_iterations: int = 100
    backtracking: bool = True

    def validate(self) -> "RefineConfig":
        if not 0.0 < self.threshold < 1.0:
            raise InvalidParams("threshold", "must lie in (0, 1)")
        if not self.step_size > 0:
            raise InvalidParams("step_size", "must be > 0")
        if self.max_iterations < 0:
            raise InvalidParams("max_iterations", "must be >= 0")
        return self


class RefineResult(NamedTuple):
    pose: Pose
    probability: float
    steps: int
    initial_probability: float


def _checked_score(scorer: GraspScorer, encoded: Any, pose: Pose, step: int) -> Tuple[float, np.ndarray]:
    logit, grad = scorer.score(encoded, pose)
    grad = np.asarray(grad, dtype=np.float64).reshape(6)
    if not np.isfinite(logit) or not np.all(np.isfinite(grad)):
        raise NonFinite("grasp score is not finite", step=step)
    return float(logit), grad


def refine_grasp(
    scorer: GraspScorer,
    cloud: Any,
    pose: Pose,
    config: RefineConfig = RefineConfig(),
) -> RefineResult:
    """
    Raise the predicted success of a grasp below the threshold.

    Grasps already at or above the threshold come back unchanged with zero
    steps. Otherwise each step moves the pose by step_size · ∇logit on the
    left; with backtracking, a step that lowers the probability is halved
    until it does not, and refinement stops when no halving helps. It also
    stops at the threshold or after max_iterations steps.

    Args:
        scorer (GraspScorer): An EvaluatorModel or any object with encode/score.
        cloud: Object cloud passed to scorer.encode.
        pose (Pose): Initial grasp pose.
        config (RefineConfig): Settings.

    Returns:
        RefineResult: Final pose and probability, steps taken, initial probability.

    Raises:
        NonFinite: if the score or its gradient is NaN/Inf.
    """
    config.validate()
    encoded = scorer.encode(cloud)
    logit, grad = _checked_score(scorer, encoded, pose, 0)
    initial = prob = float(expit(logit))
    if prob >= config.threshold:
        return RefineResult(pose, prob, 0, initial)
    steps = 0
    for it in range(config.max_iterations):
        step = config.step_size
        accepted = None
        for _ in range(MAX_HALVINGS if config.backtracking else 1):
            candidate = pose.left_increment(step * grad)
            c_logit, c_grad = _checked_score(scorer, encoded, candidate, it + 1)
            c_prob = float(expit(c_logit))
            if not config.backtracking or c_prob >= prob:
                accepted = (candidate, c_prob, c_grad)
                break
            step /= 2
        if accepted is None:
            logger.debug("refine: no improving step after %d halvings at iteration %d", MAX_HALVINGS, it)
            break
        pose, prob, grad = accepted
        steps += 1
        if prob >= config.threshold:
            break
    logger.debug("refine: %.4f -> %.4f in %d steps", initial, prob, steps)
    return RefineResult(pose, prob, steps, initial)


def roc_auc(scores: Sequence[float], labels: Sequence[int | bool]) -> float:
    """
    Area under the ROC curve by the rank-sum statistic; tied scores share
    their average rank.

    Raises:
        SingleClassDataset: if labels hold a single class.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if len(s) != len(y):
        raise InvalidParams("labels", f"{len(y)} labels for {len(s)} scores")
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise SingleClassDataset("ROC AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - pos * (pos + 1) / 2) / (pos * neg))


ENCODER_PREFIX = "encoder/"


def save_evaluator(path: PathLike, evaluator: EvaluatorModel) -> None:
    header = {
        "kind": "evaluator",
        "config": evaluator.config.to_dict(),
        "gripper": evaluator.gripper.to_dict(),
        "encoder": {"config": evaluator.encoder.config.to_dict(), "digest": evaluator.encoder_digest},
        "history": evaluator.history,
    }
    tensors = [(ENCODER_PREFIX + name, p.data) for name, p in evaluator.encoder.named_parameters()]
    tensors += [(name, p.data) for name, p in evaluator.named_parameters()]
    Path(path).write_bytes(encode_checkpoint(header, tensors))


def load_evaluator(path: PathLike) -> EvaluatorModel:
    """
    Raises:
        CorruptFile: if the file is malformed or the stored encoder does not
            match its recorded digest.
    """
    header, tensors = decode_checkpoint(read_bytes(path))
    if header.get("kind") != "evaluator":
        raise CorruptFile(f"{path}: not an evaluator checkpoint (kind={header.get('kind')!r})")
    try:
        encoder = MimoModel(MimoConfig.from_dict(header["encoder"]["config"]))
        stored = {k[len(ENCODER_PREFIX) :]: v for k, v in tensors.items() if k.startswith(ENCODER_PREFIX)}
        restore_parameters(encoder.named_parameters(), stored, str(path))
        if encoder.digest() != header["encoder"]["digest"]:
            raise CorruptFile(f"{path}: encoder parameters do not match the recorded digest")
        ev = EvaluatorModel(
            encoder,
            GripperModel.from_dict(header["gripper"]),
            EvaluatorConfig.from_dict(header["config"]),
        )
    except KeyError as e:
        raise CorruptFile(f"{path}: missing header field {e}") from e
    restore_parameters(ev.named_parameters(), tensors, str(path))
    ev.history = [float(v) for v in header.get("history", [])]
    return ev


def write_labeled_grasps(path: PathLike, entries: Sequence[Tuple[str, LabeledGrasp]]) -> None:
    """
    JSON lines {cloud, pose, label}; each distinct cloud is written once as
    `<name>.ply` next to the file and referenced by name.
    """
    path = Path(path)
    written = set()
    lines = []
    for name, sample in entries:
        ply = f"{name}.ply"
        if ply not in written:
            write_ply(path.parent / ply, sample.cloud)
            written.add(ply)
        lines.append(json.dumps({"cloud": ply, "pose": sample.pose.to_list(), "label": sample.label.value}))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_labeled_grasps(path: PathLike) -> List[LabeledGrasp]:
    """
    Raises:
        CorruptFile: on a malformed line or unreadable cloud.
    """
    path = Path(path)
    clouds: Dict[str, PointCloud] = {}
    out = []
    for lineno, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            name = entry["cloud"]
            if name not in clouds:
                clouds[name] = read_ply(path.parent / name)
            out.append(LabeledGrasp(clouds[name], Pose.from_list(entry["pose"]), GraspLabel(entry["label"])))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise CorruptFile(f"{path}:{lineno}: {e}") from e
    return out
