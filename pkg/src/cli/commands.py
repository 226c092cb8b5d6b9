"""
Subcommand implementations of the mimo command line.

Every command receives the resolved RunConfig, the parsed arguments and a
Report it fills while running, so a failing command still leaves its
partial metrics behind. Artifacts go to RunConfig.out_dir.

Classes:
    Report: Metrics, artifacts, per-trial records and errors of one run.

Functions:
    cmd_gen_dataset, cmd_train, cmd_eval, cmd_reconstruct, cmd_transfer,
    cmd_grasp_pipeline, cmd_fit_gmm, cmd_train_evaluator.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from mimo import __version__
from mimo.checkpoint import load_checkpoint, save_checkpoint
from mimo.errors import DegenerateData, InvalidParams, MimoError, ReconstructionFailed, SingleClassDataset
from mimo.evaluator import (
    EvaluatorModel,
    LabeledGrasp,
    evaluate_grasp,
    read_labeled_grasps,
    refine_grasp,
    roc_auc,
    save_evaluator,
    train_evaluator,
    write_labeled_grasps,
)
from mimo.features import build_dataset, observe, query_split, read_dataset, write_dataset
from mimo.field import MimoModel, descriptor_distance_map, occupancy_accuracy, train
from mimo.geometry import PointCloud, Pose, random_pose, transform_cloud
from mimo.gmm import fit_gmm, sample_gmm, select_gmm_bic, write_gmm
from mimo.gripper import (
    GraspScene,
    fuse_candidates,
    generate_candidates,
    label_candidate,
    label_candidates,
    read_candidates,
    write_candidates,
)
from mimo.meshio import read_ply, read_shape_spec, write_obj, write_ply
from mimo.pose import (
    placement_angle_error,
    pose_descriptor,
    pose_error,
    read_demonstration,
    rearrange_target,
    sample_bps,
    transfer_pose,
)
from mimo.recon import resample_reconstruction, volumetric_iou
from mimo.render import sample_surface
from mimo.selection import select_task_relevant, transfer_demo_to_canonical
from mimo.shapes import default_spec, generate_shape, random_spec, shape_landmarks
from mimo.types import Category, GraspLabel, Provenance
from utils.seeding import derive_seed, rng_for

from .config import RunConfig

logger = logging.getLogger(__name__)

EVALUATOR_HELD_OUT = 0.2


@dataclass
class Report:
    """
    Attributes:
        command (str): Subcommand name.
        config (dict): RunConfig snapshot.
        metrics (Dict[str, Optional[float]]): Named reals; None marks a metric
            that could not be computed.
        artifacts (Dict[str, str]): Written files by role.
        trials (List[dict]): Per-trial records of batch commands.
        errors (List[dict]): Error name and message of every failure.
        wall_clock (float): Seconds spent in the command.
        version (str): Tool version.
    """

    command: str
    config: dict = field(default_factory=dict)
    metrics: Dict[str, Optional[float]] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    trials: List[dict] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__

    def metric(self, name: str, value: Optional[float]) -> None:
        if value is None:
            self.metrics[name] = None
            return
        value = float(value)
        if not math.isfinite(value):
            logger.warning("metric %s is not finite; recorded as absent", name)
            value = None
        self.metrics[name] = value

    def artifact(self, role: str, path: Path) -> Path:
        self.artifacts[role] = str(path)
        return path

    def error(self, e: MimoError, **context: Any) -> None:
        self.errors.append({"error": e.name, "message": str(e), **context})

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "report.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, allow_nan=False) + "\n", encoding="utf-8")
        return path


def _out(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


# ---------------------------------------------------------------------------
# dataset, training and evaluation


def cmd_gen_dataset(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    cats = config.category_list()
    specs = [random_spec(cats[i % len(cats)], derive_seed(config.seed, "spec", i)) for i in range(config.shapes)]
    datasets = build_dataset(specs, config.dataset, config.seed, verbose=args.verbose)
    manifest = write_dataset(_out(config) / "dataset", datasets, config.seed)
    report.artifact("manifest", manifest)
    report.metric("shapes", len(datasets))
    report.metric("samples", sum(len(ds) for ds in datasets))


def cmd_train(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    datasets = read_dataset(args.dataset)
    if config.model.rotation_augmentation:
        missing = [ds.shape_id for ds in datasets if ds.spec is None]
        if missing:
            raise InvalidParams("rotation_augmentation", f"shapes without a spec: {missing}")
        datasets = [ds.with_closest_dirs(generate_shape(ds.spec, ds.config.mesh_resolution)) for ds in datasets]
    splits = [
        query_split(ds, config.held_out_fraction, derive_seed(config.seed, "split", i))
        for i, ds in enumerate(datasets)
    ]
    model = load_checkpoint(args.resume) if args.resume else MimoModel(config.model, seed=config.seed)
    curves = train(model, [s[0] for s in splits], config.train, verbose=args.verbose)

    out = _out(config)
    save_checkpoint(report.artifact("checkpoint", out / "model.ckpt"), model)
    with open(report.artifact("losses", out / "losses.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(curves.header())
        writer.writerows(curves.rows())
    report.metric("epochs", model.meta.get("epoch", 0))
    report.metric("steps", model.meta.get("step", 0))
    report.metric("final_loss", curves.total[-1] if curves.total else None)
    report.metric("held_out_accuracy", occupancy_accuracy(model, [s[1] for s in splits]))


def _reconstruction_ious(model: MimoModel, datasets, config: RunConfig, report: Report, tag: str) -> List[float]:
    ious = []
    for i, ds in enumerate(datasets):
        if ds.spec is None:
            continue
        truth = generate_shape(ds.spec, ds.config.mesh_resolution)
        try:
            mesh, _ = resample_reconstruction(
                model, ds.observed, config.pipeline.resample_points, derive_seed(config.seed, "eval", i), config.mise
            )
        except ReconstructionFailed as e:
            report.error(e, shape_id=ds.shape_id, model=tag)
            continue
        ious.append(volumetric_iou(mesh, truth))
    return ious


def _correspondence_error(model: MimoModel, datasets, config: RunConfig) -> Optional[float]:
    """Mean landmark error of descriptor matching against the first shape, in diameters."""
    known = [ds for ds in datasets if ds.spec is not None]
    if len(known) < 2 or not model.config.descriptor_branches():
        return None
    ref = known[0]
    ref_marks = shape_landmarks(ref.spec)
    errors = []
    for i, ds in enumerate(known[1:], start=1):
        if ds.spec.category != ref.spec.category:
            continue
        truth = generate_shape(ds.spec, ds.config.mesh_resolution)
        queries = sample_surface(truth, 2048, derive_seed(config.seed, "landmarks", i)).points
        marks = shape_landmarks(ds.spec)
        for name, point in ref_marks.items():
            if name not in marks:
                continue
            _, best = descriptor_distance_map(model, ref.observed, point, ds.observed, queries)
            errors.append(np.linalg.norm(queries[best] - marks[name]) / truth.diameter())
    return _mean(errors)


def _pose_transfer_error(model: MimoModel, datasets, config: RunConfig, report: Report) -> None:
    """Recover a known rigid motion of the first shape's cloud by descriptor transfer."""
    known = [ds for ds in datasets if ds.spec is not None]
    if not known or not model.config.descriptor_branches():
        report.metric("pose_translation_error", None)
        report.metric("pose_rotation_error_deg", None)
        return
    ref = known[0]
    pc = config.pipeline
    bps = sample_bps(pc.bps_points, pc.bps_radius, config.seed)
    anchor = Pose(np.array([1.0, 0.0, 0.0, 0.0]), next(iter(shape_landmarks(ref.spec).values())))
    motion = random_pose(rng_for(config.seed, "eval-motion"), 0.1)
    moved = transform_cloud(ref.observed, motion)
    z = pose_descriptor(model, ref.observed, anchor, bps)
    result = transfer_pose(model, moved, bps, z, config.transfer)
    dt, dr = pose_error(result.pose, motion @ anchor)
    report.metric("pose_translation_error", dt)
    report.metric("pose_rotation_error_deg", dr)
    report.metric("pose_residual", result.residual)


def cmd_eval(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    model = load_checkpoint(args.checkpoint)
    datasets = read_dataset(args.dataset)
    if args.limit:
        datasets = datasets[: args.limit]
    report.metric("occupancy_accuracy", occupancy_accuracy(model, datasets))
    ious = _reconstruction_ious(model, datasets, config, report, "model")
    report.metric("reconstruction_iou", _mean(ious))
    if args.baseline:
        baseline = load_checkpoint(args.baseline)
        base_ious = _reconstruction_ious(baseline, datasets, config, report, "baseline")
        report.metric("baseline_reconstruction_iou", _mean(base_ious))
        gap = None if not ious or not base_ious else _mean(ious) - _mean(base_ious)
        report.metric("joint_training_iou_gain", gap)
    report.metric("correspondence_error", _correspondence_error(model, datasets, config))
    _pose_transfer_error(model, datasets, config, report)


def cmd_reconstruct(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    model = load_checkpoint(args.checkpoint)
    cloud = read_ply(args.cloud)
    mesh, resample = resample_reconstruction(model, cloud, config.pipeline.resample_points, config.seed, config.mise)
    out = _out(config)
    write_obj(report.artifact("mesh", out / "reconstruction.obj"), mesh)
    write_ply(report.artifact("resample", out / "resample.ply"), resample)
    report.metric("vertices", len(mesh.vertices))
    report.metric("faces", len(mesh.faces))
    if args.spec:
        spec = read_shape_spec(args.spec)
        report.metric("iou", volumetric_iou(mesh, generate_shape(spec, config.dataset.mesh_resolution)))
    else:
        report.metric("iou", None)


def cmd_transfer(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    model = load_checkpoint(args.checkpoint)
    demo = read_demonstration(args.demo).validate()
    novel = read_ply(args.cloud)
    pc = config.pipeline
    out = _out(config)
    if args.target_cloud:
        model_b = load_checkpoint(args.checkpoint_b) if args.checkpoint_b else model
        result = rearrange_target(
            model,
            model_b,
            demo,
            novel,
            read_ply(args.target_cloud),
            demo.bps,
            demo.bps,
            config.transfer,
            pc.resample_points,
            config.mise,
            config.seed,
            pc.reconstruct,
        )
        body = {
            "placement": result.placement.to_list(),
            "relative": result.relative.to_list(),
            "frame_a": result.frame_a.to_list(),
            "frame_b": result.frame_b.to_list(),
            "residuals": list(result.residuals),
        }
        report.metric("residual_a", result.residuals[0])
        report.metric("residual_b", result.residuals[1])
        report.metric("placement_tilt_deg", placement_angle_error(result.placement))
    else:
        if demo.grasp_pose is None:
            raise InvalidParams("grasp_pose", "the demonstration has no grasp pose to transfer")

        def resampled(cloud: PointCloud, key: str) -> PointCloud:
            if not pc.reconstruct:
                return cloud
            seed = derive_seed(config.seed, "resample", key)
            return resample_reconstruction(model, cloud, pc.resample_points, seed, config.mise)[1]

        z = pose_descriptor(model, resampled(demo.source, "demo"), demo.grasp_pose, demo.bps)
        result = transfer_pose(model, resampled(novel, "novel"), demo.bps, z, config.transfer, init=demo.grasp_pose)
        body = {
            "pose": result.pose.to_list(),
            "residual": result.residual,
            "restarts": [
                {"init": r.init.to_list(), "pose": r.pose.to_list(), "residual": r.residual} for r in result.restarts
            ],
        }
        report.metric("residual", result.residual)
    path = report.artifact("transfer", out / "transfer.json")
    path.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# grasp learning


def _fit_mixture(poses: Sequence[Pose], config: RunConfig, components: Optional[int]):
    if components:
        return fit_gmm(poses, components, config.em, config.seed)
    return select_gmm_bic(poses, range(1, 6), config.em, config.seed)


def cmd_fit_gmm(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    candidates = read_candidates(args.candidates)
    poses = [c.pose for c in candidates if c.label == GraspLabel.SUCCESS]
    if not poses:
        poses = [c.pose for c in candidates if c.label is None]
    if not poses:
        raise DegenerateData(f"{args.candidates}: no successful or unlabeled candidates")
    gmm = _fit_mixture(poses, config, args.components or config.pipeline.gmm_components)
    write_gmm(report.artifact("gmm", _out(config) / "gmm.json"), gmm)
    report.metric("poses", len(poses))
    report.metric("components", gmm.k)
    report.metric("log_likelihood", gmm.log_likelihoods[-1])


def _evaluator_scores(evaluator: EvaluatorModel, samples: Sequence[LabeledGrasp]):
    """(accuracy at logit 0, ROC AUC or None) of an evaluator on labeled grasps."""
    if not samples:
        return None, None
    latents: Dict[int, Any] = {}
    scores = []
    for s in samples:
        if id(s.cloud) not in latents:
            latents[id(s.cloud)] = evaluator.encode(s.cloud)
        scores.append(evaluator.logits(latents[id(s.cloud)], [s.pose])[0])
    labels = np.array([s.label == GraspLabel.SUCCESS for s in samples])
    accuracy = float(np.mean((np.asarray(scores) > 0) == labels))
    try:
        auc = roc_auc(scores, labels)
    except SingleClassDataset:
        auc = None
    return accuracy, auc


def cmd_train_evaluator(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    model = load_checkpoint(args.checkpoint)
    samples = read_labeled_grasps(args.samples)
    perm = rng_for(config.seed, "evaluator-split").permutation(len(samples))
    held = int(round(EVALUATOR_HELD_OUT * len(samples)))
    train_part = [samples[i] for i in sorted(perm[held:])]
    held_part = [samples[i] for i in sorted(perm[:held])]
    evaluator = train_evaluator(model, train_part, config.gripper, config.evaluator, verbose=args.verbose)
    save_evaluator(report.artifact("evaluator", _out(config) / "evaluator.ckpt"), evaluator)
    accuracy, _ = _evaluator_scores(evaluator, train_part)
    held_accuracy, held_auc = _evaluator_scores(evaluator, held_part)
    report.metric("train_accuracy", accuracy)
    report.metric("held_out_accuracy", held_accuracy)
    report.metric("held_out_auc", held_auc)
    report.metric("final_loss", evaluator.history[-1] if evaluator.history else None)


def cmd_grasp_pipeline(config: RunConfig, args: argparse.Namespace, report: Report) -> None:
    """
    Demonstration to executed grasps on novel instances: canonical candidates
    are ranked against the demonstration and fused with its direct transfer,
    the successful ones train a pose mixture, labeled candidates of training
    instances train the evaluator, and every trial transfers mixture samples
    onto a novel instance, keeps the best-scored one, refines it if it scores
    below the threshold and labels the result.
    """
    pc = config.pipeline
    category = Category(pc.category)
    seed = config.seed
    gripper = config.gripper
    out = _out(config)
    model = load_checkpoint(args.checkpoint)
    demo = read_demonstration(args.demo).validate()
    if demo.grasp_pose is None:
        raise InvalidParams("grasp_pose", "the demonstration has no grasp pose")
    bps = demo.bps

    def resampled(cloud: PointCloud, *keys) -> PointCloud:
        if not pc.reconstruct:
            return cloud
        return resample_reconstruction(
            model, cloud, pc.resample_points, derive_seed(seed, "resample", *keys), config.mise
        )[1]

    canonical_spec = default_spec(category, seed)
    canonical_mesh = generate_shape(canonical_spec, config.dataset.mesh_resolution)
    canonical_obs = observe(canonical_mesh, config.dataset, derive_seed(seed, "canonical"))
    canonical_r = resampled(canonical_obs, "canonical")
    demo_r = resampled(demo.source, "demo")
    z_demo = pose_descriptor(model, demo_r, demo.grasp_pose, bps)

    scene = GraspScene(canonical_mesh, config.candidates.collision_samples)
    agnostic = generate_candidates(
        scene, gripper, pc.candidates_per_shape, derive_seed(seed, "candidates", "canonical"), config.candidates
    )
    ranked = select_task_relevant(model, canonical_r, agnostic, bps, z_demo, pc.top_k)
    transferred = transfer_demo_to_canonical(model, demo_r, canonical_r, bps, demo.grasp_pose, config.transfer)
    fused = fuse_candidates([r.candidate for r in ranked], transferred)
    relevant = label_candidates(scene, gripper, fused, config.candidates)
    write_candidates(report.artifact("candidates", out / "canonical_candidates.jsonl"), relevant)
    successes = [c.pose for c in relevant if c.label == GraspLabel.SUCCESS]
    report.metric("task_relevant_candidates", len(relevant))
    report.metric("task_relevant_successes", len(successes))
    gmm = _fit_mixture(successes, config, pc.gmm_components)
    write_gmm(report.artifact("gmm", out / "gmm.json"), gmm)
    report.metric("gmm_components", gmm.k)

    entries = [
        (canonical_spec.shape_id, LabeledGrasp(canonical_obs, c.pose, c.label))
        for c in label_candidates(scene, gripper, agnostic, config.candidates)
    ]
    for i in range(pc.training_shapes):
        spec = random_spec(category, derive_seed(seed, "train-shape", i))
        try:
            mesh = generate_shape(spec, config.dataset.mesh_resolution)
            obs = observe(mesh, config.dataset, derive_seed(seed, "train-observed", i))
            found = generate_candidates(
                mesh, gripper, pc.candidates_per_shape, derive_seed(seed, "candidates", i), config.candidates
            )
        except MimoError as e:
            report.error(e, shape_id=spec.shape_id, stage="evaluator-data")
            continue
        entries += [
            (spec.shape_id, LabeledGrasp(obs, c.pose, c.label))
            for c in label_candidates(mesh, gripper, found, config.candidates)
        ]
    (out / "labeled").mkdir(exist_ok=True)
    write_labeled_grasps(report.artifact("labeled_grasps", out / "labeled" / "grasps.jsonl"), entries)
    samples = [s for _, s in entries]
    evaluator = train_evaluator(model, samples, gripper, config.evaluator, verbose=args.verbose)
    save_evaluator(report.artifact("evaluator", out / "evaluator.ckpt"), evaluator)
    accuracy, auc = _evaluator_scores(evaluator, samples)
    report.metric("evaluator_train_accuracy", accuracy)
    report.metric("evaluator_train_auc", auc)

    def run_trial(t: int) -> dict:
        spec = random_spec(category, derive_seed(seed, "trial", t))
        record: Dict[str, Any] = {"trial": t, "shape_id": spec.shape_id}
        try:
            mesh = generate_shape(spec, config.dataset.mesh_resolution)
            obs = observe(mesh, config.dataset, derive_seed(seed, "trial-observed", t))
            obs_r = resampled(obs, "trial", t)
            latent = evaluator.encode(obs)
            best = None
            for j, sample in enumerate(sample_gmm(gmm, pc.gmm_samples, derive_seed(seed, "trial-gmm", t))):
                z = pose_descriptor(model, canonical_r, sample, bps)
                search = dataclasses.replace(config.transfer, seed=derive_seed(seed, "trial-transfer", t, j))
                found = transfer_pose(model, obs_r, bps, z, search, init=sample)
                prob = evaluate_grasp(evaluator, latent, found.pose)
                if best is None or prob > best[0]:
                    best = (prob, j, found)
            _, j, found = best
            refined = refine_grasp(evaluator, latent, found.pose, config.refine)
            label = label_candidate(mesh, gripper, refined.pose, config.candidates)
            record.update(
                provenance=Provenance.GMM_SAMPLE.value,
                sample=j,
                residual=found.residual,
                initial_probability=refined.initial_probability,
                final_probability=refined.probability,
                refinement_engaged=refined.initial_probability < config.refine.threshold,
                refine_steps=refined.steps,
                pose=refined.pose.to_list(),
                success=label == GraspLabel.SUCCESS,
            )
        except MimoError as e:
            record.update(error=e.name, message=str(e))
        return record

    trials = range(pc.trials)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(tqdm(pool.map(run_trial, trials), total=pc.trials, desc="trials", disable=not args.verbose))
    else:
        records = [run_trial(t) for t in tqdm(trials, desc="trials", disable=not args.verbose)]
    report.trials = records
    for r in records:
        if "error" in r:
            report.errors.append({"error": r["error"], "message": r["message"], "trial": r["trial"]})
    done = [r for r in records if "error" not in r]
    report.metric("trials", len(records))
    report.metric("completed_trials", len(done))
    report.metric("success_rate", _mean([float(r["success"]) for r in done]))
    report.metric("refined_trials", sum(1 for r in done if r["refinement_engaged"]))
    report.metric("mean_initial_probability", _mean([r["initial_probability"] for r in done]))
    report.metric("mean_final_probability", _mean([r["final_probability"] for r in done]))


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "transfer": cmd_transfer,
    "grasp-pipeline": cmd_grasp_pipeline,
    "fit-gmm": cmd_fit_gmm,
    "train-evaluator": cmd_train_evaluator,
}
