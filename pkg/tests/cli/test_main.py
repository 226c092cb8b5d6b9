"""
A module to test the mimo command line through main().
"""

import json

import numpy as np
import pytest
from scipy.special import expit

import cli.commands as commands
import mimo.recon as recon
from cli.commands import Report
from cli.config import RunConfig, load_run_config
from cli.main import build_parser, main
from mimo.checkpoint import save_checkpoint
from mimo.errors import InvalidParams, NonFinite
from mimo.evaluator import LabeledGrasp, write_labeled_grasps
from mimo.field import MimoModel
from mimo.geometry import Pose, quat_from_rotvec, transform_cloud
from mimo.gmm import GraspGmm, sample_gmm
from mimo.gripper import GraspCandidate, read_candidates, write_candidates
from mimo.meshio import write_ply
from mimo.pose import Demonstration, sample_bps, write_demonstration
from mimo.render import sample_surface
from mimo.shapes import default_spec, generate_shape
from mimo.types import GraspLabel, Provenance

TINY_RUN = {
    "shapes": 2,
    "dataset": {"samples_per_shape": 64, "observed_points": 32, "degree": 2, "directions": 128, "mesh_resolution": 32},
    "model": {
        "latent_dim": 8,
        "encoder_widths": [8],
        "trunk_widths": [16],
        "head_widths": [[8], [8], [8], [8]],
        "degree": 2,
    },
    "train": {"epochs": 1, "batch_size": 32},
}

FAST_RUN = {
    **TINY_RUN,
    "mise": {"initial": 8, "final": 32},
    "transfer": {"restarts": 2, "iterations": 3},
    "candidates": {"collision_samples": 512},
    "evaluator": {"widths": [8], "epochs": 2, "batch_size": 16},
    "refine": {"max_iterations": 3},
    "pipeline": {
        "training_shapes": 1,
        "candidates_per_shape": 12,
        "top_k": 12,
        "trials": 3,
        "gmm_samples": 2,
        "gmm_components": 1,
        "resample_points": 64,
        "reconstruct": False,
        "bps_points": 8,
    },
}

GRASP = Pose(quat_from_rotvec([0.0, np.pi / 2, 0.0]), np.array([0.0, 0.0, 0.05]))


def _report(out_dir):
    return json.loads((out_dir / "report.json").read_text())


def _setup(tmp_path, run=FAST_RUN, target=False):
    """Run config, untrained checkpoint, demonstration and novel cloud under tmp_path."""
    (tmp_path / "run.json").write_text(json.dumps(run))
    config = RunConfig.from_dict(run)
    save_checkpoint(tmp_path / "model.ckpt", MimoModel(config.model, seed=0))
    mesh = generate_shape(default_spec("mug"), 32)
    source = sample_surface(mesh, 48, seed=0)
    demo = Demonstration(
        source=source,
        target=sample_surface(mesh, 48, seed=1) if target else None,
        grasp_pose=GRASP,
        bps=sample_bps(8, seed=0),
    )
    write_demonstration(tmp_path / "demo.json", demo)
    moved = Pose(quat_from_rotvec([0.0, 0.0, 0.3]), np.array([0.02, 0.0, 0.0]))
    write_ply(tmp_path / "novel.ply", transform_cloud(source, moved))
    return ["--config", str(tmp_path / "run.json"), "--checkpoint", str(tmp_path / "model.ckpt")]


def test_parser_knows_every_command():
    """Test that each subcommand parses with its required arguments."""
    parser = build_parser()
    commands = {
        "gen-dataset": [],
        "train": ["--dataset", "d"],
        "eval": ["--checkpoint", "m", "--dataset", "d"],
        "reconstruct": ["--checkpoint", "m", "--cloud", "c.ply"],
        "transfer": ["--checkpoint", "m", "--demo", "d.json", "--cloud", "c.ply"],
        "grasp-pipeline": ["--checkpoint", "m", "--demo", "d.json"],
        "fit-gmm": ["--candidates", "c.jsonl"],
        "train-evaluator": ["--checkpoint", "m", "--samples", "s.jsonl"],
    }
    for name, rest in commands.items():
        assert parser.parse_args([name, *rest]).command == name
    with pytest.raises(SystemExit):
        parser.parse_args(["fit-gmm", "--candidates", "c.jsonl", "--components", "0"])


def test_invalid_category_exits_with_config_error(tmp_path, capsys):
    """Test that an unknown family exits 2, names the field and still writes a report."""
    code = main(["gen-dataset", "--category", "cup", "--out", str(tmp_path)])
    assert code == 2
    assert "categories" in capsys.readouterr().err
    report = _report(tmp_path)
    assert report["command"] == "gen-dataset"
    assert report["errors"][0]["error"] == "InvalidParams"
    assert "categories" in report["errors"][0]["message"]


def test_config_file_rejects_unknown_keys(tmp_path):
    """Test that stray keys at the top level or inside a block are errors."""
    (tmp_path / "run.json").write_text(json.dumps({"seed": 1, "colour": "red"}))
    with pytest.raises(InvalidParams, match="colour"):
        load_run_config(str(tmp_path / "run.json"))
    (tmp_path / "block.json").write_text(json.dumps({"pipeline": {"trails": 3}}))
    with pytest.raises(InvalidParams, match="trails"):
        load_run_config(str(tmp_path / "block.json"))


def test_flags_override_the_config_file(tmp_path):
    """Test that command-line values win over the file and the snapshot round-trips."""
    (tmp_path / "run.json").write_text(json.dumps({"seed": 1, "threads": 2}))
    config = load_run_config(str(tmp_path / "run.json"), seed=7, threads=None, categories=["bowl", "mug"])
    assert config.seed == 7 and config.threads == 2
    assert config.categories == ("bowl", "mug")
    assert RunConfig.from_dict(config.to_dict()) == config


def test_report_drops_non_finite_metrics(tmp_path):
    """Test that NaN metrics are stored as absent and the report is valid JSON."""
    report = Report(command="eval")
    report.metric("iou", float("nan"))
    report.metric("accuracy", 0.5)
    path = report.write(tmp_path)
    body = json.loads(path.read_text())
    assert body["metrics"] == {"iou": None, "accuracy": 0.5}


def test_fit_gmm_command(tmp_path):
    """Test fitting a mixture to unlabeled candidates from the command line."""
    means = [
        Pose(quat_from_rotvec([0.2, 0.0, 0.1]), np.array([0.1, 0.0, 0.2])),
        Pose(quat_from_rotvec([-1.0, 0.3, 0.0]), np.array([-0.2, 0.1, 0.0])),
    ]
    gen = GraspGmm([0.5, 0.5], [m.translation for m in means], [m.rotation for m in means],
                   np.stack([np.eye(6) * 1e-4] * 2))
    write_candidates(tmp_path / "c.jsonl", [GraspCandidate(p) for p in sample_gmm(gen, 60, seed=0)])
    out = tmp_path / "out"
    code = main(["fit-gmm", "--candidates", str(tmp_path / "c.jsonl"), "--components", "2", "--out", str(out)])
    assert code == 0
    report = _report(out)
    assert report["metrics"]["components"] == 2
    assert (out / "gmm.json").exists()


def test_fit_gmm_without_usable_candidates_exits_with_data_error(tmp_path):
    """Test that a file with no usable poses exits 3."""
    (tmp_path / "c.jsonl").write_text("")
    code = main(["fit-gmm", "--candidates", str(tmp_path / "c.jsonl"), "--out", str(tmp_path)])
    assert code == 3
    assert _report(tmp_path)["errors"][0]["error"] == "DegenerateData"


def test_gen_dataset_writes_a_manifest(tmp_path):
    """Test dataset generation on a tiny configuration."""
    (tmp_path / "run.json").write_text(json.dumps(TINY_RUN))
    out = tmp_path / "data"
    assert main(["gen-dataset", "--config", str(tmp_path / "run.json"), "--out", str(out)]) == 0
    report = _report(out)
    assert report["metrics"] == {"shapes": 2.0, "samples": 128.0}
    assert (out / "dataset" / "manifest.json").exists()


def test_gen_dataset_is_byte_reproducible(tmp_path):
    """Test that the same seed and config write identical dataset files."""
    (tmp_path / "run.json").write_text(json.dumps(TINY_RUN))
    for name in ("a", "b"):
        assert main(["gen-dataset", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / name)]) == 0
    a, b = tmp_path / "a" / "dataset", tmp_path / "b" / "dataset"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert any(n.endswith(".mfds") for n in names) and any(n.endswith(".ply") for n in names)
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_missing_checkpoint_exits_with_data_error(tmp_path, capsys):
    """Test that an absent checkpoint exits 3 with a report instead of a traceback."""
    out = tmp_path / "out"
    code = main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--dataset", str(tmp_path), "--out", str(out)])
    assert code == 3
    assert "CorruptFile" in capsys.readouterr().err
    error = _report(out)["errors"][0]
    assert error["error"] == "CorruptFile" and "missing.ckpt" in error["message"]


def test_deleted_record_file_exits_with_data_error(tmp_path):
    """Test that training on a dataset with a missing record file exits 3 and names the entry."""
    (tmp_path / "run.json").write_text(json.dumps(TINY_RUN))
    cfg = ["--config", str(tmp_path / "run.json")]
    assert main(["gen-dataset", *cfg, "--out", str(tmp_path / "data")]) == 0
    dataset = tmp_path / "data" / "dataset"
    next(dataset.glob("*.mfds")).unlink()
    out = tmp_path / "m"
    assert main(["train", *cfg, "--dataset", str(dataset), "--out", str(out)]) == 3
    error = _report(out)["errors"][0]
    assert error["error"] == "CorruptFile" and ".mfds" in error["message"]
    assert not (out / "model.ckpt").exists()


def test_reconstruct_command(tmp_path, monkeypatch):
    """Test that reconstruct writes a mesh and a resample of the extracted surface."""
    args = _setup(tmp_path)
    sphere = recon.analytic_field(lambda x: expit(200.0 * (0.2**2 - np.sum(x * x, axis=1))))
    monkeypatch.setattr(recon, "model_field", lambda *_args, **_kwargs: sphere)
    out = tmp_path / "out"
    assert main(["reconstruct", *args, "--cloud", str(tmp_path / "novel.ply"), "--out", str(out)]) == 0
    report = _report(out)
    assert report["metrics"]["faces"] > 0 and report["metrics"]["iou"] is None
    assert (out / "reconstruction.obj").exists() and (out / "resample.ply").exists()


def test_reconstruct_failure_exits_with_data_error(tmp_path, monkeypatch):
    """Test that a field that is empty everywhere exits 3 with the failure in the report."""
    args = _setup(tmp_path)
    empty = recon.analytic_field(lambda x: np.zeros(len(x)))
    monkeypatch.setattr(recon, "model_field", lambda *_args, **_kwargs: empty)
    out = tmp_path / "out"
    code = main(["reconstruct", *args, "--cloud", str(tmp_path / "novel.ply"), "--out", str(out)])
    assert code == 3
    assert _report(out)["errors"][0]["error"] == "ReconstructionFailed"


def test_transfer_command(tmp_path):
    """Test grasp transfer onto a novel cloud, with one record per restart."""
    args = _setup(tmp_path)
    out = tmp_path / "out"
    assert main(["transfer", *args, "--demo", str(tmp_path / "demo.json"), "--cloud", str(tmp_path / "novel.ply"),
                 "--out", str(out)]) == 0
    body = json.loads((out / "transfer.json").read_text())
    assert len(body["pose"]) == 7 and len(body["restarts"]) == 2
    assert body["residual"] == min(r["residual"] for r in body["restarts"])
    assert _report(out)["metrics"]["residual"] == body["residual"]


def test_transfer_command_rearranges_with_a_target_cloud(tmp_path):
    """Test that a target cloud switches transfer to rearrangement."""
    args = _setup(tmp_path, target=True)
    write_ply(tmp_path / "target.ply", sample_surface(generate_shape(default_spec("bowl"), 32), 48, seed=2))
    out = tmp_path / "out"
    code = main(["transfer", *args, "--demo", str(tmp_path / "demo.json"), "--cloud", str(tmp_path / "novel.ply"),
                 "--target-cloud", str(tmp_path / "target.ply"), "--out", str(out)])
    assert code == 0
    body = json.loads((out / "transfer.json").read_text())
    assert {"placement", "relative", "frame_a", "frame_b", "residuals"} <= set(body)
    assert 0.0 <= _report(out)["metrics"]["placement_tilt_deg"] <= 180.0


def test_train_evaluator_command(tmp_path):
    """Test evaluator training from a labeled grasp file with a held-out split."""
    args = _setup(tmp_path)
    rng = np.random.default_rng(0)
    cloud = sample_surface(generate_shape(default_spec("mug"), 32), 48, seed=0)
    labels = [GraspLabel.SUCCESS, GraspLabel.FAILURE]
    entries = [
        ("obj0", LabeledGrasp(cloud, Pose(GRASP.rotation, GRASP.translation + rng.normal(0, 0.02, 3)), labels[i % 2]))
        for i in range(10)
    ]
    write_labeled_grasps(tmp_path / "grasps.jsonl", entries)
    out = tmp_path / "out"
    assert main(["train-evaluator", *args, "--samples", str(tmp_path / "grasps.jsonl"), "--out", str(out)]) == 0
    metrics = _report(out)["metrics"]
    assert 0.0 <= metrics["train_accuracy"] <= 1.0 and 0.0 <= metrics["held_out_accuracy"] <= 1.0
    assert (out / "evaluator.ckpt").exists()


def test_eval_command_on_an_untrained_field(tmp_path):
    """Test that eval reports every metric, recording failed reconstructions as errors."""
    args = _setup(tmp_path)
    cfg = args[:2]
    assert main(["gen-dataset", *cfg, "--out", str(tmp_path / "data")]) == 0
    out = tmp_path / "out"
    assert main(["eval", *args, "--dataset", str(tmp_path / "data" / "dataset"), "--out", str(out)]) == 0
    report = _report(out)
    for name in ("occupancy_accuracy", "reconstruction_iou", "correspondence_error", "pose_translation_error"):
        assert name in report["metrics"]
    assert 0.0 <= report["metrics"]["occupancy_accuracy"] <= 1.0
    assert all(e["error"] == "ReconstructionFailed" for e in report["errors"])


def test_grasp_pipeline_keeps_going_past_a_failed_trial(tmp_path, monkeypatch):
    """Test the grasp pipeline end to end with one trial forced to fail."""
    args = _setup(tmp_path)
    refine = commands.refine_grasp
    calls = []

    def flaky_refine(*a, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise NonFinite("refined logit is not finite")
        return refine(*a, **kw)

    monkeypatch.setattr(commands, "refine_grasp", flaky_refine)
    out = tmp_path / "out"
    assert main(["grasp-pipeline", *args, "--demo", str(tmp_path / "demo.json"), "--out", str(out)]) == 0
    report = _report(out)
    trials = report["trials"]
    assert [t["trial"] for t in trials] == [0, 1, 2]
    assert trials[1]["error"] == "NonFinite"
    assert {"error": "NonFinite", "message": "refined logit is not finite", "trial": 1} in report["errors"]
    assert report["metrics"]["completed_trials"] == 2
    for t in (trials[0], trials[2]):
        assert t["provenance"] == Provenance.GMM_SAMPLE.value
        assert t["refinement_engaged"] == (t["initial_probability"] < 0.9)
        if not t["refinement_engaged"]:
            assert t["refine_steps"] == 0 and t["final_probability"] == t["initial_probability"]
        else:
            assert t["final_probability"] >= t["initial_probability"]
    candidates = read_candidates(out / "canonical_candidates.jsonl")
    assert candidates and all(c.label is not None for c in candidates)
    assert {c.provenance for c in candidates} <= {Provenance.HEURISTIC, Provenance.DEMO_TRANSFER}
    assert (out / "gmm.json").exists() and (out / "evaluator.ckpt").exists()


@pytest.mark.slow
def test_training_is_byte_reproducible(tmp_path):
    """Test that training twice from one dataset writes identical checkpoints and loss curves."""
    (tmp_path / "run.json").write_text(json.dumps(TINY_RUN))
    cfg = ["--config", str(tmp_path / "run.json")]
    assert main(["gen-dataset", *cfg, "--out", str(tmp_path / "data")]) == 0
    for name in ("a", "b"):
        dataset = str(tmp_path / "data" / "dataset")
        assert main(["train", *cfg, "--dataset", dataset, "--out", str(tmp_path / name)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    assert (a / "losses.csv").read_bytes() == (b / "losses.csv").read_bytes()
    header = (a / "losses.csv").read_text().splitlines()[0]
    assert header == "step,L1,L2,L3,L4,s1,s2,s3,s4,total"
    assert _report(a)["metrics"]["final_loss"] is not None
