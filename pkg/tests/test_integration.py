"""
Quick integration test for the distillation pipeline.

Runs synthetic data through files, training, export and probing end to end
without mocking.
"""

import numpy as np
import pytest

from gauss_distill.core.data_models import EmbeddingDataset
from gauss_distill.core.datastore import make_splits, read_embeddings, write_embeddings
from gauss_distill.core.probe import ProbeConfig, aggregate_runs, probe_records
from gauss_distill.core.synthbench import (
    TeacherSpec,
    generate_teachers,
    generate_world,
)
from gauss_distill.core.trainer import (
    TrainConfig,
    eval_loss,
    load_checkpoint,
    save_checkpoint,
    student_embeddings,
    train_distill,
)
from gauss_distill.main import run_command


@pytest.mark.integration
class TestPipelineIntegration:
    """End-to-end tests across the core modules."""

    def test_files_to_probe(self, tmp_path):
        """Test a world written to disk distills and probes like the in-memory one."""
        world = generate_world(300, 6, 10, 2, seed=4, n_spanning=1)
        specs = [
            TeacherSpec("left", (0, 1, 2), dim=6, seed=1),
            TeacherSpec("right", (3, 4, 5), dim=6, seed=2),
        ]
        teachers = generate_teachers(world, specs)
        write_embeddings(tmp_path / "base.emb", world.base_features)
        for name, view in teachers.teacher_views:
            write_embeddings(tmp_path / f"{name}.emb", view)

        base, _ = read_embeddings(tmp_path / "base.emb")
        views = [
            (name, read_embeddings(tmp_path / f"{name}.emb")[0])
            for name in ("left", "right")
        ]
        data = EmbeddingDataset(base, views)
        config = TrainConfig(
            seed=5,
            epochs=4,
            batch_size=32,
            lr=1e-3,
            student_hidden=(32,),
            student_dim=8,
            head_hidden=16,
        )

        checkpoint = train_distill(config, data)
        save_checkpoint(checkpoint, tmp_path / "run.gdck")
        restored = load_checkpoint(tmp_path / "run.gdck")

        embeddings = student_embeddings(restored, base)
        assert np.array_equal(embeddings, student_embeddings(checkpoint, base))
        assert embeddings.shape == (300, 8)

        splits = make_splits(300, seed=world.seed)
        result = eval_loss(restored, data, splits.test)
        assert len(result.estimate.per_teacher) == 2
        assert result.bound is not None

        cfg = ProbeConfig(hidden=16, seeds=(0,), max_epochs=5, min_epochs=5)
        records = []
        for task in world.tasks:
            records.extend(
                probe_records(
                    "student", embeddings, task.name, task.labels, cfg, split_seed=4
                )
            )
        report = aggregate_runs(records)
        assert report.tasks == ["task_0", "task_1"]
        assert 0.0 <= report.mean_over_tasks("student", "auroc") <= 1.0

    def test_config_file_drives_training(self, tmp_path, rng):
        """Test a config file and overrides reach a CLI training run."""
        base = rng.standard_normal((50, 4))
        write_embeddings(tmp_path / "base.emb", base)
        write_embeddings(tmp_path / "t.emb", base @ rng.standard_normal((4, 3)))
        config = tmp_path / "run.conf"
        config.write_text(
            "# tiny run\n"
            "train.epochs = 2\n"
            "train.batch_size = 10\n"
            "student.hidden = 6\n"
            "student.dim = 3\n"
            "head.hidden = 6\n"
            "loss.kind = cosine\n"
        )
        out = tmp_path / "run.gdck"

        code = run_command(
            [
                "train",
                "--base",
                str(tmp_path / "base.emb"),
                "--teachers",
                str(tmp_path / "t.emb"),
                "--seed",
                "0",
                "--out",
                str(out),
                "--config",
                str(config),
                "--set",
                "loss.kind=mse",
            ]
        )

        assert code == 0
        checkpoint = load_checkpoint(out)
        assert checkpoint.config.loss.name == "mse"
        assert checkpoint.config.student_dim == 3
        assert checkpoint.epoch == 2
