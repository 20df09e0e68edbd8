"""Tests for CLI argument parsing and configuration files."""

from unittest.mock import patch

import pytest

from gauss_distill.cli.argument_parser import parse_arguments, split_paths
from gauss_distill.cli.config_parser import (
    KEYS,
    parse_assignment,
    parse_config,
    read_config_file,
)
from gauss_distill.core.errors import (
    DataFormatError,
    InvalidValueError,
    MissingKeyError,
    UnknownKeyError,
    UsageError,
)


class TestArgumentParsing:
    """Argument parsing tests."""

    def test_train_arguments(self):
        """Test a full train command line."""
        args = parse_arguments(
            [
                "train",
                "--base",
                "x.emb",
                "--teachers",
                "a.emb, b.emb",
                "--seed",
                "7",
                "--out",
                "run.gdck",
                "--set",
                "train.epochs=3",
                "--set",
                "train.lr=0.01",
            ]
        )

        assert args.command == "train"
        assert args.teachers == ["a.emb", "b.emb"]
        assert args.seed == 7
        assert args.overrides == ["train.epochs=3", "train.lr=0.01"]
        assert args.loss is None and args.resume is None

    def test_reads_sys_argv(self):
        """Test argv defaults to the process arguments."""
        argv = ["gauss-distill", "synth", "--seed", "1", "--out", "out"]
        with patch("sys.argv", argv):
            args = parse_arguments()

        assert args.preset == "standard"
        assert args.include_teachers is False

    @pytest.mark.parametrize("command", ["train", "synth"])
    def test_seed_required(self, command, capsys):
        """Test training commands refuse to run without a seed."""
        argv = [command, "--out", "o", "--base", "x", "--teachers", "a"]
        if command == "synth":
            argv = [command, "--out", "o"]

        with pytest.raises(SystemExit) as excinfo:
            parse_arguments(argv)

        assert excinfo.value.code == 2
        assert "requires --seed" in capsys.readouterr().err

    def test_negative_seed(self, capsys):
        """Test seeds must be non-negative."""
        with pytest.raises(SystemExit):
            parse_arguments(["synth", "--seed", "-3", "--out", "o"])

        assert "non-negative" in capsys.readouterr().err

    def test_empty_path_list(self, capsys):
        """Test a comma list with no paths is rejected."""
        with pytest.raises(SystemExit):
            parse_arguments(["report", "--inputs", " , ", "--out", "all.json"])

        assert "--inputs needs at least one path" in capsys.readouterr().err

    def test_unknown_loss(self):
        """Test --loss is restricted to known objectives."""
        with pytest.raises(SystemExit):
            parse_arguments(
                ["timing", "--base", "x", "--teachers", "a", "--loss", "hinge"]
            )

    def test_command_required(self):
        """Test a subcommand must be given."""
        with pytest.raises(SystemExit):
            parse_arguments([])

    def test_eval_probe_defaults(self):
        """Test the probe split seed defaults to zero."""
        args = parse_arguments(["eval-probe", "--embeddings", "s.emb", "--out", "d"])

        assert args.seed == 0
        assert args.labels is None and args.task is None

    def test_split_paths(self):
        """Test blanks around and between paths are dropped."""
        assert split_paths(" a.emb,,b.emb , ") == ["a.emb", "b.emb"]


class TestConfigParsing:
    """Configuration file and override tests."""

    def test_defaults(self):
        """Test every key starts from its default."""
        config = parse_config(None)

        assert config.get("train.lr") == 1e-3
        assert config.get("head.depth") == 3
        assert config.get("student.hidden") == (256, 128)
        assert config.get("train.epochs") is None
        assert config.explicit == frozenset()

    def test_file_values(self, tmp_path):
        """Test file values parse with comments and blank lines ignored."""
        path = tmp_path / "run.conf"
        path.write_text(
            "# distillation run\n"
            "train.lr = 0.005  # smaller step\n"
            "\n"
            "student.hidden = 64, 32\n"
            "loss.kind = mse\n"
        )

        config = parse_config(path)

        assert config.get("train.lr") == 0.005
        assert config.get("student.hidden") == (64, 32)
        assert config.get("loss.kind") == "mse"
        assert config.explicit == {"train.lr", "student.hidden", "loss.kind"}

    def test_override_beats_file(self, tmp_path):
        """Test command-line overrides win over the file, last one first."""
        path = tmp_path / "run.conf"
        path.write_text("train.lr = 0.005\n")

        config = parse_config(path, ["train.lr=0.1", "train.lr=0.2"])

        assert config.get("train.lr") == 0.2

    def test_unknown_key_in_file(self, tmp_path):
        """Test a misspelled key is named in the error."""
        path = tmp_path / "run.conf"
        path.write_text("trian.lr = 0.1\n")

        with pytest.raises(UnknownKeyError, match="trian.lr"):
            parse_config(path)

    def test_invalid_number(self):
        """Test unparsable values report key and value."""
        with pytest.raises(InvalidValueError) as excinfo:
            parse_config(None, ["train.lr=fast"])

        assert excinfo.value.key == "train.lr"
        assert "'fast'" in str(excinfo.value)

    @pytest.mark.parametrize(
        "assignment",
        [
            "train.batch_size=0",
            "train.val_fraction=1.5",
            "student.hidden=64,-1",
            "loss.kind=hinge",
            "synth.losses=nll,hinge",
            "train.lr=-1",
        ],
    )
    def test_out_of_range(self, assignment):
        """Test range checks run before any work."""
        with pytest.raises(InvalidValueError):
            parse_config(None, [assignment])

    def test_line_without_equals(self, tmp_path):
        """Test a malformed line names its location."""
        path = tmp_path / "run.conf"
        path.write_text("train.lr = 0.1\njust words\n")

        with pytest.raises(UsageError, match="run.conf:2"):
            read_config_file(path)

    def test_missing_file(self, tmp_path):
        """Test an unreadable config file is a data error."""
        with pytest.raises(DataFormatError):
            parse_config(tmp_path / "absent.conf")

    def test_parse_assignment_keeps_later_equals(self):
        """Test only the first '=' separates key and value."""
        assert parse_assignment(" a.b = c=d ") == ("a.b", "c=d")

    def test_get_unknown_key(self):
        """Test lookups of unknown keys fail loudly."""
        with pytest.raises(UnknownKeyError):
            parse_config(None).get("nope")

    def test_every_default_passes_its_check(self):
        """Test the defaults table is self-consistent."""
        for key, spec in KEYS.items():
            if spec.default is not None and spec.check is not None:
                assert spec.check(spec.default) is None, key


class TestDerivedConfigs:
    """CliConfig to core config tests."""

    def test_train_config_needs_epochs(self):
        """Test train.epochs has no default."""
        with pytest.raises(MissingKeyError, match="train.epochs"):
            parse_config(None).train_config(seed=1)

    def test_train_config(self):
        """Test keys flow into the trainer config."""
        config = parse_config(None, ["train.epochs=4", "loss.kind=cosine"])

        train = config.train_config(seed=9)

        assert train.seed == 9 and train.epochs == 4
        assert train.loss.name == "cosine"

    def test_default_epochs(self):
        """Test callers may supply an epoch fallback."""
        assert parse_config(None).train_config(seed=0, default_epochs=1).epochs == 1

    def test_probe_config_seed_count(self):
        """Test probe.seeds counts seeds from zero."""
        probe = parse_config(None, ["probe.seeds=3"]).probe_config()

        assert probe.seeds == (0, 1, 2)

    def test_fixture_overrides_only_explicit_keys(self):
        """Test presets keep their values unless a key is set explicitly."""
        config = parse_config(None, ["synth.n=500", "probe.seeds=1"])

        fixture = config.fixture_spec("small", seed=5)

        assert fixture.n == 500
        assert fixture.seed == 5
        assert fixture.probe_seeds == (0,)
        assert fixture.lr == 1e-3
        assert fixture.student_hidden == (32,)

    def test_unknown_preset(self):
        """Test preset names are validated."""
        with pytest.raises(UsageError, match="huge"):
            parse_config(None).fixture_spec("huge", seed=0)
