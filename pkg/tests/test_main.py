"""Tests for the command-line entrypoint."""

from __future__ import annotations

import pytest

from gaitadapt import main as cli
from gaitadapt.errors.exceptions import NumericalFailureError
from gaitadapt.schemas.common import ProtocolTag
from gaitadapt.schemas.manifest import StreamManifest


class TestMain:
    """Test subcommand dispatch and exit codes."""

    def test_synth_success(self, tmp_path):
        """Test a successful command exits 0."""
        out = tmp_path / "data"
        code = cli.main(["synth", str(out), "--domains", "1", "--ids", "2", "--seqs", "3", "--length", "2", "--height", "16", "--width", "12"])
        assert code == 0
        assert (out / "stream.json").is_file()

    def test_data_error_exit_code(self, tmp_path):
        """Test refusing a non-empty directory exits 3."""
        (tmp_path / "x.txt").write_text("x")
        assert cli.main(["synth", str(tmp_path), "--ids", "2", "--seqs", "3"]) == 3

    def test_config_error_exit_code(self, tmp_path, caplog):
        """Test an unknown config key exits 2 and names the key."""
        config = tmp_path / "bad.env"
        config.write_text("not_a_key=1\n")
        assert cli.main(["train", str(config), "--dry-run"]) == 2
        assert "key=not_a_key" in caplog.text

    def test_missing_run_exit_code(self, tmp_path):
        """Test backtesting a directory without a manifest exits 3."""
        assert cli.main(["backtest", str(tmp_path)]) == 3

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch, caplog):
        """Test a numerical failure exits 4 and names the component."""

        def explode(*args, **kwargs):
            raise NumericalFailureError("loss component 'edsn' is not finite", "edsn")

        monkeypatch.setattr(cli, "cmd_train", explode)
        config = tmp_path / "ok.env"
        config.write_text("seed=1\n")
        assert cli.main(["train", str(config)]) == 4
        assert "component=edsn" in caplog.text

    def test_compare_needs_two_runs(self, tmp_path):
        """Test compare with one run is a config error."""
        assert cli.main(["compare", str(tmp_path)]) == 2

    def test_unknown_subcommand(self):
        """Test argparse rejects unknown subcommands."""
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["fly"])
        assert exc_info.value.code == 2

    def test_parser_flags(self):
        """Test train flags parse into the namespace."""
        args = cli.build_parser().parse_args(["train", "c.env", "--resume", "--run-dir", "r"])
        assert args.resume and not args.force and not args.dry_run
        assert str(args.run_dir) == "r"

    def test_synth_protocol_flags(self, tmp_path):
        """Test --protocol and --unseen reach the generated stream manifest."""
        out = tmp_path / "data"
        code = cli.main(
            [
                "synth", str(out), "--domains", "2", "--ids", "4", "--seqs", "3",
                "--length", "2", "--height", "16", "--width", "12",
                "--protocol", "cross-dep", "--unseen", "1",
            ]
        )
        assert code == 0
        manifest = StreamManifest.model_validate_json((out / "stream.json").read_text())
        assert [s.protocol for s in manifest.steps] == [
            ProtocolTag.CROSS_DEPENDENT,
            ProtocolTag.CROSS_DEPENDENT,
            ProtocolTag.UNSEEN,
        ]

    def test_synth_rejects_unknown_protocol(self):
        """Test an unknown protocol is an argparse error."""
        with pytest.raises(SystemExit) as exc:
            cli.build_parser().parse_args(["synth", "out", "--protocol", "unseen"])
        assert exc.value.code == 2
