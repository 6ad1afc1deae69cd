"""
Tests for UniversalLogger.
"""
import io

import pytest

from hgdlab.internal.logger import LogBuffer, LogLevel, LogType, UniversalLogger, format_fields


@pytest.mark.unit
class TestUniversalLogger:
    """Test UniversalLogger functionality."""

    def test_logger_initialization(self):
        """Test logger can be initialized."""
        logger = UniversalLogger(name="TestLogger", enable_colors=False)
        assert logger.name == "TestLogger"
        assert logger.level == LogLevel.BASIC

    def test_log_info_message(self, capsys):
        logger = UniversalLogger(name="Test", enable_colors=False)
        logger.log("Test message", LogType.INFO)

        captured = capsys.readouterr()
        assert "Test message" in captured.out
        assert "Info" in captured.out
        assert "✅" in captured.out

    def test_error_needs_standard_level(self, capsys):
        """Errors are dropped at BASIC and shown at STANDARD."""
        UniversalLogger(name="Test", level=LogLevel.BASIC, enable_colors=False).log("hidden", "error")
        UniversalLogger(name="Test", level=LogLevel.STANDARD, enable_colors=False).log("shown", "error")

        captured = capsys.readouterr()
        assert "hidden" not in captured.out
        assert "shown" in captured.out

    def test_debug_only_at_debug_level(self, capsys):
        UniversalLogger(name="Test", level=LogLevel.STANDARD, enable_colors=False).log("quiet", "debug")
        UniversalLogger(name="Test", level=LogLevel.DEBUG, enable_colors=False).log("loud", "debug")

        captured = capsys.readouterr()
        assert "quiet" not in captured.out
        assert "loud" in captured.out

    def test_no_error_level_is_silent(self, capsys):
        logger = UniversalLogger(name="Test", level=LogLevel.NO_ERROR, enable_colors=False)
        logger.log("nothing", "info")
        logger.metric("epoch", epoch=1)

        assert capsys.readouterr().out == ""

    def test_metric_line_format(self):
        stream = io.StringIO()
        logger = UniversalLogger(name="Test", enable_colors=False, stream=stream)
        logger.metric("denoiser-epoch", epoch=3, train_loss=0.0123456789)

        assert "denoiser-epoch epoch=3 train_loss=0.0123457" in stream.getvalue()

    def test_stage_logs_start_and_finish(self):
        stream = io.StringIO()
        logger = UniversalLogger(name="Test", enable_colors=False, stream=stream)
        with logger.stage("forge-corpus"):
            pass

        output = stream.getvalue()
        assert "forge-corpus started" in output
        assert "forge-corpus finished in" in output

    def test_stage_logs_failure_and_reraises(self):
        stream = io.StringIO()
        logger = UniversalLogger(name="Test", level=LogLevel.STANDARD, enable_colors=False, stream=stream)
        with pytest.raises(RuntimeError):
            with logger.stage("evaluate"):
                raise RuntimeError("boom")

        assert "evaluate failed after" in stream.getvalue()

    def test_log_file_receives_lines(self, temp_dir):
        log_file = temp_dir / "logs" / "lab.log"
        logger = UniversalLogger(name="Test", enable_colors=False, log_file=log_file, stream=io.StringIO())
        logger.log("persisted", "info")

        assert "persisted" in log_file.read_text(encoding="utf-8")

    def test_buffer_keeps_emitted_lines(self):
        logger = UniversalLogger(name="Test", enable_colors=False, stream=io.StringIO())
        logger.log("one", "info")
        logger.log("two", "warning")

        logs = logger.get_logs()
        assert len(logs) == 2
        assert logger.flush_buffer() == logs
        assert logger.get_logs() == []


@pytest.mark.unit
class TestLogBuffer:
    def test_oldest_entry_dropped(self):
        buffer = LogBuffer(max_size=2)
        for message in ("a", "b", "c"):
            buffer.add(message)
        assert buffer.get_all() == ["b", "c"]


@pytest.mark.unit
class TestFormatFields:
    def test_floats_use_six_significant_digits(self):
        assert format_fields({"loss": 1.0 / 3.0, "epoch": 2, "model": "vgg4"}) == "loss=0.333333 epoch=2 model=vgg4"


@pytest.mark.unit
class TestLogLevel:
    def test_log_levels_exist(self):
        assert LogLevel.NO_ERROR == "no-error"
        assert LogLevel.BASIC == "basic"
        assert LogLevel.STANDARD == "standard"
        assert LogLevel.DEBUG == "debug"
