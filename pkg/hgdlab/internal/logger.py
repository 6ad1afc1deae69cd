import contextlib
import dataclasses
import datetime
import enum
import os
import pathlib
import sys
import time
import typing

import colorama

# Initialize colorama for cross-platform ANSI coloring
colorama.init(autoreset=True)

LogTypeLiteral = typing.Literal["info", "warning", "debug", "error"]


class LogLevel(str, enum.Enum):
    """
    Logging verbosity levels.

    Attributes
    ----------
    NO_ERROR : str
        Suppress all messages.
    BASIC : str
        Log "info" and "warning".
    STANDARD : str
        Log "info", "warning", and "error".
    DEBUG : str
        Log all levels including "debug".
    """

    NO_ERROR = "no-error"
    BASIC = "basic"
    STANDARD = "standard"
    DEBUG = "debug"


class LogType(str, enum.Enum):
    """Types of log messages."""

    INFO = "info"
    WARNING = "warning"
    DEBUG = "debug"
    ERROR = "error"


class LoggerConfig(typing.TypedDict, total=False):
    """
    Configuration for UniversalLogger.

    Keys
    ----
    name : str
        Prefix for each log message.
    level : LogLevel
        Minimum log level to emit. (default LogLevel.BASIC)
    log_file : pathlib.Path | str | None
        File path for persistent logging. (default None)
    enable_colors : bool
        If True, ANSI colors are applied. (default True)
    timestamp_format : str
        Format specifier for datetime. (default "%Y-%m-%d %H:%M:%S")
    buffer_size : int
        Max messages retained in buffer. (default 1000)
    stream : typing.TextIO
        Console stream. (default sys.stdout)
    """

    name: str
    level: LogLevel
    log_file: typing.Union[str, pathlib.Path, None]
    enable_colors: bool
    timestamp_format: str
    buffer_size: int
    stream: typing.TextIO


@dataclasses.dataclass(frozen=True)
class LogColor:
    """ANSI color codes and icons for log message components."""

    INFO: str = colorama.Fore.GREEN
    WARNING: str = colorama.Fore.YELLOW
    DEBUG: str = colorama.Fore.LIGHTBLACK_EX
    ERROR: str = colorama.Fore.RED
    TIMESTAMP: str = colorama.Fore.CYAN
    METRIC: str = colorama.Fore.MAGENTA
    RESET: str = colorama.Fore.RESET

    ICON_INFO: str = "✅"
    ICON_WARNING: str = "⚠️"
    ICON_DEBUG: str = "🔍"
    ICON_ERROR: str = "❌"


class LogBuffer:
    """
    In-memory FIFO buffer for log entries.

    Parameters
    ----------
    max_size : int
        Maximum entries to retain; the oldest entry is dropped first.
    """

    def __init__(self, max_size: int = 1000) -> None:
        self.messages: list[str] = []
        self.max_size: int = max_size

    def add(self, message: str) -> None:
        self.messages.append(message)
        if len(self.messages) > self.max_size:
            self.messages.pop(0)

    def flush(self) -> list[str]:
        entries: list[str] = self.messages[:]
        self.messages.clear()
        return entries

    def get_all(self) -> list[str]:
        return self.messages[:]


def format_fields(fields: typing.Mapping[str, typing.Any]) -> str:
    """
    Render metric fields as ``key=value`` pairs.

    Floats are printed with six significant digits so metric lines stay
    comparable between runs.
    """
    parts: list[str] = []
    for key, value in fields.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6g}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


class UniversalLogger:
    """
    Console, file and buffer logger shared by every hgd-lab component.

    Attributes
    ----------
    name : str
        Prefix of every line.
    level : LogLevel
        Minimum log level to display.

    Raises
    ------
    OSError
        If the log file directory or file cannot be created.
    """

    _LEVEL_MAP: typing.ClassVar[dict[LogLevel, set[LogTypeLiteral]]] = {
        LogLevel.NO_ERROR: set(),
        LogLevel.BASIC: {"info", "warning"},
        LogLevel.STANDARD: {"info", "warning", "error"},
        LogLevel.DEBUG: {"info", "warning", "debug", "error"},
    }

    def __init__(self, **kwargs: typing.Unpack[LoggerConfig]) -> None:
        self.name: str = kwargs.get("name", "HGD")
        self.level: LogLevel = LogLevel(kwargs.get("level", LogLevel.BASIC))
        raw_log_file = kwargs.get("log_file")
        self.log_file_path: typing.Optional[pathlib.Path] = (
            pathlib.Path(raw_log_file) if raw_log_file else None
        )
        self.enable_colors: bool = kwargs.get("enable_colors", True)
        self.timestamp_format: str = kwargs.get("timestamp_format", "%Y-%m-%d %H:%M:%S")
        self.buffer: LogBuffer = LogBuffer(kwargs.get("buffer_size", 1000))
        self._stream: typing.Optional[typing.TextIO] = kwargs.get("stream")
        self.colors: LogColor = LogColor()

        if self.log_file_path:
            os.makedirs(self.log_file_path.parent, exist_ok=True)
            self.log_file_path.touch(exist_ok=True)
        self.log("Logger initialized", "debug")

    @property
    def stream(self) -> typing.TextIO:
        # Resolved lazily so pytest's capsys sees the replaced sys.stdout.
        return self._stream if self._stream is not None else sys.stdout

    def _timestamp(self) -> str:
        now: str = datetime.datetime.now().astimezone().strftime(self.timestamp_format)
        if self.enable_colors:
            return f"{self.colors.TIMESTAMP}{now}{self.colors.RESET}"
        return now

    def _format(self, msg: str, typ: LogTypeLiteral, color: str | None = None) -> str:
        level_cap: str = typ.capitalize()
        icon: str = getattr(self.colors, f"ICON_{typ.upper()}", "")
        if self.enable_colors:
            color_code: str = color or getattr(self.colors, typ.upper())
            msg = f"{color_code}{msg}{self.colors.RESET}"
        return f"{self.name}: {self._timestamp()} - {icon} {level_cap} - {msg}"

    def _should_log(self, typ: LogTypeLiteral) -> bool:
        return typ in UniversalLogger._LEVEL_MAP[self.level]

    def _emit(self, line: str) -> None:
        self.buffer.add(line)
        self.stream.write(line + "\n")
        self.stream.flush()
        if not self.log_file_path:
            return
        try:
            with self.log_file_path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
        except OSError as err:
            sys.stderr.write(f"File log error: {err}\n")

    def log(self, message: str, log_type: LogTypeLiteral) -> None:
        """
        Emit a log entry.

        Parameters
        ----------
        message : str
            Content of the log.
        log_type : Literal["info","warning","debug","error"]
            Severity level.
        """
        log_type = typing.cast(LogTypeLiteral, LogType(log_type).value)
        if not self._should_log(log_type):
            return
        self._emit(self._format(message, log_type))

    def metric(self, event: str, **fields: typing.Any) -> None:
        """
        Emit a metric line such as ``epoch epoch=3 train_loss=0.0123``.

        Metric lines are info-level and use their own color.
        """
        if not self._should_log("info"):
            return
        body = f"{event} {format_fields(fields)}".rstrip()
        self._emit(self._format(body, "info", color=self.colors.METRIC))

    @contextlib.contextmanager
    def stage(self, name: str) -> typing.Iterator[None]:
        """Log the start and end of a unit of work with its wall-clock duration."""
        self.log(f"{name} started", "info")
        started = time.perf_counter()
        try:
            yield
        except Exception as err:
            self.log(f"{name} failed after {time.perf_counter() - started:.1f}s: {err}", "error")
            raise
        self.log(f"{name} finished in {time.perf_counter() - started:.1f}s", "info")

    def flush_buffer(self) -> list[str]:
        return self.buffer.flush()

    def get_logs(self) -> list[str]:
        return self.buffer.get_all()


def default_logger(name: str) -> UniversalLogger:
    """Logger used by components constructed without an explicit one."""
    return UniversalLogger(name=name, level=LogLevel.STANDARD)
