import logging
import sys
from enum import Enum

class LogLevel(Enum):
    FATAL = logging.CRITICAL
    ERROR = logging.ERROR
    WARN = logging.WARNING
    INFO = logging.INFO
    DEBUG = logging.DEBUG
    TRACE = logging.DEBUG - 5  # Custom level for TRACE
    SILENT = logging.NOTSET

    @classmethod
    def from_name(cls, name: str) -> 'LogLevel':
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown log level: {name}")

LOGGER_NAME = 'covis_fusion'

logging.addLevelName(LogLevel.TRACE.value, 'TRACE')

class Logger:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Logger, cls).__new__(cls)
            cls._instance._initialize_logger()
        return cls._instance

    def _initialize_logger(self):
        self._logger = logging.getLogger(LOGGER_NAME)

        # worker threads share the one stderr handler
        if not self._logger.handlers:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(logging.Formatter(
                '%(asctime)s %(levelname)s %(module)s[%(threadName)s]: %(message)s'
            ))
            self._logger.addHandler(console_handler)
        self._logger.propagate = False

        self._logger.setLevel(logging.INFO)

    @staticmethod
    def set_log_level(level: LogLevel):
        logger = logging.getLogger(LOGGER_NAME)
        if level == LogLevel.SILENT:
            logger.setLevel(logging.CRITICAL + 1)  # Set to higher than CRITICAL
        else:
            logger.setLevel(level.value)

    @staticmethod
    def _format(message, error=None, stack_trace=None):
        extra_info = f" - Error: {error}" if error else ""
        extra_info += f"\nStack trace: {stack_trace}" if stack_trace else ""
        return f"{message}{extra_info}"

    def fatal(self, message, error=None, stack_trace=None):
        self._logger.critical(self._format(message, error, stack_trace))

    def error(self, message, error=None, stack_trace=None):
        self._logger.error(self._format(message, error, stack_trace))

    def warn(self, message, error=None, stack_trace=None):
        self._logger.warning(self._format(message, error, stack_trace))

    def info(self, message, error=None, stack_trace=None):
        self._logger.info(self._format(message, error, stack_trace))

    def debug(self, message, error=None, stack_trace=None):
        self._logger.debug(self._format(message, error, stack_trace))

    def trace(self, message, error=None, stack_trace=None):
        self._logger.log(LogLevel.TRACE.value, self._format(message, error, stack_trace))

# Create a global instance of the logger
logger = Logger()
