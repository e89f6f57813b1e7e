import inspect
import logging
import time
from typing import Callable, Dict, List

from app.core.errors import UsageError
from app.services.schemas import JobConfig

logger = logging.getLogger(__name__)

CommandFn = Callable[[JobConfig], List[str]]


class CommandsRegistry:
    def __init__(self):
        self._commands: Dict[str, CommandFn] = {}

    def register(self, name: str, func: CommandFn):
        """Register a command; the function takes a JobConfig and returns the paths it wrote."""
        self._commands[name] = func
        logger.debug(f"Registered command: {name}")

    def execute(self, name: str, job: JobConfig) -> List[str]:
        """Run a registered command. Errors propagate so the caller can map them to exit codes."""
        if name not in self._commands:
            logger.error(f"Command not found: {name}")
            raise UsageError(f"unknown command {name!r}")
        start = time.perf_counter()
        paths = self._commands[name](job)
        logger.info(f"Command {name} finished in {time.perf_counter() - start:.1f}s: {', '.join(paths)}")
        return paths

    def get_command_names(self) -> list:
        return list(self._commands.keys())

    def describe(self) -> str:
        """One line per command, taken from the first line of its docstring."""
        lines = ["commands:"]
        for name, func in self._commands.items():
            doc = inspect.getdoc(func) or "No description."
            lines.append(f"  {name:<10} {doc.splitlines()[0]}")
        return "\n".join(lines)


# Create a singleton instance
commands_registry = CommandsRegistry()

# ─── Standard commands ──────────────────────────────────────

from app.tasks.exponent_job import run_exponent  # noqa: E402
from app.tasks.fig1_job import run_fig1  # noqa: E402
from app.tasks.simulate_job import run_simulate  # noqa: E402
from app.tasks.tradeoff_job import run_tradeoff  # noqa: E402

commands_registry.register("exponent", run_exponent)
commands_registry.register("tradeoff", run_tradeoff)
commands_registry.register("simulate", run_simulate)
commands_registry.register("fig1", run_fig1)
