"""
Host CPU readings for training-step timing.

Timing reports pair wall-clock step times with the CPU time this process
spent, so single-threaded and BLAS-threaded hosts can be told apart.
"""

from .errors import GaussDistillError


class CPUReaderError(GaussDistillError):
    """CPU measurement failed."""


class CPUReader:
    """Process CPU time and core count backed by psutil."""

    def __init__(self) -> None:
        try:
            import psutil
        except ImportError as exc:
            raise CPUReaderError("Install psutil with: pip install psutil") from exc

        self.psutil = psutil
        try:
            self.process = psutil.Process()
        except Exception as exc:
            raise CPUReaderError(f"Failed to open current process: {exc}") from exc

    def process_cpu_seconds(self) -> float:
        """User plus system CPU time consumed by this process so far."""
        try:
            times = self.process.cpu_times()
            return float(times.user + times.system)
        except Exception as exc:
            raise CPUReaderError(f"Failed to read process CPU time: {exc}") from exc

    def get_core_count(self) -> int:
        """Logical cores of the host, 0 when psutil cannot tell."""
        try:
            core_count = self.psutil.cpu_count(logical=True)
            return int(core_count) if core_count is not None else 0
        except Exception as exc:
            raise CPUReaderError(
                f"Failed to get CPU core count using psutil: {exc}"
            ) from exc
