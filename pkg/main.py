"""
orbitavg entry point
"""
import logging
import sys
from typing import List, Optional

from colored_logger import (
    configure_application_logging, log_critical, print_colored_error, print_colored_warning, setup_colored_logging,
)
from errors import OrbitavgError

logger = setup_colored_logging(logger_name=__name__)

EXIT_USAGE_ERROR = 2
EXIT_FAILURE = 1
EXIT_INTERRUPTED = 130


def check_dependencies() -> bool:
    """Check if all required packages are installed"""
    required_packages = ['numpy', 'scipy', 'pandas', 'sympy', 'dotenv']

    missing_packages = []
    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print_colored_error("Missing required packages:")
        for package in missing_packages:
            print(f"   • {package}", file=sys.stderr)
        print("\nPlease install missing packages:", file=sys.stderr)
        print("pip install -r requirements.txt", file=sys.stderr)
        return False

    return True


def _log_level(argv: List[str]) -> Optional[int]:
    for i, token in enumerate(argv):
        name = None
        if token == "--log-level" and i + 1 < len(argv):
            name = argv[i + 1]
        elif token.startswith("--log-level="):
            name = token.split("=", 1)[1]
        if name:
            level = logging.getLevelName(name.upper())
            return level if isinstance(level, int) else None
    return None


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not check_dependencies():
        return EXIT_FAILURE

    # imported after the dependency check so a missing package is reported cleanly
    from cli_interface import run_command

    # module loggers exist only once the library is imported
    configure_application_logging(_log_level(argv))
    try:
        return run_command(argv)
    except KeyboardInterrupt:
        print_colored_warning("Interrupted.")
        return EXIT_INTERRUPTED
    except (OrbitavgError, ValueError, FileNotFoundError) as e:
        log_critical(f"{type(e).__name__}: {e}")
        print_colored_error(str(e))
        return EXIT_USAGE_ERROR
    except Exception as e:
        log_critical(f"Unexpected error: {e}", e)
        print_colored_error(f"Unexpected error: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
