__all__ = [
    "__version__",
    "main",
]

__version__ = "0.1.0"

from invcloud.interfaces.cli import main  # noqa: E402
