"""パイプライン全体で使う例外階層。

CLI は `exit_code` を見て終了コードを決める (2: usage, 3: data, 4: algorithmic)。
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ALGORITHMIC = 4


class InvCloudError(Exception):
    """invcloud の処理失敗を表す基底例外。"""

    exit_code: int = EXIT_ALGORITHMIC


class UsageError(InvCloudError):
    exit_code = EXIT_USAGE


class InvalidArgumentError(InvCloudError, ValueError):
    exit_code = EXIT_DATA


class OutOfRangeError(InvCloudError, IndexError):
    exit_code = EXIT_DATA


class NotFoundError(InvCloudError, KeyError):
    exit_code = EXIT_DATA

    def __str__(self) -> str:
        # KeyError の repr 表示を避ける
        return str(self.args[0]) if self.args else ""


class DetectionFailureError(InvCloudError):
    """マーカー検出数が期待値と一致しない。"""

    exit_code = EXIT_DATA

    def __init__(self, found: int, expected: int) -> None:
        self.found = found
        self.expected = expected
        super().__init__(f"marker detection failed: found {found}, expected {expected}")


class GridLayoutError(InvCloudError):
    exit_code = EXIT_DATA


class NoContactError(InvCloudError):
    exit_code = EXIT_ALGORITHMIC


class InsufficientOverlapError(InvCloudError):
    exit_code = EXIT_ALGORITHMIC

    def __init__(self, n: int, required: int = 3) -> None:
        self.n = n
        self.required = required
        super().__init__(f"insufficient overlap: {n} shared ids (< {required})")


class DegenerateGeometryError(InvCloudError):
    exit_code = EXIT_ALGORITHMIC


class YawUnobservableError(InvCloudError):
    """主軸が定まらない (等方的な接触) 。"""

    exit_code = EXIT_ALGORITHMIC

    def __init__(self, ratio: float, threshold: float) -> None:
        self.ratio = ratio
        self.threshold = threshold
        super().__init__(f"yaw unobservable: eigenvalue ratio {ratio:.4f} < {threshold:.4f}")


class PrealignUnavailableError(InvCloudError):
    exit_code = EXIT_ALGORITHMIC


class GateFailureError(InvCloudError):
    exit_code = EXIT_ALGORITHMIC
