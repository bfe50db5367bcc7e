import os
from pathlib import Path


def default_home_dir() -> Path:
    """デフォルトのホームディレクトリを取得します。

    `IC_HOME` が設定されていればそれを優先します。

    Returns:
        Path: ログや既定設定を置くディレクトリ
    """
    home_str = os.environ.get("IC_HOME")
    home_dir = Path(home_str) if home_str is not None else Path.home() / ".invcloud"
    if not home_dir.exists():
        home_dir.mkdir(parents=True, exist_ok=True)
    return home_dir


def default_config_path() -> Path:
    """ホームディレクトリ直下の既定設定ファイルのパス。"""
    return default_home_dir() / "config.yaml"


def get_seed_override() -> int | None:
    """環境変数 `IC_SEED` からシードを取得します。

    Returns:
        int | None: 整数として解釈できた場合のみ値を返す
    """
    seed = os.environ.get("IC_SEED")
    if seed is None or not seed.strip():
        return None
    try:
        return int(seed.strip())
    except ValueError:
        return None


def ensure_output_dir(path: str | Path) -> Path:
    """出力ディレクトリを作成して返します。

    Raises:
        NotADirectoryError: パスが既存のファイルを指している場合
    """
    out = Path(path)
    if out.exists() and not out.is_dir():
        _msg = f"Output path not a directory: {out}"
        raise NotADirectoryError(_msg)
    out.mkdir(parents=True, exist_ok=True)
    return out
