import logging
from logging.handlers import TimedRotatingFileHandler

from invcloud.util.dirs import default_home_dir

_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_mode(*, is_debug: bool) -> None:
    if is_debug:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.INFO)


def _file_handler(name: str) -> TimedRotatingFileHandler:
    handler = TimedRotatingFileHandler(
        (default_home_dir() / f"{name.lower()}.log").as_posix(),
        when="MIDNIGHT",
        interval=1,
        backupCount=7,
        encoding="utf-8",
    )
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(_FORMAT))
    return handler


def setup_logger(
    name: str,
    *,
    is_stream: bool = True,
    is_file: bool = False,
) -> logging.Logger:
    logger = logging.getLogger(name)
    # 同名ロガーへのハンドラ重複登録を防ぐ
    if logger.handlers:
        return logger
    logger.setLevel(logging.DEBUG)

    if is_stream or not is_file:
        stream_handler = logging.StreamHandler()
        stream_handler.setLevel(logging.INFO)
        stream_handler.setFormatter(logging.Formatter(_FORMAT))
        logger.addHandler(stream_handler)

    if is_file:
        logger.addHandler(_file_handler(name))

    return logger


def enable_file_log(name: str) -> None:
    """既存ロガーに `IC_HOME` 配下への日次ローテーションのファイル出力を追加する (CLI の --log-file 用)。"""
    logger = logging.getLogger(name)
    if any(isinstance(h, TimedRotatingFileHandler) for h in logger.handlers):
        return
    logger.addHandler(_file_handler(name))


def set_stream_level(name: str, level: int) -> None:
    """既存ロガーのストリーム出力レベルを変更する (CLI の --debug 用)。"""
    for handler in logging.getLogger(name).handlers:
        if isinstance(handler, logging.StreamHandler) and not isinstance(handler, TimedRotatingFileHandler):
            handler.setLevel(level)
