import json
from pathlib import Path
from typing import Any, Optional

import numpy as np
from loguru import logger


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class FileManager:
    @staticmethod
    def load_json(file_path: Path) -> Optional[Any]:
        file_path = Path(file_path)
        if not file_path.exists():
            logger.error(f"File not found: {file_path}")
            return None
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading {file_path}: {e}")
            return None

    @staticmethod
    def save_json(data: Any, file_path: Path) -> bool:
        file_path = Path(file_path)
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, default=_to_builtin)
            return True
        except (OSError, TypeError) as e:
            logger.error(f"Error saving to {file_path}: {e}")
            return False

    @staticmethod
    def ensure_directory(path: Path) -> None:
        Path(path).mkdir(parents=True, exist_ok=True)
