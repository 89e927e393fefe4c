"""
Result persistence: atomic JSON and CSV writes
"""

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Dict

import pandas as pd

from wasscause.models import ResultDocument
from wasscause.utils.errors import SchemaError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.17g'


class ResultStore:
    """Centralized artifact management for an output location"""

    def __init__(self, out_path: str):
        self.out_path = out_path

    @contextmanager
    def atomic_file(self, path: str, mode: str = 'w'):
        """Write to a temp file next to path, then rename it into place"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        handle = tempfile.NamedTemporaryFile(mode, dir=directory, prefix='.tmp-', delete=False,
                                             encoding='utf-8', newline='')
        try:
            yield handle
            handle.flush()
            os.fsync(handle.fileno())
            handle.close()
            os.replace(handle.name, path)
        except Exception:
            handle.close()
            if os.path.exists(handle.name):
                os.remove(handle.name)
            raise

    def write_json(self, path: str, payload: Dict[str, Any]) -> str:
        with self.atomic_file(path) as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write('\n')
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, path: str, frame: pd.DataFrame) -> str:
        with self.atomic_file(path) as handle:
            frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"Wrote {path}")
        return path

    def write_document(self, document: ResultDocument) -> str:
        return self.write_json(self.out_path, document.to_dict())

    def read_document(self, path: str = None) -> ResultDocument:
        with open(path or self.out_path, encoding='utf-8') as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise SchemaError('document', 'result document must be a JSON object')
        return ResultDocument.from_dict(data)

    def companion_path(self, suffix: str) -> str:
        """Sibling file of the main output, e.g. result.json -> result.csv"""
        root, _ = os.path.splitext(self.out_path)
        return f"{root}.{suffix}"
