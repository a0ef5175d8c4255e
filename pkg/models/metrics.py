"""
Line-delimited JSON metrics.

The first record of every stream is a header holding the command, the fully
resolved config and machine info. Every record carries `schema_version` and
`timestamp`; nothing else in a stream depends on wall-clock time except bench
measurements.
"""

import json
import logging
import platform
from datetime import datetime, timezone

import numpy as np
import torch

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def machine_info():
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
        "torch_threads": torch.get_num_threads(),
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().tolist()
    return value


class MetricsWriter:
    """Appends one JSON object per line to `path`; with path=None records are only kept in memory."""

    def __init__(self, path, command, config=None):
        self.path = path
        self.command = command
        self.records = []
        self._file = open(path, "w", encoding="utf-8") if path else None
        self.write("header", command=command, config=config or {}, machine=machine_info())

    def write(self, kind, **fields):
        record = {"kind": kind, "schema_version": SCHEMA_VERSION,
                  "timestamp": datetime.now(timezone.utc).isoformat()}
        record.update(_jsonable(fields))
        self.records.append(record)
        if self._file is not None:
            self._file.write(json.dumps(record) + "\n")
            # partial streams must survive a divergence exit
            self._file.flush()
        return record

    def of_kind(self, kind):
        return [r for r in self.records if r["kind"] == kind]

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None
            log.debug("metrics written to %s", self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def strip_volatile(records):
    """Records without timestamps and machine info, for run-to-run comparison."""
    out = []
    for record in records:
        record = {k: v for k, v in record.items() if k != "timestamp"}
        if record.get("kind") == "header":
            record.pop("machine", None)
        out.append(record)
    return out
