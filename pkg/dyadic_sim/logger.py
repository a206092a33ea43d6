import json
import os
from typing import Optional

import numpy as np
import wandb


def to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def append_to_jsonl(path: str, data: dict):
    with open(path, "a") as f:
        f.write(json.dumps(data, default=to_builtin, sort_keys=True) + "\n")


class MetricLogger:
    """Buffers key-value metrics for one experiment run.

    Each dump becomes one wandb step and one line of <save_path>/log.jsonl.
    wandb runs in the mode given by $WANDB_MODE, "disabled" unless set."""

    CURRENT: Optional["MetricLogger"] = None

    def __init__(self, save_path: str, wandb_args: Optional[dict] = None):
        os.makedirs(save_path, exist_ok=True)
        args = {"project": "dyadic-sim", "mode": os.environ.get("WANDB_MODE", "disabled"), "dir": save_path}
        args.update(wandb_args or {})
        self.run = wandb.init(**args)
        self.log_path = os.path.join(save_path, "log.jsonl")
        self.step = 0
        self.pending: dict = {}

    def record(self, metrics: dict):
        self.pending.update(metrics)

    def record_estimates(self, estimates: dict, prefix: str = ""):
        """Each Estimate becomes <key> and <key>_radius; None entries are skipped."""
        for key, est in estimates.items():
            if est is not None:
                self.pending[prefix + key] = est.value
                self.pending[prefix + key + "_radius"] = est.radius

    def flush(self):
        if not self.pending:
            return
        row = json.loads(json.dumps(self.pending, default=to_builtin))
        wandb.log(row, step=self.step)
        append_to_jsonl(self.log_path, {"step": self.step, **row})
        self.step += 1
        self.pending = {}

    def close(self):
        self.flush()
        wandb.finish()


def _current() -> MetricLogger:
    assert MetricLogger.CURRENT is not None, "call logger.configure first"
    return MetricLogger.CURRENT


def is_configured():
    return MetricLogger.CURRENT is not None


def configure(**kwargs) -> MetricLogger:
    if is_configured():
        shutdown()
    MetricLogger.CURRENT = MetricLogger(**kwargs)
    return MetricLogger.CURRENT


def logkv(key, value):
    _current().record({key: value})


def logkvs(d):
    _current().record(d)


def logestimates(d, prefix: str = ""):
    _current().record_estimates(d, prefix)


def dumpkvs():
    _current().flush()


def shutdown():
    _current().close()
    MetricLogger.CURRENT = None
