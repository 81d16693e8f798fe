import json, os, time
from typing import Any, List, Optional

from utils import sha1_of_text

RUN_LOG = "run_log.jsonl"


def new_run_id(config_json: str, seed: int) -> str:
    """Deterministic: identical resolved config and seed give the same id."""
    return sha1_of_text(f"{config_json}\n{seed}")


def log_path(out_dir: str) -> str:
    return os.path.join(out_dir, RUN_LOG)


def log_step(out_dir: str, run_id: str, step_name: str, inp: Any, out: Any, evidence: Optional[List[str]] = None):
    os.makedirs(out_dir, exist_ok=True)
    row = {
        "run_id": run_id,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "step": step_name,
        "input": inp,
        "output": out,
        "evidence": evidence or [],
    }
    with open(log_path(out_dir), "a", encoding="utf-8") as f:
        f.write(json.dumps(row, default=str, sort_keys=True) + "\n")


def read_steps(out_dir: str, run_id: Optional[str] = None) -> List[dict]:
    path = log_path(out_dir)
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return [r for r in rows if run_id is None or r["run_id"] == run_id]
