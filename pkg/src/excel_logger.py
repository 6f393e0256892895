import datetime
import json
from pathlib import Path
from typing import Any, Dict

import pandas as pd
from filelock import FileLock

# One row per CLI invocation; columns a command does not produce stay empty.
EXCEL_COLUMNS = [
    "timestamp",
    "run_id",
    "command",
    "instance",
    "num_vars",
    "num_labels",
    "diversity",
    "lambda",
    "gamma",
    "k",
    "M",
    "backend",
    "seed",
    "objective",
    "total_epsilon",
    "passed",
    "duration_s",
    "notes",
]


def log_run_to_excel(run_data: Dict[str, Any], reports_dir: str | Path = "reports") -> Path:
    """
    Appends a single run to the daily Excel ledger.

    The write is guarded by a file lock so concurrent invocations do not
    corrupt the workbook.

    Args:
        run_data: Values keyed by EXCEL_COLUMNS. A nested 'parameters' dict is
                  flattened first; unknown keys are dropped.
        reports_dir: Directory holding the ledger files.

    Returns:
        Path of the workbook written.
    """
    reports_dir = Path(reports_dir)
    reports_dir.mkdir(parents=True, exist_ok=True)
    today = datetime.date.today().strftime("%Y-%m-%d")
    excel_path = reports_dir / f"runs_{today}.xlsx"
    lock_path = reports_dir / f"runs_{today}.xlsx.lock"

    lock = FileLock(lock_path, timeout=15)

    with lock:
        try:
            df = pd.read_excel(excel_path)
        except FileNotFoundError:
            df = pd.DataFrame(columns=EXCEL_COLUMNS)

        flat_run_data = run_data.copy()
        if isinstance(flat_run_data.get("parameters"), dict):
            flat_run_data.update(flat_run_data.pop("parameters"))
        flat_run_data.setdefault("timestamp", datetime.datetime.now().isoformat(timespec="seconds"))

        new_row = {}
        for column in EXCEL_COLUMNS:
            value = flat_run_data.get(column)
            # Lists and dicts are stored as JSON text.
            if isinstance(value, (list, dict)):
                value = json.dumps(value)
            new_row[column] = value

        df = pd.concat([df, pd.DataFrame([new_row])], ignore_index=True)
        df.to_excel(excel_path, index=False, engine="openpyxl")
    return excel_path
