"""sqlite ledger of command runs and verify outcomes"""

import json
import os
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional


def default_db_path() -> str:
    return os.getenv("CASCADE_DB_PATH", str(Path(os.getenv("CASCADE_OUT_DIR", "runs")) / "runs.db"))


class RunStore:
    """Record of every run: manifest hash, parameters, outputs and status"""

    def __init__(self, db_path: Optional[str] = None):
        self.db_path = Path(db_path or default_db_path()).absolute()
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self.conn = sqlite3.connect(str(self.db_path), check_same_thread=False)
        self.conn.execute("PRAGMA foreign_keys = ON")
        self.conn.row_factory = sqlite3.Row
        self._init_tables()

    def _init_tables(self):
        cursor = self.conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                manifest_hash TEXT NOT NULL,
                command TEXT NOT NULL,
                spec_label TEXT,
                spec_hash TEXT,
                parameters TEXT,
                out_dir TEXT,
                status TEXT DEFAULT 'running',
                started_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                finished_at TIMESTAMP
            )
        """)

        # Ledgers written before exit codes and tool versions were tracked
        cursor.execute("PRAGMA table_info(runs)")
        existing_columns = [row[1] for row in cursor.fetchall()]
        if 'exit_code' not in existing_columns:
            self.conn.execute("ALTER TABLE runs ADD COLUMN exit_code INTEGER")
        if 'tool_version' not in existing_columns:
            self.conn.execute("ALTER TABLE runs ADD COLUMN tool_version TEXT")

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS verify_results (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                criterion TEXT NOT NULL,
                passed BOOLEAN NOT NULL,
                detail TEXT,
                runtime_seconds REAL,
                FOREIGN KEY (run_id) REFERENCES runs(id) ON DELETE CASCADE
            )
        """)

        cursor.execute("CREATE INDEX IF NOT EXISTS idx_runs_manifest ON runs(manifest_hash)")
        self.conn.commit()

    def start_run(self, manifest_hash: str, command: str, spec_label: str, spec_hash: str,
                  parameters: Dict, out_dir: str, tool_version: str = "") -> int:
        cursor = self.conn.cursor()
        cursor.execute(
            """INSERT INTO runs (manifest_hash, command, spec_label, spec_hash,
                                 parameters, out_dir, tool_version)
               VALUES (?, ?, ?, ?, ?, ?, ?)""",
            (manifest_hash, command, spec_label, spec_hash,
             json.dumps(parameters, sort_keys=True), out_dir, tool_version)
        )
        self.conn.commit()
        return cursor.lastrowid

    def finish_run(self, run_id: int, status: str, exit_code: int):
        self.conn.execute(
            "UPDATE runs SET status = ?, exit_code = ?, finished_at = ? WHERE id = ?",
            (status, exit_code, datetime.now().isoformat(timespec="seconds"), run_id)
        )
        self.conn.commit()

    def record_criterion(self, run_id: int, criterion: str, passed: bool,
                         detail: str = "", runtime_seconds: float = 0.0) -> int:
        cursor = self.conn.cursor()
        cursor.execute(
            """INSERT INTO verify_results (run_id, criterion, passed, detail, runtime_seconds)
               VALUES (?, ?, ?, ?, ?)""",
            (run_id, criterion, bool(passed), detail, runtime_seconds)
        )
        self.conn.commit()
        return cursor.lastrowid

    def get_run(self, run_id: int) -> Dict:
        row = self.conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
        if not row:
            raise ValueError(f"Run {run_id} not found")
        run = dict(row)
        run['parameters'] = json.loads(run['parameters'] or "{}")
        run['criteria'] = [
            dict(r) for r in self.conn.execute(
                "SELECT criterion, passed, detail, runtime_seconds FROM verify_results "
                "WHERE run_id = ? ORDER BY id", (run_id,))
        ]
        return run

    def recent_runs(self, limit: int = 20, command: Optional[str] = None) -> List[Dict]:
        """Newest first, optionally filtered by command"""
        if command:
            rows = self.conn.execute(
                "SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?", (command, limit))
        else:
            rows = self.conn.execute("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))
        return [dict(r) for r in rows]

    def runs_for_manifest(self, manifest_hash: str) -> List[Dict]:
        rows = self.conn.execute(
            "SELECT * FROM runs WHERE manifest_hash = ? ORDER BY id", (manifest_hash,))
        return [dict(r) for r in rows]

    def close(self):
        """Close database connection"""
        if hasattr(self, 'conn') and self.conn:
            self.conn.close()
            self.conn = None

    def __del__(self):
        self.close()
