"""Tests for the sqlite run ledger"""

import sqlite3
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))
sys.path.insert(0, str(Path(__file__).parent))

from runner import run_tests
from cascade_lab.run_store import RunStore


def test_record_and_read_back():
    with tempfile.TemporaryDirectory() as tmp:
        store = RunStore(str(Path(tmp) / "runs.db"))
        run_id = store.start_run("abc123", "verify", "canonical", "deadbeef",
                                 {"depth": 12}, "runs/canonical-abc123", "0.1.0")
        store.record_criterion(run_id, "A1", True, "ok", 0.1)
        store.record_criterion(run_id, "A5", False, "refused", 0.0)
        store.finish_run(run_id, "failed", 2)

        run = store.get_run(run_id)
        assert run["status"] == "failed" and run["exit_code"] == 2
        assert run["parameters"] == {"depth": 12}
        assert [c["criterion"] for c in run["criteria"]] == ["A1", "A5"]
        assert run["criteria"][0]["passed"] == 1
        assert len(store.runs_for_manifest("abc123")) == 1
        assert store.recent_runs(command="simulate") == []
        store.close()
    print("✅ runs and criteria round-trip through sqlite")


def test_missing_run():
    with tempfile.TemporaryDirectory() as tmp:
        store = RunStore(str(Path(tmp) / "runs.db"))
        try:
            store.get_run(42)
            raise AssertionError("expected ValueError")
        except ValueError:
            pass
        store.close()
    print("✅ unknown run id raises ValueError")


def test_old_ledger_is_migrated():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "runs.db"
        conn = sqlite3.connect(str(path))
        conn.execute("""
            CREATE TABLE runs (
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
        conn.execute("INSERT INTO runs (manifest_hash, command) VALUES ('old', 'simulate')")
        conn.commit()
        conn.close()

        store = RunStore(str(path))
        columns = [row[1] for row in store.conn.execute("PRAGMA table_info(runs)")]
        assert "exit_code" in columns and "tool_version" in columns
        assert store.recent_runs()[0]["manifest_hash"] == "old"
        store.close()
    print("✅ older ledgers gain the new columns in place")


def main():
    tests = [
        ("Round trip", test_record_and_read_back),
        ("Missing run", test_missing_run),
        ("Migration", test_old_ledger_is_migrated),
    ]
    return run_tests(tests)


if __name__ == "__main__":
    sys.exit(main())
