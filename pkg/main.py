"""Command-line interface for the cascade lab"""

import argparse
import atexit
import hashlib
import json
import math
import os
import signal
import sqlite3
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from tqdm import tqdm

from cascade_lab import __version__
from cascade_lab.cascade import DEFAULT_TAIL_DEPTH, build_trace, derive_seed, sample
from cascade_lab.errors import (
    CapacityError,
    CascadeLabError,
    EmptyJError,
    InvariantError,
    SchemaError,
)
from cascade_lab.estimators import box_count, default_window, lq_spectrum
from cascade_lab.generator import GeneratorSpec, check_assumptions, load_spec
from cascade_lab.measures import PAIR_BUDGET, build_mu_q, pushforward, riesz_energy, sample_from_massmap
from cascade_lab.plotting import plot_box_count, plot_lq, plot_spectrum
from cascade_lab.run_store import RunStore
from cascade_lab.spectrum import derivatives, interval_J, spectrum_table, tau, tau_grid
from cascade_lab.verify import CRITERIA, VerifyConfig, results_frame, run_verify

load_dotenv()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSUMPTIONS = 2
EXIT_CAPACITY = 3
EXIT_ACCEPTANCE = 4

SPECTRUM_COLUMNS = ["q", "tau", "tau_prime", "tau_star", "gammaG", "gammaR", "inJ", "subinterval"]


class ConfigError(Exception):
    """Bad flag or flag value"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ===== Flag parsing =====

def parse_grid(text: str) -> np.ndarray:
    """LO:HI:STEP, both ends included"""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"grid must be LO:HI:STEP, got {text!r}")
    if step <= 0 or hi < lo:
        raise ConfigError(f"grid {text!r} needs STEP > 0 and HI >= LO")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


def parse_range(text: str) -> Tuple[int, int]:
    """JMIN:JMAX"""
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"range must be LO:HI, got {text!r}")
    if hi < lo:
        raise ConfigError(f"range {text!r} has HI < LO")
    return lo, hi


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


# ===== Manifests =====

@dataclass
class RunManifest:
    """Everything that determines a run's outputs, plus when it ran"""
    spec_label: str
    spec_hash: str
    command: str
    parameters: Dict
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    def digest(self) -> str:
        """Content hash; the timestamp is excluded"""
        content = asdict(self)
        content.pop("timestamp")
        text = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def out_dir(self, root: Path) -> Path:
        return root / f"{self.spec_label}-{self.digest()[:12]}"

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        document = {**asdict(self), "hash": self.digest()}
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# ===== Application =====

class CascadeLab:
    """Runs one subcommand: builds the manifest, writes outputs, records the run"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.store: Optional[RunStore] = None
        self.run_id: Optional[int] = None
        self._cleanup_done = False

        atexit.register(self._cleanup)
        signal.signal(signal.SIGINT, self._signal_handler)
        signal.signal(signal.SIGTERM, self._signal_handler)

    def _signal_handler(self, signum, frame):
        print("\n\n⚠️ Interrupt received, closing the run ledger...")
        self._finish("interrupted", 130)
        self._cleanup()
        sys.exit(130)

    def _cleanup(self):
        if self._cleanup_done:
            return
        try:
            if self.store:
                self.store.close()
            self._cleanup_done = True
        except Exception as e:
            print(f"⚠️ Warning during cleanup: {e}")

    def _open_store(self) -> Optional[RunStore]:
        if self.store is None:
            try:
                self.store = RunStore(self.args.db)
            except sqlite3.Error as e:
                print(f"⚠️ Warning: run ledger unavailable: {e}")
        return self.store

    def _start(self, manifest: RunManifest, out_dir: Path):
        store = self._open_store()
        if not store:
            return
        try:
            self.run_id = store.start_run(manifest.digest(), manifest.command, manifest.spec_label,
                                          manifest.spec_hash, manifest.parameters, str(out_dir),
                                          manifest.tool_version)
        except sqlite3.Error as e:
            print(f"⚠️ Warning: failed to record run: {e}")

    def _finish(self, status: str, code: int):
        if self.store and self.run_id is not None:
            try:
                self.store.finish_run(self.run_id, status, code)
            except sqlite3.Error as e:
                print(f"⚠️ Warning: failed to update run: {e}")
            self.run_id = None

    def _spec(self) -> GeneratorSpec:
        if not self.args.spec:
            raise ConfigError("--spec is required")
        return load_spec(self.args.spec)

    def _prepare(self, spec: GeneratorSpec, parameters: Dict) -> Path:
        manifest = RunManifest(spec.label, spec.digest(), self.args.command, parameters)
        out_dir = manifest.out_dir(Path(self.args.out))
        manifest.write(out_dir)
        self._start(manifest, out_dir)
        return out_dir

    def _seed_list(self) -> List[int]:
        if self.args.seeds <= 1:
            return [self.args.seed]
        return [derive_seed(self.args.seed, i) for i in range(self.args.seeds)]

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        try:
            code = handler()
        except BaseException:
            self._finish("failed", -1)
            raise
        self._finish("ok" if code == EXIT_OK else "failed", code)
        return code

    # ----- subcommands -----

    def cmd_spectrum(self) -> int:
        spec = self._spec()
        qs = parse_grid(self.args.q or "-5:5:0.1")
        out_dir = self._prepare(spec, {"q": self.args.q or "-5:5:0.1"})

        table = spectrum_table(spec, qs)
        write_csv(table[SPECTRUM_COLUMNS], out_dir / "spectrum.csv")
        plot_spectrum(table, out_dir / "spectrum.svg")

        try:
            J = interval_J(spec)
            print(f"✅ J = ({J.q_lo:.6g}, {J.q_hi:.6g})")
        except EmptyJError as e:
            print(f"⚠️ Warning: {e}")
        print(f"✅ tau(1) = {tau(spec, 1.0):.6f}; {len(qs)} rows written to {out_dir / 'spectrum.csv'}")
        return EXIT_OK

    def cmd_simulate(self) -> int:
        spec = self._spec()
        args = self.args
        out_dir = self._prepare(spec, {"depth": args.depth, "tail": args.tail, "seed": args.seed})

        real = sample(spec, args.seed, args.depth + args.tail)
        trace = build_trace(real, args.depth, args.tail)
        trace.write_csv(out_dir / "trace.csv")
        print(f"✅ Trace of depth {args.depth} written to {out_dir / 'trace.csv'}")
        return EXIT_OK

    def cmd_estimate(self) -> int:
        spec = self._spec()
        args = self.args
        qs = parse_grid(args.q or "-1:2:0.25")
        window = parse_range(args.window) if args.window else default_window(args.depth)
        seeds = self._seed_list()
        out_dir = self._prepare(spec, {
            "depth": args.depth, "tail": args.tail, "seed": args.seed, "seeds": args.seeds,
            "q": args.q or "-1:2:0.25", "window": list(window), "theta_samples": args.theta_samples,
        })

        lq_rows, graph, rng_counts, theta_rows = [], [], [], []
        thetas = np.random.default_rng(args.seed).uniform(-math.pi / 4, math.pi / 4, args.theta_samples)
        for seed in tqdm(seeds, desc="estimate", disable=len(seeds) < 2):
            real = sample(spec, seed, args.depth + args.tail)
            trace = build_trace(real, args.depth, args.tail)
            lq_rows.append(lq_spectrum(trace, qs, window))
            graph.append(box_count(trace, "graph", window=window))
            rng_counts.append(box_count(trace, "range", window=window))
            if args.theta_samples:
                table = build_mu_q(real, 1.0, args.depth, args.tail)
                for k, theta in enumerate(thetas):
                    theta_rows.append(self._theta_counts(seed, k, trace, table, float(theta), window))

        lq = pd.DataFrame({
            "q": qs,
            "tau_hat": np.mean([s.tau_hat for s in lq_rows], axis=0),
            "r2": np.mean([s.r2 for s in lq_rows], axis=0),
        })
        write_csv(lq, out_dir / "lq.csv")
        plot_lq(lq_rows[0], out_dir / "lq.svg", exact=tau_grid(spec, qs))

        predicted = {"graph": 1.0 - tau(spec, 1.0), "range": None}
        for name, results in (("graph", graph), ("range", rng_counts)):
            counts = np.mean([r.counts for r in results], axis=0)
            write_csv(pd.DataFrame({"j": np.arange(counts.size), "N_j": counts}),
                      out_dir / f"boxcount_{name}.csv")
            plot_box_count(results[0], out_dir / f"boxcount_{name}.svg", spec.b, predicted[name])
            slopes = [r.fit.slope for r in results]
            print(f"✅ {name} box dimension: median {np.median(slopes):.4f} over {len(slopes)} seed(s)")

        if theta_rows:
            for target in ("projection", "levelset"):
                frame = pd.concat([rows[target] for rows in theta_rows], ignore_index=True)
                write_csv(frame, out_dir / f"boxcount_{target}.csv")
        print(f"✅ Estimates written to {out_dir}")
        return EXIT_OK

    def _theta_counts(self, seed, k, trace, table, theta, window) -> Dict[str, pd.DataFrame]:
        projected = pushforward(table, trace, "projection", theta=theta)
        y = float(sample_from_massmap(projected, 1, seed=k)[0])
        frames = {}
        for target, kwargs in (("projection", {}), ("levelset", {"y": y})):
            result = box_count(trace, target, theta=theta, window=window, **kwargs)
            frames[target] = pd.DataFrame({
                "seed": seed, "theta": theta, "y": y if target == "levelset" else np.nan,
                "j": np.arange(result.counts.size), "N_j": result.counts,
                "slope": result.fit.slope,
            })
        return frames

    def cmd_measure(self) -> int:
        spec = self._spec()
        args = self.args
        q = args.q_value
        out_dir = self._prepare(spec, {"q": q, "level": args.level, "tail": args.tail, "seed": args.seed})

        real = sample(spec, args.seed, args.level + args.tail)
        table = build_mu_q(real, q, args.level, args.tail)
        write_csv(table.to_frame(), out_dir / "measure.csv")
        print(f"✅ mu_q at level {args.level}: total mass {table.total:.6f}")
        return EXIT_OK

    def cmd_energy(self) -> int:
        spec = self._spec()
        args = self.args
        q = args.q_value
        lo, hi = parse_range(args.levels)
        gammas = args.gamma or [derivatives(spec, q).gammaG]
        out_dir = self._prepare(spec, {
            "q": q, "gamma": gammas, "levels": [lo, hi], "tail": args.tail, "seed": args.seed,
            "mode": args.mode, "pair_budget": args.pair_budget,
        })

        real = sample(spec, args.seed, hi + args.tail)
        rows = []
        for n in tqdm(range(lo, hi + 1), desc="energy"):
            trace = build_trace(real, n, args.tail)
            table = build_mu_q(real, q, n, args.tail)
            for gamma in gammas:
                est = riesz_energy(table, trace, gamma, args.mode, args.pair_budget, seed=args.seed)
                rows.append({"gamma": gamma, "n": n, "value": est.value, "subsampled": est.subsampled})
        write_csv(pd.DataFrame(rows), out_dir / "energy.csv")
        print(f"✅ {len(rows)} energies written to {out_dir / 'energy.csv'}")
        return EXIT_OK

    def cmd_verify(self) -> int:
        spec = self._spec()
        args = self.args
        config = VerifyConfig(
            depth=args.depth,
            tail_depth=args.tail,
            seeds=args.seeds if args.seeds > 1 else VerifyConfig.seeds,
            master_seed=args.seed,
            window=parse_range(args.window) if args.window else None,
        )
        criteria = args.criteria.split(",") if args.criteria else None
        unknown = [c for c in criteria or [] if c not in CRITERIA]
        if unknown:
            raise ConfigError(f"unknown criteria: {', '.join(unknown)}")
        out_dir = self._prepare(spec, {**asdict(config), "criteria": criteria})

        report = check_assumptions(spec)
        if not report.theorem_ready:
            print("⚠️ Warning: assumptions fail, theorem criteria will be refused")
            for v in report.violations:
                print(f"   {v}")

        results = run_verify(spec, config, criteria)
        for r in results:
            status = "✅ PASS" if r.passed else "❌ FAIL"
            print(f"{status}: {r.name} ({r.runtime_seconds:.1f}s) {r.detail}")
            if self.store and self.run_id is not None:
                try:
                    self.store.record_criterion(self.run_id, r.name, r.passed, r.detail, r.runtime_seconds)
                except sqlite3.Error as e:
                    print(f"⚠️ Warning: failed to record {r.name}: {e}")
        write_csv(results_frame(results), out_dir / "verify.csv")

        passed = sum(1 for r in results if r.passed)
        print(f"\nTotal: {passed}/{len(results)} criteria passed")
        if any(r.refused for r in results):
            return EXIT_ASSUMPTIONS
        return EXIT_OK if passed == len(results) else EXIT_ACCEPTANCE

    def cmd_history(self) -> int:
        store = self._open_store()
        if not store:
            return EXIT_CONFIG
        runs = store.recent_runs(self.args.limit, self.args.filter)
        if self.args.json:
            print(json.dumps([store.get_run(r["id"]) for r in runs], indent=2, default=str))
            return EXIT_OK
        if not runs:
            print("No runs recorded yet.")
            return EXIT_OK
        for r in runs:
            print(f"#{r['id']} [{r['started_at']}] {r['command']:<9} {r['spec_label']} "
                  f"{r['manifest_hash'][:12]} {r['status']} (exit {r['exit_code']})")
        return EXIT_OK


# ===== Entry point =====

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", help="generator spec JSON")
    common.add_argument("--out", default=os.getenv("CASCADE_OUT_DIR", "runs"))
    common.add_argument("--db", default=None, help="run ledger (default CASCADE_DB_PATH)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", type=int, default=1)
    common.add_argument("--depth", type=int, default=16)
    common.add_argument("--tail", type=int, default=DEFAULT_TAIL_DEPTH)

    parser = _Parser(description="b-adic independent cascade functions: exact spectra and estimates")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", parents=[common])
    p.add_argument("--q", help="LO:HI:STEP")

    sub.add_parser("simulate", parents=[common])

    p = sub.add_parser("estimate", parents=[common])
    p.add_argument("--q", help="LO:HI:STEP")
    p.add_argument("--window", help="JMIN:JMAX")
    p.add_argument("--theta-samples", type=int, default=0)

    p = sub.add_parser("measure", parents=[common])
    p.add_argument("--q", dest="q_value", type=float, default=1.0)
    p.add_argument("--level", type=int, default=10)

    p = sub.add_parser("energy", parents=[common])
    p.add_argument("--q", dest="q_value", type=float, default=1.0)
    p.add_argument("--gamma", type=float, action="append")
    p.add_argument("--levels", default="6:11", help="LO:HI")
    p.add_argument("--mode", choices=["graph", "range"], default="graph")
    p.add_argument("--pair-budget", type=int, default=PAIR_BUDGET)

    p = sub.add_parser("verify", parents=[common])
    p.add_argument("--window", help="JMIN:JMAX")
    p.add_argument("--criteria", help="comma-separated subset, e.g. A1,A2,A3")

    p = sub.add_parser("history", parents=[common])
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--filter", help="only this command")
    p.add_argument("--json", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return CascadeLab(args).run()
    except (ConfigError, SchemaError, InvariantError, FileNotFoundError, ValueError) as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except CapacityError as e:
        print(f"❌ Capacity exceeded: {e}")
        return EXIT_CAPACITY
    except CascadeLabError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
