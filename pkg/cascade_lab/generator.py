"""Joint law of the weight vectors (W, L) and its exact moment functionals"""

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .errors import DivergedError, InvariantError, SchemaError

PROB_TOL = 1e-12
MEAN_TOL = 1e-9
CONSERVATIVE_TOL = 1e-12


@dataclass(frozen=True)
class Atom:
    """One point of the joint law: W-vector, L-vector and its probability"""
    w: Tuple[float, ...]
    l: Tuple[float, ...]
    p: float


@dataclass(frozen=True)
class GeneratorSpec:
    """Finitely-atomic joint law of (W, L) on b branches"""
    b: int
    atoms: Tuple[Atom, ...]
    label: str = "unnamed"

    @cached_property
    def w_matrix(self) -> np.ndarray:
        return np.array([atom.w for atom in self.atoms], dtype=float)

    @cached_property
    def l_matrix(self) -> np.ndarray:
        return np.array([atom.l for atom in self.atoms], dtype=float)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([atom.p for atom in self.atoms], dtype=float)

    @cached_property
    def cdf(self) -> np.ndarray:
        """Atom CDF used to invert node uniforms; last entry pinned to 1"""
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return cdf

    @cached_property
    def log_abs_w(self) -> np.ndarray:
        """log|w_j| per atom, -inf where w_j == 0"""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.w_matrix))

    @cached_property
    def log_l(self) -> np.ndarray:
        return np.log(self.l_matrix)

    @property
    def nonzero_w(self) -> np.ndarray:
        return self.w_matrix != 0.0

    def to_document(self) -> Dict:
        """Atom-list JSON document (iid syntax is always expanded)"""
        return {
            "b": self.b,
            "label": self.label,
            "atoms": [{"w": list(a.w), "l": list(a.l), "p": a.p} for a in self.atoms],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """Content hash of the canonical JSON"""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of checking (A1), (A2) and (A3) on a spec"""
    a1_holds: bool
    a1_witness: float
    a2_holds: bool
    a3_holds: bool
    conservative: bool
    a3_weak_holds: bool = False
    violations: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def theorem_ready(self) -> bool:
        """True when the graph/range/level-set theorems apply"""
        return self.a1_holds and self.a2_holds and self.a3_holds


# ===== Parsing =====

def _require(doc: Dict, key: str, where: str = "spec"):
    if key not in doc:
        raise SchemaError(f"{where}: missing field '{key}'")
    return doc[key]


def _number_list(value, name: str, length: int) -> Tuple[float, ...]:
    if not isinstance(value, list) or len(value) != length:
        raise SchemaError(f"'{name}' must be a list of {length} numbers")
    out = []
    for x in value:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise SchemaError(f"'{name}' contains a non-numeric entry: {x!r}")
        if not math.isfinite(x):
            raise InvariantError(f"'{name}' contains a non-finite entry: {x!r}")
        out.append(float(x))
    return tuple(out)


def _parse_atoms(doc: Dict, b: int) -> List[Atom]:
    raw_atoms = doc["atoms"]
    if not isinstance(raw_atoms, list) or not raw_atoms:
        raise SchemaError("'atoms' must be a non-empty list")

    atoms = []
    for i, raw in enumerate(raw_atoms):
        if not isinstance(raw, dict):
            raise SchemaError(f"atoms[{i}] must be an object")
        w = _number_list(_require(raw, "w", f"atoms[{i}]"), f"atoms[{i}].w", b)
        l = _number_list(_require(raw, "l", f"atoms[{i}]"), f"atoms[{i}].l", b)
        p = _require(raw, "p", f"atoms[{i}]")
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise SchemaError(f"atoms[{i}].p must be a number")
        atoms.append(Atom(w=w, l=l, p=float(p)))
    return atoms


def _expand_iid(doc: Dict, b: int) -> List[Atom]:
    """Product law of b iid copies of a scalar marginal"""
    marginal = doc["iid_marginal"]
    if not isinstance(marginal, dict):
        raise SchemaError("'iid_marginal' must be an object")
    values = _require(marginal, "values", "iid_marginal")
    probs = _require(marginal, "probs", "iid_marginal")
    if not isinstance(values, list) or not values:
        raise SchemaError("'iid_marginal.values' must be a non-empty list")
    values = _number_list(values, "iid_marginal.values", len(values))
    probs = _number_list(probs, "iid_marginal.probs", len(values))

    l_field = doc.get("l", "uniform")
    if l_field == "uniform":
        l = tuple([1.0 / b] * b)
    else:
        l = _number_list(l_field, "l", b)

    atoms = []
    for combo in itertools.product(range(len(values)), repeat=b):
        p = 1.0
        for k in combo:
            p *= probs[k]
        atoms.append(Atom(w=tuple(values[k] for k in combo), l=l, p=p))
    return atoms


def _check_invariants(atoms: List[Atom]):
    probs = np.array([a.p for a in atoms])
    if np.any(probs <= 0.0):
        raise InvariantError("p: every atom probability must be > 0")
    if abs(probs.sum() - 1.0) > PROB_TOL:
        raise InvariantError(f"p: probabilities sum to {probs.sum():.15g}, expected 1")

    l = np.array([a.l for a in atoms])
    if np.any(l <= 0.0) or np.any(l >= 1.0):
        raise InvariantError("l: every l-entry must lie in (0, 1)")
    mean_l = float(probs @ l.sum(axis=1))
    if abs(mean_l - 1.0) > MEAN_TOL:
        raise InvariantError(f"l: E(sum L_j) = {mean_l:.12g}, expected 1")

    w = np.array([a.w for a in atoms])
    mean_w = float(probs @ w.sum(axis=1))
    if abs(mean_w - 1.0) > MEAN_TOL:
        raise InvariantError(f"w: E(sum W_j) = {mean_w:.12g}, expected 1")


def parse_spec(document: Union[str, Dict]) -> GeneratorSpec:
    """Parse and validate a spec from JSON text or an already-loaded dict"""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError(f"spec is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise SchemaError("spec must be a JSON object")

    b = _require(document, "b")
    if isinstance(b, bool) or not isinstance(b, int) or b < 2:
        raise SchemaError("'b' must be an integer >= 2")
    label = document.get("label", "unnamed")
    if not isinstance(label, str):
        raise SchemaError("'label' must be a string")

    if "atoms" in document:
        atoms = _parse_atoms(document, b)
    elif "iid_marginal" in document:
        atoms = _expand_iid(document, b)
    else:
        raise SchemaError("spec needs either 'atoms' or 'iid_marginal'")

    _check_invariants(atoms)
    return GeneratorSpec(b=b, atoms=tuple(atoms), label=label)


def load_spec(path: Union[str, Path]) -> GeneratorSpec:
    """Read a spec JSON file"""
    text = Path(path).read_text(encoding="utf-8")
    return parse_spec(text)


# ===== Moments =====

def log_moment_terms(spec: GeneratorSpec, q: float, t: float) -> np.ndarray:
    """log of p * 1{w!=0} |w|^q l^-t per (atom, branch); -inf where w == 0"""
    with np.errstate(invalid="ignore"):
        terms = np.log(spec.probs)[:, None] + q * spec.log_abs_w - t * spec.log_l
    return np.where(spec.nonzero_w, terms, -np.inf)


def moment(spec: GeneratorSpec, q: float, t: float) -> float:
    """Phi(q, t) = E sum_j 1{W_j != 0} |W_j|^q L_j^-t"""
    return float(np.exp(logsumexp(log_moment_terms(spec, q, t))))


def phi_U(spec: GeneratorSpec, side: str, p: float) -> float:
    """phi_U(p) = -log_b E sum_j 1{U_j != 0} |U_j|^p"""
    if side == "W":
        m = moment(spec, p, 0.0)
    elif side == "L":
        m = float(spec.probs @ (spec.l_matrix ** p).sum(axis=1))
    else:
        raise ValueError(f"side must be 'W' or 'L', got {side!r}")

    if m <= 0.0 or not math.isfinite(m):
        raise DivergedError(f"phi_{side}({p}): moment is {m}")
    return -math.log(m) / math.log(spec.b)


def _phi_w_finite(spec: GeneratorSpec, q: float) -> bool:
    try:
        return math.isfinite(phi_U(spec, "W", q))
    except DivergedError:
        return False


def check_assumptions(spec: GeneratorSpec) -> AssumptionReport:
    """Check (A1)-(A3); the report lists every violated clause"""
    violations = []
    w_sums = spec.w_matrix.sum(axis=1)
    conservative = bool(np.all(np.abs(w_sums - 1.0) <= CONSERVATIVE_TOL))

    # (A1): witness p maximizes phi_W over (1, 2] (wider when conservative)
    hi = 2.0 if not conservative else 10.0
    res = minimize_scalar(lambda p: -phi_U(spec, "W", p), bounds=(1.0, hi),
                          method="bounded", options={"xatol": 1e-9})
    candidates = [float(res.x), hi]
    witness = max(candidates, key=lambda p: phi_U(spec, "W", p))
    l_entropy = float(spec.probs @ (spec.l_matrix * spec.log_l).sum(axis=1))
    a1 = phi_U(spec, "W", witness) > 0.0 and l_entropy < 0.0
    if phi_U(spec, "W", witness) <= 0.0:
        violations.append(f"(A1) no p in (1, {hi:g}] with phi_W(p) > 0")
    if l_entropy >= 0.0:
        violations.append("(A1) E(sum L_j log L_j) < 0 fails")

    # (A2)
    nonzero_counts = spec.nonzero_w.sum(axis=1)
    a2 = _phi_w_finite(spec, -1.0) and bool(np.all(nonzero_counts >= 2))
    if not _phi_w_finite(spec, -1.0):
        violations.append("(A2) phi_W(-1) is not finite")
    if np.any(nonzero_counts < 2):
        violations.append("(A2) fewer than 2 nonzero W_j in some atom")

    # (A3), strong form
    all_nonzero = bool(np.all(spec.nonzero_w))
    tested = np.linspace(-10.0, 10.0, 41)
    finite_everywhere = all(_phi_w_finite(spec, q) for q in tested)
    a3 = (not conservative) and all_nonzero and finite_everywhere
    if conservative:
        violations.append("(A3) conservative: P(sum W_j = 1) = 1")
    if not all_nonzero:
        violations.append("(A3) |W_j|>0 fails")
    if not finite_everywhere:
        violations.append("(A3) phi_W is not finite on the tested q grid")

    a3_weak = (not conservative) and all_nonzero and _phi_w_finite(spec, -2.0)

    return AssumptionReport(
        a1_holds=bool(a1),
        a1_witness=float(witness),
        a2_holds=bool(a2),
        a3_holds=bool(a3),
        conservative=conservative,
        a3_weak_holds=bool(a3_weak),
        violations=tuple(violations),
    )
