"""Configuration documents: schema, loading and scenario assembly.

Documents are YAML (JSON is accepted too, being a subset). Complex entries
are written as ``[re, im]`` pairs; a bare number means a real entry.
Matrices are row-major nested arrays. Unknown keys are rejected everywhere.
"""

import copy
from dataclasses import replace
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import protocol
from .errors import ConfigValidation, KeyforgeError

Entry = Union[float, tuple[float, float]]
Matrix = list[list[Entry]]
Vector = list[Entry]
ErrorRate = Annotated[float, Field(ge=0.0, le=0.5)]
Epsilon = Annotated[float, Field(gt=0.0, lt=1.0)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EfficiencyEntry(_Strict):
    basis: int = Field(ge=0)
    outcome: int = Field(ge=0)
    eta: float = Field(ge=0.0, le=1.0)


class FidelitySpec(_Strict):
    psi: Vector
    eps: float = Field(ge=0.0, le=1.0)


class Imperfections(_Strict):
    noclick: bool = False
    efficiency: list[EfficiencyEntry] = []
    fidelity: Optional[FidelitySpec] = None


class ConstraintSpec(_Strict):
    op: Matrix
    value: float
    kind: Literal["equality", "interval", "lower"] = "equality"
    half_width: float = Field(default=0.0, ge=0.0)


class ScenarioSection(_Strict):
    protocol: Literal["bb84", "custom"]
    qber: Optional[ErrorRate] = None
    qber_x: Optional[ErrorRate] = None
    granularity: Literal["fine", "coarse"] = "fine"
    p_z: float = Field(default=0.5, gt=0.0, lt=1.0)
    dims: Optional[tuple[int, int]] = None
    povms_a: Optional[list[list[Matrix]]] = None
    povms_b: Optional[list[list[Matrix]]] = None
    probs_a: Optional[list[float]] = None
    probs_b: Optional[list[float]] = None
    kept: Optional[list[tuple[int, int]]] = None
    key_map: Optional[list[tuple[int, int, int, int]]] = None
    constraints: list[ConstraintSpec] = []
    reference_state: Optional[Matrix] = None
    key_basis: int = 0
    imperfections: Imperfections = Imperfections()


class MethodSection(_Strict):
    name: Union[
        Literal["frank_wolfe", "gauss_radau", "min_entropy"],
        list[Literal["frank_wolfe", "gauss_radau", "min_entropy"]],
    ] = "frank_wolfe"
    eps_stop: float = Field(default=1e-7, gt=0.0)
    max_iter: int = Field(default=300, ge=1)
    eps_pert: float = Field(default=1e-10, gt=0.0)
    m: int = Field(default=8, ge=2)
    kappa: float = Field(default=1.0, gt=0.0)

    @property
    def names(self):
        return [self.name] if isinstance(self.name, str) else list(self.name)


class FiniteSection(_Strict):
    framework: Literal["eur", "postselection", "eat"]
    n: int = Field(ge=1)
    m_test: Optional[int] = Field(default=None, ge=1)
    eps_pa: Epsilon = 1e-10
    eps_ir: Epsilon = 1e-10
    eps_smooth: Epsilon = 1e-10
    d: int = Field(default=4, ge=1)
    d_a: int = Field(default=2, ge=1)
    q_x: Optional[ErrorRate] = None
    q_z: Optional[ErrorRate] = None
    leak_mode: Literal["plain", "aep"] = "plain"
    f_ec: float = Field(default=1.0, ge=1.0)
    h: Optional[float] = None
    grad_norm: float = Field(default=1.0, ge=0.0)
    p_omega: float = Field(default=1.0, gt=0.0, le=1.0)


class DecoySection(_Strict):
    intensities: list[float]
    gains: list[float]
    error_gains: list[float]
    cutoff: int = 10
    y0_bounds: tuple[float, float] = (0.0, 1.0)
    q_x1_upper: Optional[float] = None
    q_z: Optional[float] = None
    f_ec: float = 1.0


class SweepSection(_Strict):
    parameter: str
    start: float = Field(alias="from")
    stop: float = Field(alias="to")
    steps: int = Field(ge=1)
    kind: Optional[Literal["asymptotic", "finite", "decoy"]] = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @field_validator("parameter")
    @classmethod
    def _dotted(cls, v):
        if not v or any(not part for part in v.split(".")):
            raise ValueError("parameter must be a dotted path such as scenario.qber")
        return v


class ScenarioConfig(_Strict):
    scenario: Optional[ScenarioSection] = None
    method: MethodSection = MethodSection()
    finite: Optional[FiniteSection] = None
    decoy: Optional[DecoySection] = None
    sweep: Optional[SweepSection] = None


SECTIONS = {
    "scenario": ScenarioSection,
    "method": MethodSection,
    "finite": FiniteSection,
    "decoy": DecoySection,
    "sweep": SweepSection,
}


# --- paths and loading ---------------------------------------------------------


def format_path(loc):
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out or "<document>"


def _pydantic_violations(err):
    seen = []
    for e in err.errors():
        # drop union-branch and tuple markers pydantic inserts into the location
        loc = [p for p in e["loc"] if not (isinstance(p, str) and ("[" in p or p in ("float", "tuple")))]
        item = (format_path(loc), e["msg"])
        if item not in seen:
            seen.append(item)
    return seen


def parse_document(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigValidation([("<document>", f"not valid YAML/JSON: {exc}")]) from exc
    if not isinstance(data, dict):
        raise ConfigValidation([("<document>", "top level must be a mapping")])
    return data


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigValidation([("<document>", f"cannot read {p}: {exc.strerror}")]) from exc
    return validate(parse_document(text))


def validate(data):
    """Schema plus semantic validation; raises ConfigValidation with every violation."""
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        violations = _pydantic_violations(exc)
        # keep checking the sections that did parse so every problem is reported
        partial, failed = {}, set()
        for name, model in SECTIONS.items():
            if name in data:
                try:
                    partial[name] = model.model_validate(data[name])
                except ValidationError:
                    failed.add(name)
        cfg = ScenarioConfig.model_construct(**partial)
        violations += [v for v in semantic_violations(cfg, failed) if v not in violations]
        raise ConfigValidation(violations) from None
    violations = semantic_violations(cfg)
    if violations:
        raise ConfigValidation(violations)
    return cfg


# --- semantic checks ----------------------------------------------------------------


def to_matrix(rows):
    return np.array([[complex(*e) if isinstance(e, tuple) else complex(e) for e in row] for row in rows])


def to_vector(entries):
    return np.array([complex(*e) if isinstance(e, tuple) else complex(e) for e in entries])


def _check_matrix(M, path, out, hermitian=True):
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        out.append((path, f"matrix must be square, got shape {M.shape}"))
        return False
    if hermitian and np.max(np.abs(M - M.conj().T)) > 1e-12 * (1 + np.max(np.abs(M))):
        out.append((path, "matrix is not Hermitian"))
        return False
    return True


def _check_povms(povms, name, dims, out):
    for i, povm in enumerate(povms):
        base = f"scenario.{name}[{i}]"
        if not povm:
            out.append((base, "POVM needs at least one element"))
            continue
        mats = []
        for j, rows in enumerate(povm):
            try:
                M = to_matrix(rows)
            except (TypeError, ValueError):
                out.append((f"{base}[{j}]", "element must be a rectangular array of numbers or [re, im] pairs"))
                continue
            if not _check_matrix(M, f"{base}[{j}]", out):
                continue
            if dims is not None and M.shape[0] != dims:
                out.append((f"{base}[{j}]", f"element has dimension {M.shape[0]}, expected {dims}"))
                continue
            if np.linalg.eigvalsh(M)[0] < -1e-10:
                out.append((f"{base}[{j}]", "element is not positive semidefinite"))
                continue
            mats.append(M)
        if len(mats) == len(povm):
            if np.max(np.abs(sum(mats) - np.eye(mats[0].shape[0]))) > 1e-9:
                out.append((base, "POVM elements do not sum to the identity"))


def semantic_violations(cfg, failed=frozenset()):
    """Checks pydantic cannot express. Sections listed in ``failed`` did not
    parse; checks that depend on them are skipped."""
    out = []
    sc = cfg.scenario
    if sc is not None:
        if sc.protocol == "bb84":
            if sc.qber is None:
                out.append(("scenario.qber", "required for the bb84 protocol"))
            for k, e in enumerate(sc.imperfections.efficiency):
                if e.basis > 1 or e.outcome > 1:
                    out.append((f"scenario.imperfections.efficiency[{k}]", "bb84 has bases and outcomes 0 and 1"))
        else:
            for key in ("dims", "povms_a", "povms_b", "kept", "key_map"):
                if getattr(sc, key) is None:
                    out.append((f"scenario.{key}", "required for a custom protocol"))
            da, db = sc.dims if sc.dims is not None else (None, None)
            if sc.povms_a is not None:
                _check_povms(sc.povms_a, "povms_a", da, out)
            if sc.povms_b is not None:
                _check_povms(sc.povms_b, "povms_b", db, out)
            if sc.dims is not None:
                d = da * (db + 1 if sc.imperfections.noclick else db)
                for k, c in enumerate(sc.constraints):
                    try:
                        M = to_matrix(c.op)
                    except (TypeError, ValueError):
                        out.append((f"scenario.constraints[{k}].op", "operator must be a rectangular array"))
                        continue
                    if _check_matrix(M, f"scenario.constraints[{k}].op", out) and M.shape[0] != d:
                        out.append((f"scenario.constraints[{k}].op", f"operator dimension {M.shape[0]} != {d}"))
                if sc.reference_state is not None:
                    try:
                        R = to_matrix(sc.reference_state)
                        if _check_matrix(R, "scenario.reference_state", out) and R.shape[0] != d:
                            out.append(("scenario.reference_state", f"state dimension {R.shape[0]} != {d}"))
                    except (TypeError, ValueError):
                        out.append(("scenario.reference_state", "state must be a rectangular array"))
            if sc.imperfections.efficiency:
                out.append(("scenario.imperfections.efficiency", "efficiency maps are supported for bb84 only"))
        fid = sc.imperfections.fidelity
        if fid is not None:
            psi = to_vector(fid.psi)
            if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
                out.append(("scenario.imperfections.fidelity.psi", "target state must be normalized"))
    if cfg.finite is not None:
        f = cfg.finite
        if f.framework == "eur":
            if f.m_test is None:
                out.append(("finite.m_test", "required for the eur framework"))
            elif f.m_test >= f.n:
                out.append(("finite.m_test", "must be smaller than n"))
        bb84 = sc is not None and sc.protocol == "bb84"
        known = "scenario" not in failed
        if known and f.framework == "eur" and not bb84 and (f.q_x is None or f.q_z is None):
            out.append(("finite", "the eur framework needs a bb84 scenario or both q_x and q_z"))
        needs_scenario = f.framework != "eur" and not (f.framework == "eat" and f.h is not None)
        if known and needs_scenario and sc is None:
            out.append(("scenario", f"the {f.framework} framework needs a scenario"))
    if cfg.decoy is not None:
        d = cfg.decoy
        k = len(d.intensities)
        if k < 2:
            out.append(("decoy.intensities", "at least two intensities are required"))
        for name in ("gains", "error_gains"):
            if len(getattr(d, name)) != k:
                out.append((f"decoy.{name}", f"expected {k} entries, one per intensity"))
        for i, mu in enumerate(d.intensities):
            if mu <= 0:
                out.append((f"decoy.intensities[{i}]", "intensity must be positive"))
        for i, (g, e) in enumerate(zip(d.gains, d.error_gains)):
            if not 0 <= g <= 1:
                out.append((f"decoy.gains[{i}]", "gain must lie in [0, 1]"))
            if not 0 <= e <= g:
                out.append((f"decoy.error_gains[{i}]", "error gain must lie in [0, gain]"))
    if cfg.sweep is not None:
        if not _path_exists(cfg, cfg.sweep.parameter):
            out.append(("sweep.parameter", f"{cfg.sweep.parameter} does not name a numeric field"))
    return out


def _path_exists(cfg, path):
    node = cfg
    for part in path.split("."):
        if isinstance(node, BaseModel):
            if part not in type(node).model_fields:
                return False
            node = getattr(node, part)
        else:
            return False
    return node is None or isinstance(node, (int, float))


def with_parameter(data, path, value):
    """Copy of a raw document with the dotted ``path`` set to ``value``."""
    doc = copy.deepcopy(data)
    node = doc
    parts = path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return doc


# --- building library objects ----------------------------------------------------------


def build_scenario(section):
    """Scenario from a validated ``scenario`` section."""
    imp = section.imperfections
    if section.protocol == "bb84":
        eta = {(e.basis, e.outcome): e.eta for e in imp.efficiency} or None
        sc = protocol.bb84_scenario(
            section.qber, section.qber_x, section.granularity, section.p_z, eta_b=eta, noclick=imp.noclick
        )
        if imp.fidelity is not None:
            sc = _with_fidelity(sc, imp.fidelity)
        return sc
    povms_a = [protocol.Povm(tuple(to_matrix(e) for e in p), i) for i, p in enumerate(section.povms_a)]
    povms_b = [protocol.Povm(tuple(to_matrix(e) for e in p), i) for i, p in enumerate(section.povms_b)]
    discard = ()
    if imp.noclick:
        # Bob's space gains a vacuum level; the no-click outcome is announced and dropped
        povms_b = [protocol.extend_noclick(p) for p in povms_b]
        discard = [(y, len(p) - 1) for y, p in enumerate(povms_b)]
    cons = [protocol.Constraint(to_matrix(c.op), c.value, c.kind, c.half_width) for c in section.constraints]
    if imp.fidelity is not None:
        cons.append(protocol.fidelity_constraint(to_vector(imp.fidelity.psi), imp.fidelity.eps))
    ref = None if section.reference_state is None else to_matrix(section.reference_state)
    return protocol.make_scenario(
        povms_a,
        povms_b,
        section.kept,
        {(x, a, y): r for x, a, y, r in section.key_map},
        cons,
        probs_a=section.probs_a,
        probs_b=section.probs_b,
        reference_state=ref,
        key_basis=section.key_basis,
        check=False,
        discard_b=discard,
    )


def _with_fidelity(sc, fid):
    c = protocol.fidelity_constraint(to_vector(fid.psi), fid.eps)
    if c.op.shape != (sc.dim, sc.dim):
        raise KeyforgeError(f"fidelity target has dimension {c.op.shape[0]}, scenario has {sc.dim}")
    return replace(sc, constraints=sc.constraints + (c,))
