"""Command-line front end: configuration, verification suites and JSON reports.

Exit codes: 0 when every check passes, 1 on a verification failure, 2 on a
configuration or enumeration-cap problem.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .fieldalg import CouplingConstants, FieldElement, FieldSpace, NormParams, describe_key
from .functionals import (
    GasCircle,
    circle_product,
    PolymerFunctional,
    interaction_block,
    k1_tilde,
    random_K,
)
from .gaussian import Covariance, engine, expect_theta, make_toy_decomposition
from .lattice import Torus
from .localisation import loc_data
from .polymers import (
    EnumerationCapError,
    Polymer,
    WeightExponentParams,
    coalescence_scale,
    eta_constant,
    paving,
    verify_combination_lemmas,
    verify_eta_lemma,
    verify_subadditivity,
)
from .rgmap import (
    RGStep,
    StepConfig,
    SyntheticW,
    check_zd_property,
    patch_embedding,
    random_couplings,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _frac(x) -> Fraction:
    try:
        return Fraction(str(x)) if not isinstance(x, Fraction) else x
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {x!r}") from exc


def default_ladder(d: int) -> list[Fraction]:
    """a^(0..6) spaced evenly inside (a^(2), eta a^(2)) in the required order."""
    eta = eta_constant(d)
    a2 = Fraction(3, 5) / 2**d
    gap = (eta - 1) * a2 / 8
    ranks = {2: 0, 1: 1, 0: 2, 6: 3, 5: 4, 4: 5, 3: 6}
    return [a2 + ranks[i] * gap for i in range(7)]


def check_ladder(ladder, d: int) -> None:
    """0 < a2 < a1 < a0 < a6 < a5 < a4 < a3 < eta a2 <= 2^-d."""
    if len(ladder) != 7:
        raise ConfigError("the a-ladder needs seven entries a^(0) .. a^(6)")
    a = [_frac(x) for x in ladder]
    chain = [a[2], a[1], a[0], a[6], a[5], a[4], a[3]]
    if chain[0] <= 0:
        raise ConfigError("a^(2) must be positive")
    for lo, hi in zip(chain, chain[1:]):
        if not lo < hi:
            raise ConfigError(f"a-ladder out of order: {lo} is not below {hi}")
    eta = eta_constant(d)
    if not a[3] < eta * a[2]:
        raise ConfigError(f"a^(3) = {a[3]} must lie below eta a^(2) = {eta * a[2]}")
    if eta * a[2] > Fraction(1, 2**d):
        raise ConfigError("eta a^(2) must not exceed 2^-d")


@dataclass
class RunConfig:
    d: int = 1
    L: int = 3
    N: int = 2
    a: list | None = field(default_factory=lambda: [0])
    b: list | None = field(default_factory=lambda: [4])
    truncation: int = 4
    ell0: float = 1.0
    k0: float = 1.0
    gtilde: list = field(default_factory=lambda: [1.0])
    a_ladder: list | None = None
    covariance: str = "toy"
    covariance_file: str | None = None
    m2: str = "0"
    W: str = "none"
    W_strength: str = "1/3"
    max_blocks: int = 12
    enumeration_cap: int = 1 << 16
    K_support: int = 3
    seed: int = 0
    samples: int = 3
    steps: int = 1
    coupling_scale: str = "1/2"
    V0: dict | None = None
    numeric: str = "exact"
    tolerance: float = 1e-9
    output: str | None = None

    def validate(self) -> None:
        if self.d < 1 or self.L < 3 or self.N < 1:
            raise ConfigError("need d >= 1, L >= 3, N >= 1")
        if self.truncation < 0:
            raise ConfigError("truncation must be non-negative")
        if self.numeric not in ("exact", "float"):
            raise ConfigError("numeric mode is 'exact' or 'float'")
        if self.W not in ("none", "synthetic"):
            raise ConfigError("W is 'none' or 'synthetic'")
        if self.covariance not in ("toy", "file"):
            raise ConfigError("covariance source is 'toy' or 'file'")
        if self.covariance == "file" and not self.covariance_file:
            raise ConfigError("covariance 'file' needs covariance_file")
        for name in ("a", "b"):
            pt = getattr(self, name)
            if pt is not None and len(pt) != self.d:
                raise ConfigError(f"observable point {name} needs {self.d} coordinates")
        check_ladder(self.ladder(), self.d)
        if any(g <= 0 for g in self.gtilde):
            raise ConfigError("gtilde entries must be positive")

    def ladder(self) -> list[Fraction]:
        return [_frac(x) for x in self.a_ladder] if self.a_ladder else default_ladder(self.d)

    def torus(self) -> Torus:
        a = tuple(self.a) if self.a is not None else None
        b = tuple(self.b) if self.b is not None else None
        return Torus(self.d, self.L, self.N, a=a, b=b)

    def space(self, torus: Torus) -> FieldSpace:
        return FieldSpace(torus.volume, self.truncation, "exact" if self.numeric == "exact" else "complex", torus)

    def W_fn(self):
        return SyntheticW(_frac(self.W_strength)) if self.W == "synthetic" else None

    def norm_params(self, j: int, torus: Torus) -> NormParams:
        g = self.gtilde[min(j, len(self.gtilde) - 1)]
        j_ab = coalescence_scale(torus) if torus.a is not None and torus.b is not None else 0
        return NormParams(j, torus.L, torus.d, self.ell0, self.k0, g, j_ab)

    def decomposition(self, torus: Torus):
        if self.covariance == "toy":
            return make_toy_decomposition(torus, _frac(self.m2))
        doc = json.loads(Path(self.covariance_file).read_text(encoding="utf-8"))
        slices = [Covariance.from_json(torus, s) for s in doc["slices"]]
        if len(slices) != torus.N:
            raise ConfigError("covariance file must hold one slice per scale")
        from .gaussian import CovarianceDecomposition

        return CovarianceDecomposition(torus, slices, _frac(doc.get("m2", 0)))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["a_ladder"] = [str(x) for x in self.ladder()]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            doc[k] = json.loads(v)
        except json.JSONDecodeError:
            doc[k] = v
    cfg = RunConfig.from_json(doc)
    cfg.validate()
    return cfg


def _element_summary(F: FieldElement, n: int = 6) -> list:
    return [[describe_key(F.space, k), str(c)] for k, c in F.items_sorted()[:n]]


def _emit(report: dict, cfg: RunConfig | None, out=None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    path = out or (cfg.output if cfg else None)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    print(text)


# commands


def cmd_geometry_verify(cfg: RunConfig) -> tuple[int, dict]:
    T = cfg.torus()
    report = {"command": "geometry-verify", "torus": T.to_json(), "checks": {}}
    ok = True
    eta_needs = 2**T.d + 1
    if T.L < eta_needs:
        report["checks"]["eta-lemma"] = {"status": "hypothesis unmet", "detail": f"needs L >= {eta_needs}"}
    else:
        r = verify_eta_lemma(T, 0, max_size=cfg.max_blocks)
        report["checks"]["eta-lemma"] = r.to_json()
        ok &= r.passed
    a0 = cfg.ladder()[0]
    r = verify_subadditivity(WeightExponentParams(a0), T, 0, max_blocks=cfg.max_blocks)
    report["checks"]["subadditivity"] = r.to_json()
    ok &= r.passed
    if 3 ** paving(T, 0).n <= cfg.enumeration_cap * 64:
        for name, rep in verify_combination_lemmas(T, 0, a=a0).items():
            report["checks"][name] = rep.to_json()
            ok &= rep.passed
    else:
        for name in ("union-bound", "coalescing-bound", "reblocking-bound"):
            report["checks"][name] = {"status": "skipped", "detail": "pair enumeration above the cap"}
    report["passed"] = bool(ok)
    return (EXIT_OK if ok else EXIT_FAIL), report


def _first_difference(lhs: FieldElement, rhs: FieldElement) -> list:
    diff = lhs - rhs
    if diff.is_zero():
        return []
    g = diff.min_grade()
    return _element_summary(diff.filter(lambda k: diff.space.grade_of(k) == g))


def cmd_identity_audit(cfg: RunConfig) -> tuple[int, dict]:
    T = cfg.torus()
    if T.N < 1:
        raise ConfigError("identity audit needs at least one scale")
    sp = cfg.space(T)
    dec = cfg.decomposition(T)
    rng = random.Random(cfg.seed)
    scale = _frac(cfg.coupling_scale)
    samples = []
    ok = True
    for s in range(cfg.samples):
        V = random_couplings(rng, scale)
        K = random_K(T, 0, sp, rng, max_size=cfg.K_support)
        step = RGStep(V, K, dec.at(1), StepConfig(W=cfg.W_fn()))
        cv = step.circle_values()
        pairs = {
            "map1": ("IK", "IK1"), "map2": ("IK1", "IK2"), "map3": ("E_IK2", "IK3"),
            "map4": ("IK3", "IK4"), "map5": ("IK4", "IK5"), "map6": ("IK5", "IK6"),
            "end_to_end": ("E_IK", "IK6"),
        }
        entry = {"sample": s, "V": V.to_json(), "identities": {}}
        for name, (x, y) in pairs.items():
            if cfg.numeric == "exact":
                good = cv[x] == cv[y]
            else:
                good = cv[x].close_to(cv[y], cfg.tolerance)
            entry["identities"][name] = good
            if not good:
                ok = False
                entry.setdefault("counterexample", {})[name] = _first_difference(cv[x], cv[y])
        entry["J1_zero_sum"] = not step.J1.zero_sum_violations()
        entry["h_lead_zero_sum"] = not step.h_lead.zero_sum_violations()
        ok &= entry["J1_zero_sum"] and entry["h_lead_zero_sum"]
        entry["dq"] = str(step.dq)
        entry["V_plus"] = step.V_plus.to_json()
        entry["R_plus"] = step.R_plus.to_json()
        entry.update(step.t0_report(cfg.norm_params(1, T)))
        samples.append(entry)
    return (EXIT_OK if ok else EXIT_FAIL), {"command": "identity-audit", "passed": bool(ok), "samples": samples}


def first_order_nu(V: CouplingConstants, C: Covariance, T: Torus, sp: FieldSpace):
    """nu read off Loc E theta V(x) at one site, and nu + 2 g C(0, 0)."""
    x = 0
    from .fieldalg import V_of

    F = engine(C, sp).theta(V_of(V.bulk_only(), [x], T, sp))
    got = loc_data(F, Polymer(T, 0, 1 << paving(T, 0).site_block(T.coords(x)))).couplings.nu
    return got, sp.coerce(V.nu) + 2 * sp.coerce(V.g) * sp.coerce(C.value(x, x))


def cmd_flow(cfg: RunConfig, steps: int | None = None) -> tuple[int, dict]:
    T = cfg.torus()
    steps = cfg.steps if steps is None else steps
    if T.N < steps + 1:
        raise ConfigError(f"{steps} steps need N >= {steps + 1}")
    sp = cfg.space(T)
    dec = cfg.decomposition(T)
    V = CouplingConstants.from_json(cfg.V0) if cfg.V0 else CouplingConstants()
    K = PolymerFunctional.zero(T, 0, sp)
    traj = []
    ok = True
    for j in range(steps):
        C = dec.at(j + 1)
        step = RGStep(V, K, C, StepConfig(W=cfg.W_fn(), check_identities=False))
        got, expected = first_order_nu(V, C, T, sp)
        row = {
            "scale": j,
            "V": V.to_json(),
            "V_plus": step.V_plus.to_json(),
            "dq": str(step.dq),
            "R_plus": step.R_plus.to_json(),
            "nu_first_order": {"loc": str(got), "nu_plus_2gC00": str(expected), "equal": got == expected},
        }
        row.update(step.t0_report(cfg.norm_params(j + 1, T)))
        ok &= bool(got == expected)
        traj.append(row)
        V, K = step.V_plus, step.K_plus
    return (EXIT_OK if ok else EXIT_FAIL), {"command": "flow", "passed": bool(ok), "trajectory": traj}


def cmd_k1_demo(cfg: RunConfig) -> tuple[int, dict]:
    """E_1 (I_0(V0) o 1_empty)(Lambda) against (I_1(V1) o K1~)(Lambda) for random V0, V1."""
    T = cfg.torus()
    sp = cfg.space(T)
    dec = cfg.decomposition(T)
    rng = random.Random(cfg.seed)
    scale = _frac(cfg.coupling_scale)
    out = []
    ok = True
    for s in range(cfg.samples):
        V0 = random_couplings(rng, scale, y=False)
        V1 = random_couplings(rng, scale, y=False)
        K1 = k1_tilde(V0, V1, dec, T, sp)
        I0 = interaction_block(V0, T, 0, sp)
        I1 = interaction_block(V1, T, 0, sp).coarsen()
        lhs = expect_theta(dec.at(1), I0.power(paving(T, 0).full))
        rhs = circle_product(I1, K1, paving(T, 1).full)
        good = lhs == rhs if cfg.numeric == "exact" else lhs.close_to(rhs, cfg.tolerance)
        ok &= good
        out.append({"sample": s, "V0": V0.to_json(), "V1": V1.to_json(), "equal": good, "terms": len(lhs)})
    return (EXIT_OK if ok else EXIT_FAIL), {"command": "k1-demo", "passed": bool(ok), "samples": out}


def cmd_zd_check(cfg: RunConfig) -> tuple[int, dict]:
    """Cross-volume consistency from side L^N to L^(N+1), plus restriction trials."""
    Ts = cfg.torus()
    sps = cfg.space(Ts)
    Cs = cfg.decomposition(Ts).at(1)
    ups = paving(Ts, 1)
    rng = random.Random(cfg.seed)
    scale = _frac(cfg.coupling_scale)
    V = random_couplings(rng, scale)
    results = []
    ok = True
    cfg_step = StepConfig(W=cfg.W_fn(), check_identities=False, readback_all_blocks=False)
    for fam in range(cfg.samples):
        seed = rng.randrange(1 << 30)
        Ks = random_K(Ts, 0, sps, random.Random(seed), max_size=cfg.K_support)
        for U in range(ups.n):
            try:
                Tb, iota = patch_embedding(Ts, Ts.N + 1, 1 << U, 1)
                spb = FieldSpace(Tb.volume, cfg.truncation, sps.mode, Tb)
                Kb = random_K(Tb, 0, spb, random.Random(seed), max_size=cfg.K_support)
                Cb = cfg.decomposition(Tb).at(1)
                good = check_zd_property(V, Ks, Kb, Cs, Cb, iota, 1 << U, cfg_step)
                status = "pass" if good else "fail"
            except ValueError as exc:
                good, status = False, f"infeasible: {exc}"
            ok &= good
            results.append({"family": fam, "block": U, "status": status})
    return (EXIT_OK if ok else EXIT_FAIL), {"command": "zd-check", "passed": bool(ok), "results": results}


# serialisation


SCHEMAS = {
    "couplings": {"g", "nu", "z", "y", "lam_a", "lam_b", "q_a", "q_b"},
    "functional": {"scale", "torus", "factorising", "support_size", "values"},
    "torus": {"d", "L", "N"},
    "config": set(RunConfig.__dataclass_fields__),
}


def bundle(cfg: RunConfig) -> dict:
    T = cfg.torus()
    sp = cfg.space(T)
    rng = random.Random(cfg.seed)
    K = random_K(T, 0, sp, rng, max_size=min(cfg.K_support, 2)).materialise(2)
    V = random_couplings(rng, _frac(cfg.coupling_scale))
    return {
        "config": {"kind": "config", "data": cfg.to_json()},
        "torus": {"kind": "torus", "data": T.to_json()},
        "couplings": {"kind": "couplings", "data": V.to_json()},
        "functional": {"kind": "functional", "data": K.to_json()},
    }


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def round_trip(doc: dict, truncation: int = 4, numeric: str = "exact") -> dict:
    kind, data = doc["kind"], doc["data"]
    if kind == "couplings":
        return {"kind": kind, "data": CouplingConstants.from_json(data).to_json()}
    if kind == "torus":
        return {"kind": kind, "data": Torus.from_json(data).to_json()}
    if kind == "config":
        return {"kind": kind, "data": RunConfig.from_json(data).to_json()}
    if kind == "functional":
        T = Torus.from_json(data["torus"])
        sp = FieldSpace(T.volume, truncation, "exact" if numeric == "exact" else "complex", T)
        return {"kind": kind, "data": PolymerFunctional.from_json(data, sp).to_json()}
    raise ConfigError(f"unknown document kind {kind!r}")


def validate_document(doc, where: str = "$") -> list[str]:
    """Problems found in a document (an empty list when it is valid).

    Empty input, an empty object and an empty list are valid.
    """
    if doc in (None, {}, []):
        return []
    if isinstance(doc, list):
        out = []
        for i, d in enumerate(doc):
            out.extend(validate_document(d, f"{where}[{i}]"))
        return out
    if not isinstance(doc, dict):
        return [f"{where}: expected an object"]
    if "kind" not in doc and all(isinstance(v, dict) and "kind" in v for v in doc.values()):
        out = []
        for k, v in doc.items():
            out.extend(validate_document(v, f"{where}.{k}"))
        return out
    kind = doc.get("kind")
    if kind not in SCHEMAS:
        return [f"{where}.kind: unknown kind {kind!r}"]
    data = doc.get("data")
    if not isinstance(data, dict):
        return [f"{where}.data: expected an object"]
    missing = SCHEMAS[kind] - set(data) if kind != "config" else set()
    if missing:
        return [f"{where}.data: missing {sorted(missing)}"]
    try:
        round_trip(doc)
    except Exception as exc:  # any parse failure is reported with its location
        return [f"{where}.data: {type(exc).__name__}: {exc}"]
    return []


def cmd_serialize(cfg: RunConfig) -> tuple[int, dict]:
    docs = bundle(cfg)
    results = {}
    ok = True
    for name, doc in docs.items():
        first = _dump(doc)
        again = _dump(round_trip(json.loads(first), cfg.truncation, cfg.numeric))
        results[name] = first == again
        ok &= results[name]
    if cfg.output:
        Path(cfg.output).write_text(json.dumps(docs, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return (EXIT_OK if ok else EXIT_FAIL), {"command": "serialize", "passed": bool(ok), "round_trip": results}


def cmd_validate(path: str) -> tuple[int, dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return EXIT_CONFIG, {"command": "validate", "passed": False, "errors": [str(exc)]}
    if not text.strip():
        return EXIT_OK, {"command": "validate", "passed": True, "errors": []}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return EXIT_CONFIG, {"command": "validate", "passed": False,
                             "errors": [f"line {exc.lineno} column {exc.colno}: {exc.msg}"]}
    errors = validate_document(doc)
    return (EXIT_OK if not errors else EXIT_CONFIG), {"command": "validate", "passed": not errors, "errors": errors}


# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgstep", description="Exact checks of a renormalisation-group step.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("geometry-verify", "identity-audit", "flow", "k1-demo", "zd-check", "serialize"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        s.add_argument("--output", help="write the report here as well")
        if name == "flow":
            s.add_argument("--steps", type=int)
    v = sub.add_parser("validate")
    v.add_argument("file")
    return p


COMMANDS = {
    "geometry-verify": cmd_geometry_verify,
    "identity-audit": cmd_identity_audit,
    "k1-demo": cmd_k1_demo,
    "zd-check": cmd_zd_check,
    "serialize": cmd_serialize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("RGSTEP_THREADS", "1")
    try:
        if args.command == "validate":
            code, report = cmd_validate(args.file)
            _emit(report, None)
            return code
        cfg = load_config(args.config, args.set)
        if args.output:
            cfg.output = args.output
        if args.command == "flow":
            code, report = cmd_flow(cfg, args.steps)
        else:
            code, report = COMMANDS[args.command](cfg)
    except (ConfigError, EnumerationCapError) as exc:
        _emit({"command": args.command, "passed": False, "error": str(exc)}, None)
        return EXIT_CONFIG
    report["config"] = cfg.to_json()
    report["threads"] = threads
    # serialize writes its document bundle to --output, so its report only goes to stdout
    _emit(report, None if args.command == "serialize" else cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
