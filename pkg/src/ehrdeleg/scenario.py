"""Declarative scenarios: parse, validate, execute, export and replay.

A scenario is a YAML mapping::

    name: happy_path_3_2
    seed: 7
    profile: production          # or toy
    parties: {notaries: 2, drs: 2}
    threshold: {n: 3, t: 2}
    mode: xor                    # or cascade
    expiry_ticks: 100
    link_ttl_ticks: 3600
    availability: [do_unavailable]
    steps:
      - store
      - delegate
      - access: {dr: dr0, notaries: [notary0], expect: granted}
      - audit: {expect: pass}

Every step may carry an ``expect``; the run exits 0 only if all of them hold.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .actors import (
    AVAILABILITY,
    RELEASE_KINDS,
    ScriptedAvailability,
    World,
    build_world,
    flow1_store_ehr,
)
from .adversary import SAMPLE_EHR, TAMPER_SCENARIOS, collusion_trial, tamper_scenarios
from .audit import audit as audit_world
from .audit import audit_from_observations, dump_observations
from .crypto import get_profile, sha256
from .ehr_store import DEFAULT_LINK_TTL
from .errors import (
    AccessDenied,
    ConfigurationError,
    FormatError,
    ModeError,
    ProtocolError,
)
from .ledger import Ledger, LedgerRecord, verify_records
from .threshold import MODES, ThresholdParams, combine_cascade, derive_cipher_key, generate_key_shares

STEP_KINDS = (
    "store", "delegate", "access", "tick", "revoke", "tamper",
    "collude", "scan", "cross_mode", "audit",
)
OUTPUT_FILES = (
    "config.yaml", "transcript.jsonl", "ledger.jsonl", "store.json",
    "wallets.json", "observations.json", "audit.json", "result.json",
)


class ScenarioError(ConfigurationError):
    """The scenario file does not parse or does not validate."""


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class Step:
    kind: str
    args: dict[str, Any]

    def describe(self, index: int) -> str:
        detail = ", ".join(f"{k}={v}" for k, v in self.args.items() if k != "expect")
        return f"step {index} ({self.kind}{': ' + detail if detail else ''})"


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    profile: str
    notaries: int
    drs: int
    n: int
    t: int
    mode: str
    expiry_ticks: int
    link_ttl_ticks: int
    availability: list[str]
    availability_default: str
    dc_checks_notary: bool
    ehr: bytes
    steps: list[Step]
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def params(self) -> ThresholdParams:
        return ThresholdParams(self.n, self.t)

    def actor_names(self) -> set[str]:
        return {"do", "hsp", "dc",
                *(f"notary{i}" for i in range(self.notaries)),
                *(f"dr{i}" for i in range(self.drs))}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _int(value, name, lo=0, hi=2**64 - 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not lo <= value <= hi:
        raise ScenarioError(f"{name} must be an integer in [{lo}, {hi}], got {value!r}")
    return value


def _names(value, name) -> list[str]:
    if isinstance(value, str):
        return [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ScenarioError(f"{name} must be an actor name or list of names")
    return value


STEP_ARGS = {
    "store": set(),
    "delegate": {"drs", "notaries", "expiry_ticks", "mode"},
    "access": {"dr", "notaries", "expect", "reason"},
    "tick": {"ticks"},
    "revoke": {"dr"},
    "tamper": {"scenario", "seed"},
    "collude": {"parties", "trials", "expect"},
    "scan": {"expect"},
    "cross_mode": set(),
    "audit": {"phase", "expect"},
}


def _parse_step(entry, index: int) -> Step:
    if isinstance(entry, str):
        kind, args = entry, {}
    elif isinstance(entry, dict) and len(entry) == 1:
        (kind, args), = entry.items()
        if args is None:
            args = {}
        elif kind == "tick" and isinstance(args, int):
            args = {"ticks": args}
        elif not isinstance(args, dict):
            raise ScenarioError(f"step {index}: arguments must be a mapping")
    else:
        raise ScenarioError(f"step {index}: expected a step name or a one-key mapping")
    if kind not in STEP_KINDS:
        raise ScenarioError(f"step {index}: unknown step {kind!r}")
    unknown = set(args) - STEP_ARGS[kind]
    if unknown:
        raise ScenarioError(f"step {index}: unknown {kind} arguments {sorted(unknown)}")
    return Step(kind, dict(args))


def parse_config(data: Any, seed: int | None = None, profile: str | None = None) -> ScenarioConfig:
    """Validate a decoded scenario mapping; ``seed``/``profile`` override the file."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    raw = dict(data)
    if seed is not None:
        raw["seed"] = seed
    if profile is not None:
        raw["profile"] = profile
    known = {"name", "seed", "profile", "parties", "threshold", "mode", "expiry_ticks",
             "link_ttl_ticks", "availability", "dc_checks_notary", "ehr", "steps"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown config fields: {sorted(unknown)}")

    prof = raw.get("profile", "production")
    try:
        get_profile(prof)
    except ProtocolError as exc:
        raise ScenarioError(str(exc)) from None
    parties = raw.get("parties", {})
    threshold = raw.get("threshold", {})
    if not isinstance(parties, dict) or not isinstance(threshold, dict):
        raise ScenarioError("parties and threshold must be mappings")
    notaries = _int(parties.get("notaries", 2), "parties.notaries", 0, 15)
    drs = _int(parties.get("drs", 1), "parties.drs", 1, 64)
    n = _int(threshold.get("n", notaries + 1), "threshold.n", 1, 16)
    t = _int(threshold.get("t", min(2, n)), "threshold.t", 1, 16)
    if t > n:
        raise ScenarioError(f"threshold t={t} exceeds n={n}")
    if n != notaries + 1:
        raise ScenarioError(f"threshold n={n} must equal notaries + 1 = {notaries + 1}")
    mode = raw.get("mode", "xor")
    if mode not in MODES:
        raise ScenarioError(f"mode must be one of {MODES}, got {mode!r}")

    availability = raw.get("availability", [])
    default = "do_unavailable"
    if isinstance(availability, dict):
        default = availability.get("default", default)
        availability = availability.get("script", [])
    if not isinstance(availability, list):
        raise ScenarioError("availability must be a list or {script, default}")
    for answer in [*availability, default]:
        if answer not in AVAILABILITY:
            raise ScenarioError(f"unknown availability response {answer!r}")

    ehr = raw.get("ehr")
    ehr_bytes = SAMPLE_EHR if ehr is None else str(ehr).encode()
    if not ehr_bytes:
        raise ScenarioError("ehr must be non-empty")

    steps_raw = raw.get("steps", [])
    if not isinstance(steps_raw, list):
        raise ScenarioError("steps must be a list")
    config = ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        seed=_int(raw.get("seed", 0), "seed"),
        profile=prof,
        notaries=notaries,
        drs=drs,
        n=n,
        t=t,
        mode=mode,
        expiry_ticks=_int(raw.get("expiry_ticks", 100), "expiry_ticks", 1),
        link_ttl_ticks=_int(raw.get("link_ttl_ticks", DEFAULT_LINK_TTL), "link_ttl_ticks", 1),
        availability=list(availability),
        availability_default=default,
        dc_checks_notary=bool(raw.get("dc_checks_notary", True)),
        ehr=ehr_bytes,
        steps=[_parse_step(s, i) for i, s in enumerate(steps_raw)],
        raw=raw,
    )
    for i, step in enumerate(config.steps):
        _validate_step(config, step, i)
    return config


def _validate_step(config: ScenarioConfig, step: Step, index: int) -> None:
    names = config.actor_names()
    a = step.args

    def actor(key, prefix):
        for name in _names(a[key], f"step {index}: {key}"):
            if name not in names or not name.startswith(prefix):
                raise ScenarioError(f"step {index}: unknown {prefix} {name!r}")

    def expect(*allowed):
        if "expect" in a and a["expect"] not in allowed:
            raise ScenarioError(f"step {index}: expect must be one of {allowed}")

    if step.kind == "access":
        if "dr" not in a:
            raise ScenarioError(f"step {index}: access needs a dr")
        actor("dr", "dr")
        if "notaries" in a:
            actor("notaries", "notary")
        expect("granted", "denied")
    elif step.kind == "revoke":
        actor("dr", "dr")
    elif step.kind == "delegate":
        if "drs" in a:
            actor("drs", "dr")
        if "notaries" in a:
            actor("notaries", "notary")
        if "expiry_ticks" in a:
            _int(a["expiry_ticks"], f"step {index}: expiry_ticks", 1)
    elif step.kind == "tick":
        _int(a.get("ticks", 1), f"step {index}: ticks")
    elif step.kind == "tamper":
        ids = a.get("scenario", "all")
        for sid in (TAMPER_SCENARIOS if ids == "all" else _names(ids, "scenario")):
            if sid not in TAMPER_SCENARIOS:
                raise ScenarioError(f"step {index}: unknown tamper scenario {sid!r}")
    elif step.kind == "collude":
        parties = _names(a.get("parties", []), f"step {index}: parties")
        if not parties:
            raise ScenarioError(f"step {index}: collude needs parties")
        for name in parties:
            if name not in names or name.startswith(("do", "hsp")):
                raise ScenarioError(f"step {index}: {name!r} cannot join a coalition")
        _int(a.get("trials", 1), f"step {index}: trials", 1, 10_000)
        expect("sk_recovered", "not_recovered")
    elif step.kind in ("audit", "scan"):
        expect("pass", "fail")
        if a.get("phase", "post_access") not in ("pre_access", "post_access"):
            raise ScenarioError(f"step {index}: unknown audit phase {a['phase']!r}")


def load_config(source: str | Path, seed: int | None = None,
                profile: str | None = None) -> ScenarioConfig:
    """Load from a path, or from a bundled scenario name such as ``happy_path_3_2``."""
    text = read_scenario_text(source)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML: {exc}") from None
    return parse_config(data, seed, profile)


def bundled_scenarios() -> list[str]:
    root = resources.files("ehrdeleg") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_scenario_text(source: str | Path) -> str:
    path = Path(source)
    if path.is_file():
        return path.read_text()
    name = str(source)
    if name in bundled_scenarios():
        return (resources.files("ehrdeleg") / "scenarios" / f"{name}.yaml").read_text()
    raise ScenarioError(f"no scenario file or bundled scenario named {name!r}")


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    index: int
    kind: str
    ok: bool
    detail: dict

    def to_dict(self) -> dict:
        return {"index": self.index, "kind": self.kind, "ok": self.ok, **self.detail}


@dataclass
class RunResult:
    config: ScenarioConfig
    world: World
    steps: list[StepResult]
    elapsed: float

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.steps)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def failed_step(self) -> str | None:
        for s in self.steps:
            if not s.ok:
                return self.config.steps[s.index].describe(s.index)
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "profile": self.config.profile,
            "exit_code": self.exit_code,
            "failed_step": self.failed_step(),
            "ledger_head": self.world.ledger.head_hash.hex(),
            "ledger_records": len(self.world.ledger),
            "transcript_digest": self.world.transcript.digest(),
            "steps": [s.to_dict() for s in self.steps],
        }


class Runner:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.world = build_world(
            config.notaries,
            config.drs,
            seed=config.seed,
            profile=get_profile(config.profile),
            link_ttl=config.link_ttl_ticks,
            availability=ScriptedAvailability(config.availability, config.availability_default),
            dc_checks_notary=config.dc_checks_notary,
        )

    def run(self) -> RunResult:
        start = time.perf_counter()
        results = []
        for i, step in enumerate(self.config.steps):
            ok, detail = getattr(self, f"_step_{step.kind}")(step.args)
            results.append(StepResult(i, step.kind, ok, detail))
        return RunResult(self.config, self.world, results, time.perf_counter() - start)

    def _actor(self, name):
        return self.world.actors[name]

    # -- steps -------------------------------------------------------------

    def _step_store(self, args):
        _, ehr_id, _ = flow1_store_ehr(self.world, self.config.ehr)
        return True, {"ehr_id": ehr_id.hex()}

    def _step_delegate(self, args):
        world = self.world
        drs = [self._actor(n).did for n in _names(args.get("drs", [a.name for a in world.requesters]), "drs")]
        notaries = [self._actor(n).did for n in
                    _names(args.get("notaries", [a.name for a in world.notaries]), "notaries")]
        expiry = world.now + args.get("expiry_ticks", self.config.expiry_ticks)
        try:
            delegation = world.owner.delegate(
                drs, notaries, self.config.params, expiry,
                args.get("mode", self.config.mode), world.custodian.did,
            )
        except ProtocolError as exc:
            return False, {"error": f"{type(exc).__name__}: {exc}"}
        return True, {"pseudo_id": delegation.pseudo_id.hex(), "expiry": expiry,
                      "credentials": len(delegation.credentials)}

    def _step_access(self, args):
        world = self.world
        dr = self._actor(args["dr"])
        notaries = [self._actor(n).did for n in _names(args["notaries"], "notaries")] \
            if "notaries" in args else None
        expect = args.get("expect", "granted")
        start = len(world.transcript.entries)
        detail: dict = {"dr": args["dr"], "expect": expect}
        try:
            plaintext = dr.access(None, notaries)
            detail["outcome"] = "granted"
            detail["plaintext_matches"] = plaintext == self.config.ehr
        except AccessDenied as exc:
            detail.update(outcome="denied", reason=exc.reason, by=exc.by)
        except ProtocolError as exc:
            detail.update(outcome="denied", reason=type(exc).__name__)
        detail["released"] = _released(world, start)
        ok = detail["outcome"] == expect
        if expect == "granted":
            ok = ok and detail["plaintext_matches"]
        else:
            ok = ok and not detail["released"]
            if "reason" in args:
                ok = ok and detail.get("reason") == args["reason"]
        return ok, detail

    def _step_tick(self, args):
        return True, {"now": self.world.tick(args.get("ticks", 1))}

    def _step_revoke(self, args):
        dr = self._actor(args["dr"])
        vc_id = dr.credential().vc_id
        self.world.owner.revoke(vc_id)
        return True, {"dr": args["dr"], "vc_id": vc_id.hex()}

    def _step_tamper(self, args):
        ids = args.get("scenario", "all")
        ids = list(TAMPER_SCENARIOS) if ids == "all" else _names(ids, "scenario")
        seed = args.get("seed", self.config.seed)
        outcomes = [tamper_scenarios(sid, seed) for sid in ids]
        rows = [{
            "scenario": o.scenario,
            "stride": TAMPER_SCENARIOS[o.scenario][0],
            "expected": o.expected,
            "observed": o.observed,
            "partial_released": o.partial_released,
        } for o in outcomes]
        ok = all(o.passed and not o.partial_released for o in outcomes)
        return ok, {"outcomes": rows}

    def _step_collude(self, args):
        parties = _names(args["parties"], "parties")
        trials = args.get("trials", 1)
        cfg = self.config
        verdicts: dict[str, int] = {}
        for k in range(trials):
            r = collusion_trial(cfg.seed + k, parties, get_profile(cfg.profile),
                                cfg.notaries, cfg.params, cfg.mode)
            verdicts[r.verdict] = verdicts.get(r.verdict, 0) + 1
        expect = args.get("expect")
        ok = expect is None or verdicts == {expect: trials}
        return ok, {"parties": parties, "trials": trials, "verdicts": verdicts,
                    "expect": expect}

    def _step_scan(self, args):
        report = unlinkability_scan(self.world)
        expect = args.get("expect", "pass")
        return report["pass"] == (expect == "pass"), report

    def _step_cross_mode(self, args):
        rng = self.world.rng
        profile = get_profile(self.config.profile)
        shares = generate_key_shares(self.config.params, rng, profile)
        ck = derive_cipher_key(rng.randbytes(profile.key_width), shares, rng, "xor")
        try:
            combine_cascade(ck, lambda label, block: block)
        except ModeError as exc:
            return True, {"rejected": type(exc).__name__}
        return False, {"rejected": None}

    def _step_audit(self, args):
        report = audit_world(self.world, args.get("phase"))
        expect = args.get("expect", "pass")
        ok = report.conclusive and report.all_pass == (expect == "pass")
        return ok, {"all_pass": report.all_pass, "phase": report.phase,
                    "conclusive": report.conclusive,
                    "failures": [f"{i}/{c}" for i, c in report.failures()]}


def _released(world: World, start: int) -> bool:
    return any(
        e["type"] == "message" and e["kind"] in RELEASE_KINDS
        for e in world.transcript.since(start)
    )


def unlinkability_scan(world: World) -> dict:
    """Ledger privacy check over the world's ledger.

    Registration records necessarily carry DIDs; all other payloads must
    not contain DO, Notary or DC DID bytes, and each delegation must use a
    fresh pseudo_id distinct from the hash of the owner's DID.
    """
    owner_did = bytes(world.owner.did)
    watched = {bytes(a.did): a.name for a in [world.owner, *world.notaries, world.custodian]}
    leaks = [
        {"seq": r.seq, "kind": r.kind, "actor": name}
        for r in world.ledger.records() if r.kind != "did_registration"
        for did, name in watched.items() if did in r.payload
    ]
    pseudo_ids = [a.pseudo_id for a in world.ledger.authorizations()]
    distinct = len(set(pseudo_ids)) == len(pseudo_ids)
    unhashed = sha256(owner_did) not in pseudo_ids
    return {
        "pass": not leaks and distinct and unhashed,
        "delegations": len(pseudo_ids),
        "pseudo_ids_distinct": distinct,
        "pseudo_id_not_did_hash": unhashed,
        "leaks": leaks,
    }


def run_config(config: ScenarioConfig) -> RunResult:
    return Runner(config).run()


# ---------------------------------------------------------------------------
# Export, audit from disk, replay
# ---------------------------------------------------------------------------


def write_outputs(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = result.world
    report = audit_world(world)
    (out / "config.yaml").write_text(result.config.to_yaml())
    (out / "transcript.jsonl").write_text(world.transcript.to_jsonl())
    (out / "ledger.jsonl").write_text(world.ledger.export_jsonl())
    (out / "store.json").write_text(world.custodian.store.export_json())
    wallets = {name: a.wallet.to_dict() for name, a in world.actors.items()}
    (out / "wallets.json").write_text(json.dumps(wallets, indent=2, sort_keys=True))
    (out / "observations.json").write_text(json.dumps(dump_observations(world), sort_keys=True))
    (out / "audit.json").write_text(report.to_json())
    (out / "result.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return out


def load_ledger(path: str | Path) -> Ledger:
    """Import a ledger export, verifying the chain (raises on any break)."""
    return Ledger.import_jsonl(Path(path).read_text())


@dataclass(frozen=True)
class ReplayVerdict:
    verdict: str  # identical | diverged | chain-invalid
    at_seq: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        if self.verdict == "diverged":
            return f"diverged(at seq {self.at_seq})"
        if self.verdict == "chain-invalid":
            return f"chain-invalid: {self.detail}"
        return self.verdict


def check_export(run_dir: str | Path) -> Ledger:
    """Verify the exported ledger's chain and that it ends at the recorded head."""
    run_dir = Path(run_dir)
    try:
        ledger = load_ledger(run_dir / "ledger.jsonl")
    except (ProtocolError, ValueError, KeyError) as exc:
        raise FormatError(f"ledger export fails chain verification: {exc}") from None
    result = json.loads((run_dir / "result.json").read_text())
    if ledger.head_hash.hex() != result["ledger_head"] or len(ledger) != result["ledger_records"]:
        raise FormatError("ledger export fails chain verification: head does not match run result")
    return ledger


def replay(run_dir: str | Path, seed: int | None = None) -> ReplayVerdict:
    """Re-execute the saved config and compare record hashes and wallets."""
    run_dir = Path(run_dir)
    try:
        saved = check_export(run_dir)
    except FormatError as exc:
        return ReplayVerdict("chain-invalid", detail=str(exc))
    config = load_config(run_dir / "config.yaml", seed=seed)
    fresh = run_config(config).world
    old, new = saved.records(), fresh.ledger.records()
    for a, b in zip(old, new):
        if a.record_hash != b.record_hash:
            return ReplayVerdict("diverged", a.seq)
    if len(old) != len(new):
        return ReplayVerdict("diverged", min(len(old), len(new)))
    wallets = json.loads((run_dir / "wallets.json").read_text())
    for name, actor in fresh.actors.items():
        if wallets.get(name) != actor.wallet.to_dict():
            return ReplayVerdict("diverged", len(new), f"wallet {name} differs")
    return ReplayVerdict("identical")


def audit_dir(run_dir: str | Path):
    """Recompute the audit report from a run directory's saved observations."""
    run_dir = Path(run_dir)
    ledger = check_export(run_dir)
    data = json.loads((run_dir / "observations.json").read_text())
    if data["ledger_head"] != ledger.head_hash.hex():
        raise FormatError("observations were not taken against this ledger")
    return audit_from_observations(data)


def records_from_export(text: str) -> list[LedgerRecord]:
    records = [LedgerRecord.from_json(line) for line in text.splitlines() if line.strip()]
    if not verify_records(records):
        raise FormatError("chain verification failed")
    return records
