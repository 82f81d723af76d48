"""Deterministic discrete-event simulation of an attributable oracle network.

Petitioners submit queries on a day-granular calendar; the trust model
routes and schedules them, sources propose answers that finalize after a
dispute window, audits cross-check sources against references, and
adversaries (bribers, Sybils, freeloaders, lazy reporters) try to get wrong
values accepted. Every state change lands in an append-only event log from
which the metrics report can be rebuilt.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import urn
from .querylex import QueryCategory
from .trustmodel import (
    MIN_REFERENCES,
    AnswerState,
    AuditVerdict,
    Calendar,
    ConsultationRequest,
    FeeSchedule,
    IdentityExpelled,
    DuplicateIdentity,
    NotWhitelisted,
    OracleSource,
    ReputationEvent,
    RoutingDecision,
    SourceExpelled,
    Tier,
    TrustModel,
    route,
    schedule,
    service_order,
)

CATEGORY_ORDER = sorted(QueryCategory, key=lambda c: c.value)


class InvalidConfig(ValueError):
    """Scenario failed validation; ``errors`` holds ``(field_path, message)``."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in errors))


class EventKind(str, Enum):
    REGISTER = "Register"
    REGISTER_REJECTED = "RegisterRejected"
    BIAS_CHANGE = "BiasChange"
    SUBMIT = "Submit"
    FEE_PAID = "FeePaid"
    ROUTE = "Route"
    REFUND = "Refund"
    ABSTAIN = "Abstain"
    UNSERVED = "Unserved"
    PROPOSE = "Propose"
    DISPUTE = "Dispute"
    FINALIZE = "Finalize"
    UNRESOLVED = "Unresolved"
    REPUTATION = "Reputation"
    AUDIT = "Audit"
    EXPEL = "Expel"
    URN_COMMIT = "UrnCommit"
    URN_SELECT = "UrnSelect"
    URN_REVEAL = "UrnReveal"


class AdversaryKind(str, Enum):
    BRIBER = "Briber"
    SYBIL = "Sybil"
    FREELOADER = "Freeloader"
    LAZY = "Lazy"


# --------------------------------------------------------------------------
# configuration

@dataclass
class SourceConfig:
    id: str
    domain_tags: tuple[str, ...] = ("general",)
    bias: float = 0.0
    corrupt_from: int | None = None
    corrupt_to: int | None = None
    latency_days: int = 0

    def bias_on(self, day: int) -> float:
        if self.corrupt_from is None and self.corrupt_to is None:
            return self.bias
        start = 0 if self.corrupt_from is None else self.corrupt_from
        end = math.inf if self.corrupt_to is None else self.corrupt_to
        return self.bias if start <= day < end else 0.0


@dataclass
class PetitionerConfig:
    id: str
    tier: Tier = Tier.STANDARD
    query_mix: dict[str, float] = field(default_factory=lambda: {c.value: 1.0 for c in CATEGORY_ORDER})
    queries_per_month: int = 4
    topics: tuple[str, ...] = ("general",)
    binary_fraction: float = 0.5
    urns_per_month: int = 0


@dataclass
class AdversaryConfig:
    kind: AdversaryKind
    parameters: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    duration_days: int
    seed: int = 0
    calendar: Calendar = field(default_factory=Calendar)
    dispute_window_days: int = 3
    audit_probability_per_month: float = 0.2
    tolerance: float = 0.01
    sources: list[SourceConfig] = field(default_factory=list)
    petitioners: list[PetitionerConfig] = field(default_factory=list)
    adversaries: list[AdversaryConfig] = field(default_factory=list)
    witness_count: int = 3
    fees: FeeSchedule = field(default_factory=FeeSchedule)
    attributable: bool = True
    whitelist: list[str] | None = None
    dispute_probability: float = 0.5
    question_pool: int = 20
    witness_quorum: int = urn.DEFAULT_QUORUM

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenarioConfig:
        return _parse_config(data)

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfig([("$", f"invalid JSON: {exc.msg} at line {exc.lineno}")]) from None
        return _parse_config(data)

    def to_dict(self) -> dict:
        return {
            "duration_days": self.duration_days,
            "seed": self.seed,
            "calendar": self.calendar.to_dict(),
            "dispute_window_days": self.dispute_window_days,
            "audit_probability_per_month": self.audit_probability_per_month,
            "tolerance": self.tolerance,
            "sources": [
                {**asdict(s), "domain_tags": list(s.domain_tags)} for s in self.sources
            ],
            "petitioners": [
                {**asdict(p), "tier": p.tier.value, "topics": list(p.topics)} for p in self.petitioners
            ],
            "adversaries": [{"kind": a.kind.value, "parameters": dict(a.parameters)} for a in self.adversaries],
            "witness_count": self.witness_count,
            "fees": asdict(self.fees),
            "attributable": self.attributable,
            "whitelist": self.whitelist,
            "dispute_probability": self.dispute_probability,
            "question_pool": self.question_pool,
            "witness_quorum": self.witness_quorum,
        }

    def with_seed(self, seed: int) -> ScenarioConfig:
        data = self.to_dict()
        data["seed"] = seed
        return _parse_config(data)


ADVERSARY_PARAMS = {
    AdversaryKind.BRIBER: {"target": str, "bias": float, "from_day": int, "to_day": int},
    AdversaryKind.SYBIL: {"n": int, "bias": float, "domain_tags": list},
    AdversaryKind.FREELOADER: {"source_id": str},
    AdversaryKind.LAZY: {"source_id": str, "constant": float},
}
ADVERSARY_REQUIRED = {
    AdversaryKind.BRIBER: {"target", "from_day", "to_day"},
    AdversaryKind.SYBIL: {"n"},
    AdversaryKind.FREELOADER: {"source_id"},
    AdversaryKind.LAZY: {"source_id"},
}


class _Checker:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def error(self, path: str, msg: str):
        self.errors.append((path, msg))

    def keys(self, obj: Any, path: str, allowed: Iterable[str], required: Iterable[str] = ()) -> bool:
        if not isinstance(obj, dict):
            self.error(path, "expected an object")
            return False
        allowed = set(allowed)
        for key in obj:
            if key not in allowed:
                self.error(f"{path}.{key}", "unknown field")
        for key in required:
            if key not in obj:
                self.error(f"{path}.{key}", "required field missing")
        return True

    def integer(self, obj: dict, key: str, path: str, default: Any = None, minimum: int | None = None,
                optional: bool = False):
        value = obj.get(key, default)
        if value is None and optional:
            return None
        if not isinstance(value, int) or isinstance(value, bool):
            self.error(f"{path}.{key}", "expected an integer")
            return default if isinstance(default, int) else 0
        if minimum is not None and value < minimum:
            self.error(f"{path}.{key}", f"must be >= {minimum}")
        return value

    def number(self, obj: dict, key: str, path: str, default: float, lo: float | None = None,
               hi: float | None = None) -> float:
        value = obj.get(key, default)
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            self.error(f"{path}.{key}", "expected a finite number")
            return default
        if lo is not None and value < lo:
            self.error(f"{path}.{key}", f"must be >= {lo}")
        if hi is not None and value > hi:
            self.error(f"{path}.{key}", f"must be <= {hi}")
        return float(value)

    def string_list(self, obj: dict, key: str, path: str, default: Sequence[str]) -> tuple[str, ...]:
        value = obj.get(key, list(default))
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            self.error(f"{path}.{key}", "expected a list of strings")
            return tuple(default)
        return tuple(value)


TOP_LEVEL = {
    "duration_days", "seed", "calendar", "dispute_window_days", "audit_probability_per_month",
    "tolerance", "sources", "petitioners", "adversaries", "witness_count", "fees", "attributable",
    "whitelist", "dispute_probability", "question_pool", "witness_quorum",
}


def _parse_config(data: Any) -> ScenarioConfig:
    ck = _Checker()
    if not ck.keys(data, "$", TOP_LEVEL, required={"duration_days"}):
        raise InvalidConfig(ck.errors)

    duration = ck.integer(data, "duration_days", "$", 1, minimum=1)
    seed = ck.integer(data, "seed", "$", 0, minimum=0)
    if seed >= urn.MAX_SEED:
        ck.error("$.seed", "must fit in 64 bits")

    cal_data = data.get("calendar", {})
    calendar = Calendar()
    if ck.keys(cal_data, "$.calendar", {"month_length", "consultation_day", "off_season", "months_per_year"}):
        off = cal_data.get("off_season", [10, 11, 12])
        if not isinstance(off, list) or not all(isinstance(m, int) for m in off):
            ck.error("$.calendar.off_season", "expected a list of month numbers")
            off = [10, 11, 12]
        try:
            calendar = Calendar(
                month_length=ck.integer(cal_data, "month_length", "$.calendar", 30, minimum=1),
                consultation_day=ck.integer(cal_data, "consultation_day", "$.calendar", 7, minimum=1),
                off_season=frozenset(off),
                months_per_year=ck.integer(cal_data, "months_per_year", "$.calendar", 12, minimum=1),
            )
        except ValueError as exc:
            ck.error("$.calendar", str(exc))

    fee_data = data.get("fees", {})
    fees = FeeSchedule()
    if ck.keys(fee_data, "$.fees", {"base", "promanteia", "low_reliability_surcharge"}):
        fees = FeeSchedule(
            base=ck.number(fee_data, "base", "$.fees", 1.0, lo=0.0),
            promanteia=ck.number(fee_data, "promanteia", "$.fees", 3.0, lo=0.0),
            low_reliability_surcharge=ck.number(fee_data, "low_reliability_surcharge", "$.fees", 2.0, lo=1.0),
        )

    ids: set[str] = set()

    def claim(identity: Any, path: str) -> str:
        if not isinstance(identity, str) or not identity:
            ck.error(path, "expected a non-empty string")
            return ""
        if identity in ids:
            ck.error(path, f"duplicate id {identity!r}")
        ids.add(identity)
        return identity

    sources = []
    raw_sources = data.get("sources", [])
    if not isinstance(raw_sources, list):
        ck.error("$.sources", "expected a list")
        raw_sources = []
    for i, s in enumerate(raw_sources):
        path = f"$.sources[{i}]"
        if not ck.keys(s, path, {"id", "domain_tags", "bias", "corrupt_from", "corrupt_to", "latency_days"},
                       required={"id"}):
            continue
        src = SourceConfig(
            id=claim(s.get("id"), f"{path}.id"),
            domain_tags=ck.string_list(s, "domain_tags", path, ("general",)),
            bias=ck.number(s, "bias", path, 0.0),
            corrupt_from=ck.integer(s, "corrupt_from", path, None, minimum=0, optional=True),
            corrupt_to=ck.integer(s, "corrupt_to", path, None, minimum=0, optional=True),
            latency_days=ck.integer(s, "latency_days", path, 0, minimum=0),
        )
        if src.corrupt_from is not None and src.corrupt_to is not None and src.corrupt_to < src.corrupt_from:
            ck.error(f"{path}.corrupt_to", "must not precede corrupt_from")
        sources.append(src)
    source_ids = {s.id for s in sources}

    petitioners = []
    raw_pets = data.get("petitioners", [])
    if not isinstance(raw_pets, list):
        ck.error("$.petitioners", "expected a list")
        raw_pets = []
    for i, p in enumerate(raw_pets):
        path = f"$.petitioners[{i}]"
        if not ck.keys(p, path, {"id", "tier", "query_mix", "queries_per_month", "topics",
                                  "binary_fraction", "urns_per_month"}, required={"id"}):
            continue
        tier = Tier.STANDARD
        try:
            tier = Tier(p.get("tier", "Standard"))
        except ValueError:
            ck.error(f"{path}.tier", f"expected one of {[t.value for t in Tier]}")
        mix = p.get("query_mix", {c.value: 1.0 for c in CATEGORY_ORDER})
        if not isinstance(mix, dict) or not mix:
            ck.error(f"{path}.query_mix", "expected a non-empty object of category weights")
            mix = {}
        for cat, w in mix.items():
            if cat not in {c.value for c in QueryCategory}:
                ck.error(f"{path}.query_mix.{cat}", "unknown query category")
            if not isinstance(w, (int, float)) or isinstance(w, bool) or w < 0:
                ck.error(f"{path}.query_mix.{cat}", "weight must be a non-negative number")
        if mix and all(isinstance(w, (int, float)) for w in mix.values()) and sum(mix.values()) <= 0:
            ck.error(f"{path}.query_mix", "weights must not all be zero")
        petitioners.append(PetitionerConfig(
            id=claim(p.get("id"), f"{path}.id"),
            tier=tier,
            query_mix={k: float(v) for k, v in mix.items() if isinstance(v, (int, float))},
            queries_per_month=ck.integer(p, "queries_per_month", path, 4, minimum=0),
            topics=ck.string_list(p, "topics", path, ("general",)) or ("general",),
            binary_fraction=ck.number(p, "binary_fraction", path, 0.5, lo=0.0, hi=1.0),
            urns_per_month=ck.integer(p, "urns_per_month", path, 0, minimum=0),
        ))

    adversaries = []
    raw_adv = data.get("adversaries", [])
    if not isinstance(raw_adv, list):
        ck.error("$.adversaries", "expected a list")
        raw_adv = []
    for i, a in enumerate(raw_adv):
        path = f"$.adversaries[{i}]"
        if not ck.keys(a, path, {"kind", "parameters"}, required={"kind"}):
            continue
        try:
            kind = AdversaryKind(a.get("kind"))
        except ValueError:
            ck.error(f"{path}.kind", f"expected one of {[k.value for k in AdversaryKind]}")
            continue
        params = a.get("parameters", {})
        ppath = f"{path}.parameters"
        if not ck.keys(params, ppath, ADVERSARY_PARAMS[kind], ADVERSARY_REQUIRED[kind]):
            continue
        for key, typ in ADVERSARY_PARAMS[kind].items():
            if key not in params:
                continue
            v = params[key]
            ok = (isinstance(v, (int, float)) and not isinstance(v, bool)) if typ is float else (
                isinstance(v, typ) and not isinstance(v, bool))
            if not ok:
                ck.error(f"{ppath}.{key}", f"expected {typ.__name__}")
        for key in ("target", "source_id"):
            if key in params and params[key] not in source_ids:
                ck.error(f"{ppath}.{key}", f"unknown source {params[key]!r}")
        if kind is AdversaryKind.SYBIL and isinstance(params.get("n"), int) and params["n"] < 0:
            ck.error(f"{ppath}.n", "must be >= 0")
        if kind is AdversaryKind.BRIBER and all(isinstance(params.get(k), int) for k in ("from_day", "to_day")):
            if params["to_day"] < params["from_day"]:
                ck.error(f"{ppath}.to_day", "must not precede from_day")
        adversaries.append(AdversaryConfig(kind, dict(params)))

    whitelist = data.get("whitelist")
    if whitelist is not None and (not isinstance(whitelist, list) or not all(isinstance(w, str) for w in whitelist)):
        ck.error("$.whitelist", "expected a list of strings")
        whitelist = None
    attributable = data.get("attributable", True)
    if not isinstance(attributable, bool):
        ck.error("$.attributable", "expected a boolean")
        attributable = True

    config = ScenarioConfig(
        duration_days=duration,
        seed=seed,
        calendar=calendar,
        dispute_window_days=ck.integer(data, "dispute_window_days", "$", 3, minimum=0),
        audit_probability_per_month=ck.number(data, "audit_probability_per_month", "$", 0.2, lo=0.0, hi=1.0),
        tolerance=ck.number(data, "tolerance", "$", 0.01, lo=0.0),
        sources=sources,
        petitioners=petitioners,
        adversaries=adversaries,
        witness_count=ck.integer(data, "witness_count", "$", 3, minimum=0),
        fees=fees,
        attributable=attributable,
        whitelist=whitelist,
        dispute_probability=ck.number(data, "dispute_probability", "$", 0.5, lo=0.0, hi=1.0),
        question_pool=ck.integer(data, "question_pool", "$", 20, minimum=1),
        witness_quorum=ck.integer(data, "witness_quorum", "$", urn.DEFAULT_QUORUM, minimum=1),
    )
    if ck.errors:
        raise InvalidConfig(ck.errors)
    return config


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfig([("$", f"cannot read scenario {path}: {exc.strerror}")]) from None
    return ScenarioConfig.from_json(text)


# --------------------------------------------------------------------------
# randomness

def derive_seed(seed: int, stream: str) -> int:
    digest = hashlib.sha256(f"{seed}/{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def stream_rng(seed: int, stream: str) -> random.Random:
    """Independent generator per named stream, so adding an agent leaves
    every other agent's draws unchanged."""
    return random.Random(derive_seed(seed, stream))


def ground_truth(seed: int, question_id: str) -> float:
    """Hidden true value of a question, fixed per (seed, question)."""
    n = derive_seed(seed, f"truth/{question_id}")
    return 50.0 + (n % 10_000) / 100.0


# --------------------------------------------------------------------------
# adversaries

@dataclass(frozen=True)
class WorldView:
    day: int
    attributable: bool = True
    question_id: str | None = None
    visible_answers: Mapping[str, float] = field(default_factory=dict)
    month_start: bool = False


@dataclass(frozen=True)
class SetBias:
    source_id: str
    bias: float


@dataclass(frozen=True)
class AttemptRegistration:
    identity: str
    domain_tags: tuple[str, ...]
    bias: float


@dataclass(frozen=True)
class Answer:
    value: float
    mode: str


@dataclass(frozen=True)
class Abstain:
    pass


def adversary_step(kind: AdversaryKind, world_view: WorldView, rng: random.Random,
                   parameters: Mapping | None = None) -> list:
    """Actions an adversary takes given what it can see.

    Bribers set their target's bias at the start of the corrupt window and
    clear it at the end; Sybils try ``n`` fresh identities each month;
    freeloaders copy the latest visible answer to the same question or
    abstain; lazy reporters answer a constant.
    """
    params = parameters or {}
    kind = AdversaryKind(kind)
    day = world_view.day
    if kind is AdversaryKind.BRIBER:
        if day == params["from_day"]:
            return [SetBias(params["target"], float(params.get("bias", 25.0)))]
        if day == params["to_day"]:
            return [SetBias(params["target"], 0.0)]
        return []
    if kind is AdversaryKind.SYBIL:
        if not world_view.month_start:
            return []
        tags = tuple(params.get("domain_tags", ("general",)))
        bias = float(params.get("bias", 20.0))
        return [AttemptRegistration(f"sybil-{day}-{rng.getrandbits(32):08x}", tags, bias)
                for _ in range(params["n"])]
    if kind is AdversaryKind.FREELOADER:
        qid = world_view.question_id
        if qid is not None and qid in world_view.visible_answers:
            return [Answer(world_view.visible_answers[qid], "copy")]
        return [Abstain()]
    if kind is AdversaryKind.LAZY:
        return [Answer(float(params.get("constant", 100.0)), "constant")]
    raise ValueError(kind)


# --------------------------------------------------------------------------
# event log and metrics

@dataclass(frozen=True)
class Event:
    seq: int
    at: int
    kind: EventKind
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "at": self.at, "kind": self.kind.value, "payload": self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def log_to_jsonl(events: Iterable[Event]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def log_from_jsonl(text: str) -> list[Event]:
    events = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            events.append(Event(d["seq"], d["at"], EventKind(d["kind"]), d["payload"]))
    return events


@dataclass
class MetricsReport:
    run_seed: int
    categories: dict[str, dict]
    finalized_answers: int
    manipulated_answers: int
    manipulation_success_rate: float
    corrupted_sources: int
    detected_sources: int
    detection_rate: float
    mean_detection_latency_days: float | None
    expulsions: int
    expelled_ids: list[str]
    fee_revenue: float
    proposals: int
    freeloader_copy_rate: float
    lazy_constant_rate: float
    audits: int
    audit_detections: int
    sybil_attempts: int
    sybil_accepted: int
    urn_consultations: int
    urn_accepted: int
    post_expulsion_acceptances: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


SCALAR_METRICS = (
    "finalized_answers", "manipulated_answers", "manipulation_success_rate", "corrupted_sources",
    "detected_sources", "detection_rate", "mean_detection_latency_days", "expulsions", "fee_revenue",
    "proposals", "freeloader_copy_rate", "lazy_constant_rate", "audits", "audit_detections",
    "sybil_attempts", "sybil_accepted", "urn_consultations", "urn_accepted", "post_expulsion_acceptances",
)


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def report_from_log(events: Sequence[Event], run_seed: int) -> MetricsReport:
    """Rebuild every metric by scanning the raw log."""
    submitted = {c.value: 0 for c in CATEGORY_ORDER}
    served = {c.value: 0 for c in CATEGORY_ORDER}
    latency_sum = {c.value: 0 for c in CATEGORY_ORDER}
    finalized = manipulated = 0
    first_corrupt: dict[str, int] = {}
    expel_day: dict[str, int] = {}
    expelled_order: list[str] = []
    fee = 0.0
    proposals = copies = constants = 0
    audits = detections = 0
    sybil_attempts = sybil_accepted = 0
    urn_total = urn_ok = 0
    post_expulsion = 0

    for e in events:
        p = e.payload
        k = e.kind
        if k is EventKind.SUBMIT:
            submitted[p["category"]] += 1
        elif k is EventKind.FEE_PAID:
            fee += p["amount"]
        elif k is EventKind.REFUND:
            fee -= p["amount"]
        elif k is EventKind.PROPOSE:
            proposals += 1
            copies += p["mode"] == "copy"
            constants += p["mode"] == "constant"
        elif k is EventKind.FINALIZE:
            finalized += 1
            manipulated += p["value"] != p["truth"]
            served[p["category"]] += 1
            latency_sum[p["category"]] += e.at - p["submitted_at"]
            if p["via"] == "optimistic" and p["source_id"] in expel_day:
                post_expulsion += 1
        elif k is EventKind.BIAS_CHANGE:
            if p["bias"] != 0 and p["source_id"] not in first_corrupt:
                first_corrupt[p["source_id"]] = e.at
        elif k is EventKind.EXPEL:
            expel_day[p["source_id"]] = e.at
            expelled_order.append(p["source_id"])
        elif k is EventKind.AUDIT:
            if p["verdict"] in (AuditVerdict.PASS.value, AuditVerdict.MANIPULATION_DETECTED.value):
                audits += 1
                detections += p["verdict"] == AuditVerdict.MANIPULATION_DETECTED.value
        elif k is EventKind.REGISTER:
            if p.get("sybil"):
                sybil_attempts += 1
                sybil_accepted += 1
        elif k is EventKind.REGISTER_REJECTED:
            if p.get("sybil"):
                sybil_attempts += 1
        elif k is EventKind.URN_REVEAL:
            urn_total += 1
            urn_ok += p["verdict"] == urn.Verdict.ACCEPTED.value

    latencies = [expel_day[s] - d for s, d in first_corrupt.items() if s in expel_day and expel_day[s] >= d]
    categories = {
        c: {
            "submitted": submitted[c],
            "served": served[c],
            "mean_latency_days": latency_sum[c] / served[c] if served[c] else None,
        }
        for c in submitted
    }
    return MetricsReport(
        run_seed=run_seed,
        categories=categories,
        finalized_answers=finalized,
        manipulated_answers=manipulated,
        manipulation_success_rate=_rate(manipulated, finalized),
        corrupted_sources=len(first_corrupt),
        detected_sources=len(latencies),
        detection_rate=_rate(len(latencies), len(first_corrupt)),
        mean_detection_latency_days=sum(latencies) / len(latencies) if latencies else None,
        expulsions=len(expelled_order),
        expelled_ids=expelled_order,
        fee_revenue=fee,
        proposals=proposals,
        freeloader_copy_rate=_rate(copies, proposals),
        lazy_constant_rate=_rate(constants, proposals),
        audits=audits,
        audit_detections=detections,
        sybil_attempts=sybil_attempts,
        sybil_accepted=sybil_accepted,
        urn_consultations=urn_total,
        urn_accepted=urn_ok,
        post_expulsion_acceptances=post_expulsion,
    )


def accepted_after_expulsion(events: Sequence[Event]) -> list[Event]:
    """Optimistic acceptances credited to a source after its expulsion."""
    expelled: set[str] = set()
    bad = []
    for e in events:
        if e.kind is EventKind.EXPEL:
            expelled.add(e.payload["source_id"])
        elif e.kind is EventKind.FINALIZE and e.payload["via"] == "optimistic":
            if e.payload["source_id"] in expelled:
                bad.append(e)
    return bad


# --------------------------------------------------------------------------
# simulator

@dataclass
class _Request:
    request_id: str
    petitioner: PetitionerConfig
    question_id: str
    category: QueryCategory
    binary: bool
    topic: str
    submitted_at: int
    fee: float = 0.0


@dataclass
class _Live:
    """Counters maintained while running; cross-checked against the log."""

    submitted: dict = field(default_factory=lambda: {c.value: 0 for c in CATEGORY_ORDER})
    served: dict = field(default_factory=lambda: {c.value: 0 for c in CATEGORY_ORDER})
    latency: dict = field(default_factory=lambda: {c.value: 0 for c in CATEGORY_ORDER})
    finalized: int = 0
    manipulated: int = 0
    fee: float = 0.0
    proposals: int = 0
    copies: int = 0
    constants: int = 0
    audits: int = 0
    detections: int = 0
    first_corrupt: dict = field(default_factory=dict)
    expel_day: dict = field(default_factory=dict)
    expelled: list = field(default_factory=list)
    sybil_attempts: int = 0
    sybil_accepted: int = 0
    urns: int = 0
    urns_ok: int = 0
    post_expulsion: int = 0


class Simulation:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.seed = config.seed
        self.calendar = config.calendar
        self.log: list[Event] = []
        self.live = _Live()
        self._agenda: list = []
        self._agenda_seq = 0
        self._last_key = (-1, -1)

        whitelist = config.whitelist if config.whitelist is not None else [s.id for s in config.sources]
        self.model = TrustModel(whitelist, attributable=config.attributable)
        self.source_cfg: dict[str, SourceConfig] = {}
        self.bias_override: dict[str, float] = {}
        self.behaviour: dict[str, tuple[AdversaryKind, dict, random.Random]] = {}
        self.visible: dict[str, float] = {}
        self.requests: dict[str, _Request] = {}
        self.answer_request: dict[int, str] = {}
        self.pending_slots: dict[int, list] = {}
        self.batch_open: set[int] = set()
        self.audit_order: list[str] = []

        self.service_rng = stream_rng(self.seed, "service")
        self.dispute_rng = stream_rng(self.seed, "disputes")
        self.beacon_rng = stream_rng(self.seed, "beacon")
        witness_rng = stream_rng(self.seed, "witnesses")
        self.witness_secrets = {f"witness-{i + 1}": witness_rng.randbytes(32) for i in range(config.witness_count)}
        self._request_counter = 0
        self._urn_counter = 0

    # agenda ------------------------------------------------------------------

    def at(self, day: int, action: Callable, *args):
        if day >= self.config.duration_days:
            return
        heapq.heappush(self._agenda, (day, self._agenda_seq, action, args))
        self._agenda_seq += 1

    def emit(self, day: int, kind: EventKind, **payload) -> Event:
        event = Event(len(self.log), day, kind, payload)
        self.log.append(event)
        return event

    # sources -----------------------------------------------------------------

    def bias_on(self, sid: str, day: int) -> float:
        if sid in self.bias_override:
            return self.bias_override[sid]
        cfg = self.source_cfg.get(sid)
        return cfg.bias_on(day) if cfg else self.model.sources[sid].bias

    def answer(self, source: OracleSource, question_id: str, truth: float, day: int) -> Answer | None:
        if source.id in self.behaviour:
            kind, params, rng = self.behaviour[source.id]
            view = WorldView(day, self.config.attributable, question_id, self.visible)
            for action in adversary_step(kind, view, rng, params):
                if isinstance(action, Answer):
                    return action
            return None
        bias = self.bias_on(source.id, day)
        return Answer(truth + bias, "biased" if bias else "honest")

    def _register(self, day: int, sid: str, tags: Sequence[str], bias: float, sybil: bool) -> bool:
        try:
            self.model.register_source(sid, tags, bias=bias)
        except (NotWhitelisted, DuplicateIdentity, IdentityExpelled) as exc:
            self.emit(day, EventKind.REGISTER_REJECTED, source_id=sid, reason=type(exc).__name__, sybil=sybil)
            if sybil:
                self.live.sybil_attempts += 1
            return False
        self.emit(day, EventKind.REGISTER, source_id=sid, domain_tags=sorted(tags), sybil=sybil)
        if sybil:
            self.live.sybil_attempts += 1
            self.live.sybil_accepted += 1
        self.audit_order.append(sid)
        return True

    def _bias_event(self, day: int, sid: str, bias: float):
        if not self.model.sources[sid].active:
            return
        self.emit(day, EventKind.BIAS_CHANGE, source_id=sid, bias=bias)
        if bias != 0 and sid not in self.live.first_corrupt:
            self.live.first_corrupt[sid] = day

    # setup -------------------------------------------------------------------

    def _setup(self):
        cfg = self.config
        for s in cfg.sources:
            self.source_cfg[s.id] = s
            if self._register(0, s.id, s.domain_tags, s.bias, sybil=False):
                if s.corrupt_from is None and s.corrupt_to is None:
                    if s.bias:
                        self._bias_event(0, s.id, s.bias)
                else:
                    start = s.corrupt_from or 0
                    if s.bias:
                        self.at(start, self._bias_event, start, s.id, s.bias)
                        if s.corrupt_to is not None:
                            self.at(s.corrupt_to, self._bias_event, s.corrupt_to, s.id, 0.0)

        for i, adv in enumerate(cfg.adversaries):
            rng = stream_rng(self.seed, f"adversary/{i}/{adv.kind.value}")
            if adv.kind in (AdversaryKind.FREELOADER, AdversaryKind.LAZY):
                self.behaviour[adv.parameters["source_id"]] = (adv.kind, adv.parameters, rng)
            elif adv.kind is AdversaryKind.BRIBER:
                for d in (adv.parameters["from_day"], adv.parameters["to_day"]):
                    self.at(d, self._adversary_tick, d, adv, rng)
            # Sybils act from the month-start handler

        self._sybils = [(adv, stream_rng(self.seed, f"adversary/{i}/{adv.kind.value}"))
                        for i, adv in enumerate(cfg.adversaries) if adv.kind is AdversaryKind.SYBIL]
        self._petitioner_rngs = {p.id: stream_rng(self.seed, f"petitioner/{p.id}") for p in cfg.petitioners}
        self._audit_rngs: dict[str, random.Random] = {}

        for start in range(0, cfg.duration_days, self.calendar.month_length):
            self.at(start, self._month_start, start)

    # handlers ----------------------------------------------------------------

    def _adversary_tick(self, day: int, adv: AdversaryConfig, rng: random.Random):
        view = WorldView(day, self.config.attributable)
        for action in adversary_step(adv.kind, view, rng, adv.parameters):
            if isinstance(action, SetBias):
                target = self.model.sources.get(action.source_id)
                if target is None or not target.active:
                    continue
                self.bias_override[action.source_id] = action.bias
                self._bias_event(day, action.source_id, action.bias)

    def _month_start(self, day: int):
        cfg = self.config
        L = self.calendar.month_length
        month = day // L

        for adv, rng in self._sybils:
            view = WorldView(day, cfg.attributable, month_start=True)
            for action in adversary_step(adv.kind, view, rng, adv.parameters):
                if self._register(day, action.identity, action.domain_tags, action.bias, sybil=True):
                    if action.bias:
                        self._bias_event(day, action.identity, action.bias)

        for sid in self.audit_order:
            rng = self._audit_rngs.setdefault(sid, stream_rng(self.seed, f"audit/{sid}"))
            u = rng.random()
            offset = rng.randrange(L)
            if u < cfg.audit_probability_per_month and self.model.sources[sid].active:
                self.at(day + offset, self._audit, day + offset, sid, month)

        categories = [c for c in CATEGORY_ORDER]
        for pet in cfg.petitioners:
            rng = self._petitioner_rngs[pet.id]
            weights = [pet.query_mix.get(c.value, 0.0) for c in categories]
            for _ in range(pet.queries_per_month):
                offset = rng.randrange(L)
                category = rng.choices(categories, weights)[0]
                k = rng.randrange(cfg.question_pool)
                binary = rng.random() < pet.binary_fraction
                topic = rng.choice(pet.topics)
                self._request_counter += 1
                req = _Request(f"q{self._request_counter}", pet, f"{category.value}/{topic}/{k}",
                               category, binary, topic, day + offset)
                self.at(day + offset, self._submit, day + offset, req)
            for _ in range(pet.urns_per_month):
                offset = rng.randrange(L)
                self._urn_counter += 1
                self.at(day + offset, self._urn_consultation, day + offset, pet, f"u{self._urn_counter}")

    def _submit(self, day: int, req: _Request):
        cfg = self.config
        self.requests[req.request_id] = req
        self.emit(day, EventKind.SUBMIT, request_id=req.request_id, petitioner_id=req.petitioner.id,
                  question_id=req.question_id, category=req.category.value,
                  tier=req.petitioner.tier.value, binary=req.binary)
        self.live.submitted[req.category.value] += 1
        req.fee = cfg.fees.required(req.category, req.petitioner.tier)
        self.emit(day, EventKind.FEE_PAID, request_id=req.request_id, amount=req.fee)
        self.live.fee += req.fee

        decision = route(req.question_id, req.category)
        self.emit(day, EventKind.ROUTE, request_id=req.request_id, decision=decision.value)
        if decision is RoutingDecision.REJECT:
            self.emit(day, EventKind.REFUND, request_id=req.request_id, amount=req.fee)
            self.live.fee -= req.fee
            return

        creq = ConsultationRequest(req.petitioner.id, req.question_id, req.category, req.petitioner.tier,
                                   req.fee, day, req.binary, req.request_id)
        slot = schedule(creq, day, self.calendar, cfg.fees, sequence=int(req.request_id[1:]))
        self.pending_slots.setdefault(slot.day, []).append(slot)
        if slot.day not in self.batch_open:
            self.batch_open.add(slot.day)
            self.at(slot.day, self._serve_batch, slot.day)

    def _serve_batch(self, day: int):
        self.batch_open.discard(day)
        slots = service_order(self.pending_slots.pop(day, []))
        for slot in slots:
            self._serve(day, self.requests[slot.request_id])

    def _finalize_event(self, day: int, req: _Request, via: str, value: float, truth: float,
                        source_id: str | None, **extra):
        self.emit(day, EventKind.FINALIZE, request_id=req.request_id, question_id=req.question_id,
                  category=req.category.value, via=via, source_id=source_id, value=value, truth=truth,
                  submitted_at=req.submitted_at, **extra)
        live = self.live
        live.finalized += 1
        live.manipulated += value != truth
        live.served[req.category.value] += 1
        live.latency[req.category.value] += day - req.submitted_at
        if via == "optimistic" and source_id in live.expel_day:
            live.post_expulsion += 1

    def _serve(self, day: int, req: _Request):
        truth = ground_truth(self.seed, req.question_id)
        if route(req.question_id, req.category) is RoutingDecision.COMPUTE_PATH:
            self._finalize_event(day, req, "compute", truth, truth, None)
            return

        active = sorted((s for s in self.model.active_sources()), key=lambda s: s.id)
        candidates = [s for s in active if req.topic in s.domain_tags] or active
        while candidates:
            weights = [s.reputation for s in candidates]
            src = self.service_rng.choices(candidates, weights)[0]
            ans = self.answer(src, req.question_id, truth, day)
            if ans is not None:
                latency = self.source_cfg[src.id].latency_days if src.id in self.source_cfg else 0
                if latency:
                    self.at(day + latency, self._propose, day + latency, req, src.id, ans, truth)
                else:
                    self._propose(day, req, src.id, ans, truth)
                return
            self.emit(day, EventKind.ABSTAIN, request_id=req.request_id, source_id=src.id)
            candidates.remove(src)
        self.emit(day, EventKind.UNSERVED, request_id=req.request_id, reason="no answering source")

    def _propose(self, day: int, req: _Request, sid: str, ans: Answer, truth: float):
        w = self.config.dispute_window_days
        try:
            pending = self.model.propose(req.question_id, sid, ans.value, day, w)
        except SourceExpelled:
            self.emit(day, EventKind.UNSERVED, request_id=req.request_id, reason="source expelled")
            return
        self.answer_request[pending.answer_id] = req.request_id
        self.emit(day, EventKind.PROPOSE, answer_id=pending.answer_id, request_id=req.request_id,
                  question_id=req.question_id, source_id=sid, value=ans.value, mode=ans.mode,
                  window_end=pending.window_end)
        self.live.proposals += 1
        self.live.copies += ans.mode == "copy"
        self.live.constants += ans.mode == "constant"
        self.visible[req.question_id] = ans.value

        if w > 0 and ans.value != truth and self.dispute_rng.random() < self.config.dispute_probability:
            when = day + self.dispute_rng.randrange(w)
            self.at(when, self._dispute, when, pending)
        self.at(pending.window_end, self._close_window, pending.window_end, pending, truth)

    def _dispute(self, day: int, pending):
        if pending.state is not AnswerState.PENDING or day >= pending.window_end:
            return
        self.model.dispute(pending, "watcher", day)
        self.emit(day, EventKind.DISPUTE, answer_id=pending.answer_id, challenger_id="watcher",
                  window_end=pending.window_end)

    def _reputation(self, day: int, sid: str, event: ReputationEvent):
        src = self.model.sources[sid]
        if not src.active:
            return
        self.model.update_reputation(src, event)
        self.emit(day, EventKind.REPUTATION, source_id=sid, event=event.value, reputation=src.reputation)

    def _close_window(self, day: int, pending, truth: float):
        req = self.requests[self.answer_request[pending.answer_id]]
        if pending.state is AnswerState.PENDING:
            self.model.finalize(pending, day)
            self._finalize_event(day, req, "optimistic", pending.value, truth, pending.source_id,
                                 answer_id=pending.answer_id, proposed_at=pending.proposed_at)
            self._reputation(day, pending.source_id, ReputationEvent.SUCCESS)
        elif pending.state is AnswerState.ESCALATED:
            refs = [s for s in sorted(self.model.active_sources(), key=lambda s: s.id)
                    if s.id != pending.source_id]
            values = [a.value for a in (self.answer(s, req.question_id, truth, day) for s in refs) if a is not None]
            if len(values) < MIN_REFERENCES:
                self.emit(day, EventKind.UNRESOLVED, answer_id=pending.answer_id, request_id=req.request_id,
                          references=len(values))
                return
            resolved = self.model.resolve_escalation(pending, values, day)
            self._finalize_event(day, req, "escalation", resolved, truth, None,
                                 answer_id=pending.answer_id, proposer_id=pending.source_id,
                                 proposed_at=pending.proposed_at, reference_values=values)
            overturned = resolved != pending.value
            self._reputation(day, pending.source_id,
                             ReputationEvent.OVERTURNED if overturned else ReputationEvent.SUCCESS)

    def _audit(self, day: int, sid: str, month: int):
        subject = self.model.sources[sid]
        if not subject.active:
            return
        probe = f"probe/{month}/{sid}"
        truth = ground_truth(self.seed, probe)
        refs = [s for s in sorted(self.model.active_sources(), key=lambda s: s.id) if s.id != sid]
        if len(refs) < MIN_REFERENCES:
            self.emit(day, EventKind.AUDIT, subject_id=sid, probe_query=probe, verdict="Skipped",
                      reason="TooFewReferences")
            return
        # a probe is asked of everyone at once, so nobody sees another's answer
        hidden = self.visible
        self.visible = {}
        try:
            if self.answer(subject, probe, truth, day) is None:
                self.emit(day, EventKind.AUDIT, subject_id=sid, probe_query=probe, verdict="NoAnswer")
                return
            def ask(source, query, t):
                a = self.answer(source, query, truth, t)
                return None if a is None else a.value
            values = [v for v in (ask(r, probe, day) for r in refs) if v is not None]
            if len(values) < MIN_REFERENCES:
                self.emit(day, EventKind.AUDIT, subject_id=sid, probe_query=probe, verdict="Skipped",
                          reason="TooFewReferences")
                return
            report = self.model.croesus_audit(subject, refs, probe, day, self.config.tolerance, ask)
        finally:
            self.visible = hidden
        self.emit(day, EventKind.AUDIT, **report.to_dict())
        self.live.audits += 1
        if report.verdict is AuditVerdict.MANIPULATION_DETECTED:
            self.live.detections += 1
            # croesus_audit already expelled the subject in the model; log it
            invalidated = sorted(a.answer_id for a in self.model.answers.values()
                                 if a.source_id == sid and a.state is AnswerState.INVALIDATED)
            self.emit(day, EventKind.EXPEL, source_id=sid, reason="audit", invalidated=invalidated)
            self.live.expel_day[sid] = day
            self.live.expelled.append(sid)

    def _urn_consultation(self, day: int, pet: PetitionerConfig, cid: str):
        rng = stream_rng(self.seed, f"urn/{cid}")
        pair, openings = urn.make_urn_pair(f"{cid}:gold".encode(), f"{cid}:silver".encode(), rng, day)
        self.emit(day, EventKind.URN_COMMIT, consultation_id=cid, petitioner_id=pet.id,
                  gold=pair.gold.hex(), silver=pair.silver.hex())
        atts = [urn.attest(wid, secret, pair, day) for wid, secret in self.witness_secrets.items()]
        valid = urn.count_valid_attestations(atts, self.witness_secrets, pair)
        if valid < self.config.witness_quorum:
            self.emit(day, EventKind.URN_REVEAL, consultation_id=cid, verdict=urn.Verdict.REJECTED.value,
                      reason="attestation quorum not met", attestations=valid)
            return
        selection = urn.select(pair, self.beacon_rng.getrandbits(64))
        self.emit(day, EventKind.URN_SELECT, consultation_id=cid, chosen=selection.chosen.value,
                  beacon_seed=selection.beacon_seed, draw=selection.draw, attestations=valid)
        opening = openings.side(selection.chosen)
        outcome = urn.reveal_verify(pair, selection, opening.message, opening.nonce)
        self.emit(day, EventKind.URN_REVEAL, consultation_id=cid, verdict=outcome.verdict.value,
                  expected=outcome.expected.hex(), recomputed=outcome.recomputed.hex())
        self.live.urns += 1
        self.live.urns_ok += outcome.accepted

    # run ---------------------------------------------------------------------

    def run(self) -> tuple[MetricsReport, list[Event]]:
        self._setup()
        while self._agenda:
            day, seq, action, args = heapq.heappop(self._agenda)
            key = (day, seq)
            if key <= self._last_key:
                raise AssertionError(f"agenda out of order: {key} after {self._last_key}")
            self._last_key = key
            action(*args)
        return self._live_report(), self.log

    def _live_report(self) -> MetricsReport:
        live = self.live
        latencies = [live.expel_day[s] - d for s, d in live.first_corrupt.items()
                     if s in live.expel_day and live.expel_day[s] >= d]
        return MetricsReport(
            run_seed=self.seed,
            categories={
                c: {
                    "submitted": live.submitted[c],
                    "served": live.served[c],
                    "mean_latency_days": live.latency[c] / live.served[c] if live.served[c] else None,
                }
                for c in live.submitted
            },
            finalized_answers=live.finalized,
            manipulated_answers=live.manipulated,
            manipulation_success_rate=_rate(live.manipulated, live.finalized),
            corrupted_sources=len(live.first_corrupt),
            detected_sources=len(latencies),
            detection_rate=_rate(len(latencies), len(live.first_corrupt)),
            mean_detection_latency_days=sum(latencies) / len(latencies) if latencies else None,
            expulsions=len(live.expelled),
            expelled_ids=list(live.expelled),
            fee_revenue=live.fee,
            proposals=live.proposals,
            freeloader_copy_rate=_rate(live.copies, live.proposals),
            lazy_constant_rate=_rate(live.constants, live.proposals),
            audits=live.audits,
            audit_detections=live.detections,
            sybil_attempts=live.sybil_attempts,
            sybil_accepted=live.sybil_accepted,
            urn_consultations=live.urns,
            urn_accepted=live.urns_ok,
            post_expulsion_acceptances=live.post_expulsion,
        )


def run(config: ScenarioConfig) -> tuple[MetricsReport, list[Event]]:
    return Simulation(config).run()


# --------------------------------------------------------------------------
# replication

def _run_report(config_dict: dict) -> MetricsReport:
    report, _ = run(_parse_config(config_dict))
    return report


def _flatten(report: MetricsReport) -> dict[str, float | None]:
    flat: dict[str, float | None] = {name: getattr(report, name) for name in SCALAR_METRICS}
    for cat, stats in report.categories.items():
        flat[f"categories.{cat}.submitted"] = stats["submitted"]
        flat[f"categories.{cat}.served"] = stats["served"]
        flat[f"categories.{cat}.mean_latency_days"] = stats["mean_latency_days"]
    return flat


def summarize(reports: Sequence[MetricsReport]) -> dict[str, dict]:
    """Mean and sample standard deviation of every scalar metric.

    Metrics that are undefined in some runs (``None``) are averaged over the
    runs where they are defined; ``n`` records how many that was.
    """
    rows = [_flatten(r) for r in reports]
    out = {}
    for name in rows[0]:
        values = [row[name] for row in rows if row[name] is not None]
        if not values:
            out[name] = {"mean": None, "std": None, "n": 0}
            continue
        mean = math.fsum(values) / len(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        out[name] = {"mean": mean, "std": std, "n": len(values)}
    return out


def replicate(config: ScenarioConfig, n_runs: int, workers: int = 1) -> dict:
    """Run ``n_runs`` copies with seeds ``seed, seed+1, ...`` and summarise."""
    if not isinstance(n_runs, int) or n_runs < 1:
        raise InvalidConfig([("n_runs", "must be a positive integer")])
    if config.seed + n_runs > urn.MAX_SEED:
        raise InvalidConfig([("$.seed", "seed range exceeds 64 bits")])
    base = config.to_dict()
    configs = [{**base, "seed": config.seed + i} for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_report, configs, chunksize=max(1, n_runs // (workers * 4))))
    else:
        reports = [_run_report(c) for c in configs]
    return {
        "n_runs": n_runs,
        "base_seed": config.seed,
        "metrics": summarize(reports),
    }


def report_to_csv(report: MetricsReport) -> str:
    """Flat ``metric,value`` summary of one report."""
    lines = ["metric,value"]
    for name, value in _flatten(report).items():
        lines.append(f"{name},{'' if value is None else value}")
    return "\n".join(lines) + "\n"
