"""Trust-model state machine for attributable oracle sources.

Covers source registration against a whitelist, optimistic answers with a
dispute window, scheduled cross-checks against reference sources (audits),
permanent expulsion, reputation bookkeeping, consultation scheduling and
category-based routing. There is no stake and nothing is ever slashed:
accountability is reputational, plus removal on proven manipulation.
"""
from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

from .querylex import QueryCategory, tokenize

EPSILON = 1e-9
REPUTATION_CAP = 10.0
SUCCESS_MULTIPLIER = 1.01
OVERTURN_MULTIPLIER = 0.8
MIN_REFERENCES = 3


class TrustModelError(Exception):
    pass


class NotWhitelisted(TrustModelError):
    pass


class DuplicateIdentity(TrustModelError):
    pass


class IdentityExpelled(TrustModelError):
    pass


class SourceExpelled(TrustModelError):
    pass


class SourceInactive(TrustModelError):
    """The source is not registered with this model."""


class WindowClosed(TrustModelError):
    pass


class AlreadyResolved(TrustModelError):
    pass


class FeeUnpaid(TrustModelError):
    pass


class TooFewReferences(TrustModelError):
    pass


class SourceStatus(str, Enum):
    ACTIVE = "Active"
    EXPELLED = "Expelled"


class AnswerState(str, Enum):
    PENDING = "Pending"
    FINALIZED = "Finalized"
    ESCALATED = "Escalated"
    INVALIDATED = "Invalidated"


class RoutingDecision(str, Enum):
    STANDARD_PATH = "StandardPath"
    LOW_RELIABILITY_FLAG = "LowReliabilityFlag"
    REJECT = "Reject"
    COMPUTE_PATH = "ComputePath"


class AuditVerdict(str, Enum):
    PASS = "Pass"
    MANIPULATION_DETECTED = "ManipulationDetected"


class ReputationEvent(str, Enum):
    SUCCESS = "Success"
    OVERTURNED = "Overturned"


class Tier(str, Enum):
    PROMANTEIA = "Promanteia"
    STANDARD = "Standard"


class Mechanism(str, Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"


@dataclass
class OracleSource:
    id: str
    domain_tags: frozenset[str] = frozenset()
    status: SourceStatus = SourceStatus.ACTIVE
    reputation: float = 1.0
    bias: float = 0.0

    @property
    def active(self) -> bool:
        return self.status is SourceStatus.ACTIVE

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain_tags": sorted(self.domain_tags),
            "status": self.status.value,
            "reputation": self.reputation,
            "bias": self.bias,
        }


@dataclass
class PendingAnswer:
    query_id: str
    source_id: str
    value: Any
    proposed_at: int
    window_end: int
    disputed: bool = False
    state: AnswerState = AnswerState.PENDING
    answer_id: int = 0
    challenger_id: str | None = None
    disputed_at: int | None = None
    finalized_at: int | None = None
    resolution: Any = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state"] = self.state.value
        return d


@dataclass(frozen=True)
class AuditReport:
    subject_id: str
    probe_query: str
    scheduled_time: int
    subject_value: float
    reference_values: tuple[float, ...]
    reference_median: float
    deviation: float
    verdict: AuditVerdict
    tolerance: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference_values"] = list(self.reference_values)
        d["verdict"] = self.verdict.value
        return d


# --------------------------------------------------------------------------
# routing

ROUTING_TABLE: dict[QueryCategory, RoutingDecision] = {
    QueryCategory.DISCERNIBLE: RoutingDecision.STANDARD_PATH,
    QueryCategory.SANCTIONED: RoutingDecision.STANDARD_PATH,
    QueryCategory.AMBIGUOUS: RoutingDecision.LOW_RELIABILITY_FLAG,
    QueryCategory.RECONDITE: RoutingDecision.LOW_RELIABILITY_FLAG,
    QueryCategory.NON_EVENT: RoutingDecision.REJECT,
    QueryCategory.COMPUTATIONAL: RoutingDecision.COMPUTE_PATH,
}


def route(query: str, category: QueryCategory) -> RoutingDecision:
    """Routing depends on the category alone; ``query`` is carried for logs."""
    return ROUTING_TABLE[QueryCategory(category)]


def servable(decision: RoutingDecision) -> bool:
    return decision in (RoutingDecision.STANDARD_PATH, RoutingDecision.LOW_RELIABILITY_FLAG)


# --------------------------------------------------------------------------
# calendar and scheduling

@dataclass(frozen=True)
class Calendar:
    """Day-granular calendar. Days are 0-based absolute indices; months and
    days of the month are 1-based, as is ``consultation_day``."""

    month_length: int = 30
    consultation_day: int = 7
    off_season: frozenset[int] = frozenset({10, 11, 12})
    months_per_year: int = 12

    def __post_init__(self):
        object.__setattr__(self, "off_season", frozenset(self.off_season))
        if self.month_length < 1:
            raise ValueError("month_length must be positive")
        if not 1 <= self.consultation_day <= self.month_length:
            raise ValueError("consultation_day must fall inside the month")
        if any(not 1 <= m <= self.months_per_year for m in self.off_season):
            raise ValueError("off_season months must be within the year")
        if len(self.off_season) >= self.months_per_year:
            raise ValueError("at least one month must be in season")

    def month_of(self, day: int) -> int:
        return (day // self.month_length) % self.months_per_year + 1

    def day_of_month(self, day: int) -> int:
        return day % self.month_length + 1

    def month_start(self, day: int) -> int:
        return day - day % self.month_length

    def is_active_day(self, day: int) -> bool:
        return self.month_of(day) not in self.off_season

    def is_consultation_day(self, day: int) -> bool:
        return self.is_active_day(day) and self.day_of_month(day) == self.consultation_day

    def next_active_day(self, now: int) -> int:
        day = now
        while not self.is_active_day(day):
            day = self.month_start(day) + self.month_length
        return day

    def next_consultation_day(self, now: int) -> int:
        start = self.month_start(now)
        day = start + self.consultation_day - 1
        if day < now:
            day += self.month_length
        while not self.is_active_day(day):
            day += self.month_length
        return day

    def to_dict(self) -> dict:
        return {
            "month_length": self.month_length,
            "consultation_day": self.consultation_day,
            "off_season": sorted(self.off_season),
            "months_per_year": self.months_per_year,
        }


@dataclass(frozen=True)
class FeeSchedule:
    base: float = 1.0
    promanteia: float = 3.0
    low_reliability_surcharge: float = 2.0

    def required(self, category: QueryCategory, tier: Tier) -> float:
        fee = self.promanteia if Tier(tier) is Tier.PROMANTEIA else self.base
        if route("", category) is RoutingDecision.LOW_RELIABILITY_FLAG:
            fee *= self.low_reliability_surcharge
        return fee


BINARY_OPENERS = frozenset({
    "is", "are", "was", "were", "will", "shall", "should", "can", "could",
    "do", "does", "did", "has", "have", "had", "would", "may", "must",
})


def is_binary_question(query: str) -> bool:
    """Yes/no questions open with an auxiliary verb ("Is it better...?")."""
    tokens = tokenize(query)
    return bool(tokens) and tokens[0] in BINARY_OPENERS


@dataclass
class ConsultationRequest:
    petitioner_id: str
    query: str
    category: QueryCategory
    tier: Tier = Tier.STANDARD
    fee_paid: float = 0.0
    submitted_at: int = 0
    binary: bool | None = None
    request_id: str = ""

    @property
    def mechanism(self) -> Mechanism:
        binary = is_binary_question(self.query) if self.binary is None else self.binary
        return Mechanism.SIMPLE if binary else Mechanism.COMPLEX


@dataclass(frozen=True, order=True)
class ServiceSlot:
    """Ordering of slots is service order: day, tier, submission time,
    petitioner id, then arrival sequence."""

    day: int
    tier_rank: int
    submitted_at: int
    petitioner_id: str
    sequence: int = 0
    mechanism: Mechanism = field(default=Mechanism.SIMPLE, compare=False)
    request_id: str = field(default="", compare=False)


def schedule(request: ConsultationRequest, now: int, calendar: Calendar,
             fees: FeeSchedule | None = None, sequence: int = 0) -> ServiceSlot:
    fees = fees or FeeSchedule()
    required = fees.required(request.category, request.tier)
    if request.fee_paid + EPSILON < required:
        raise FeeUnpaid(f"fee {request.fee_paid} below required {required}")
    mechanism = request.mechanism
    if mechanism is Mechanism.SIMPLE:
        day = calendar.next_active_day(now)
    else:
        day = calendar.next_consultation_day(now)
    tier_rank = 0 if Tier(request.tier) is Tier.PROMANTEIA else 1
    return ServiceSlot(day, tier_rank, request.submitted_at, request.petitioner_id,
                       sequence, mechanism, request.request_id)


def service_order(slots: Iterable[ServiceSlot]) -> list[ServiceSlot]:
    return sorted(slots)


# --------------------------------------------------------------------------
# aggregation used by audits and dispute fallback

def reference_median(values: Sequence[float]) -> float:
    return statistics.median(values)


def plurality(values: Sequence[Any]) -> Any:
    """Most common value; ties go to the smallest by ``repr``."""
    counts = Counter(values)
    best = max(counts.values())
    return min((v for v, c in counts.items() if c == best), key=repr)


def resolve_values(values: Sequence[Any]) -> Any:
    if not values:
        raise TooFewReferences("no reference values")
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return reference_median(values)
    return plurality(values)


def audit_verdict(subject_value: float, reference_values: Sequence[float],
                  tolerance: float) -> tuple[float, float, AuditVerdict]:
    """Return ``(median, relative deviation, verdict)`` for one audit."""
    if len(reference_values) < MIN_REFERENCES:
        raise TooFewReferences(f"need {MIN_REFERENCES} references, got {len(reference_values)}")
    med = reference_median(reference_values)
    deviation = abs(subject_value - med) / max(abs(med), EPSILON)
    verdict = AuditVerdict.MANIPULATION_DETECTED if deviation > tolerance else AuditVerdict.PASS
    return med, deviation, verdict


# --------------------------------------------------------------------------
# state machine

Asker = Callable[[OracleSource, str, int], Any]


class TrustModel:
    """Single-writer registry of sources and their answers.

    In attributable mode (the default) only whitelisted identities can
    register. An expelled identity can never register again.
    """

    def __init__(self, whitelist: Iterable[str] | None = None, attributable: bool = True):
        self.whitelist = frozenset(whitelist or ())
        self.attributable = attributable
        self.sources: dict[str, OracleSource] = {}
        self.answers: dict[int, PendingAnswer] = {}
        self.expelled_ids: set[str] = set()
        self._next_answer_id = 1

    # registration -----------------------------------------------------------

    def register_source(self, id: str, domain_tags: Iterable[str] = (),
                        whitelist: Iterable[str] | None = None, bias: float = 0.0) -> OracleSource:
        allowed = self.whitelist if whitelist is None else frozenset(whitelist)
        if id in self.expelled_ids:
            raise IdentityExpelled(id)
        if id in self.sources:
            raise DuplicateIdentity(id)
        if self.attributable and id not in allowed:
            raise NotWhitelisted(id)
        source = OracleSource(id, frozenset(domain_tags), bias=bias)
        self.sources[id] = source
        return source

    def source(self, source: OracleSource | str) -> OracleSource:
        sid = source if isinstance(source, str) else source.id
        try:
            return self.sources[sid]
        except KeyError:
            raise SourceInactive(sid) from None

    def active_sources(self) -> list[OracleSource]:
        return [s for s in self.sources.values() if s.active]

    # optimistic answers -----------------------------------------------------

    def propose(self, query_id: str, source: OracleSource | str, value: Any,
                now: int, dispute_window: int) -> PendingAnswer:
        src = self.source(source)
        if not src.active:
            raise SourceExpelled(src.id)
        if dispute_window < 0:
            raise ValueError("dispute window must be non-negative")
        answer = PendingAnswer(query_id, src.id, value, now, now + dispute_window,
                               answer_id=self._next_answer_id)
        self._next_answer_id += 1
        self.answers[answer.answer_id] = answer
        return answer

    def dispute(self, pending: PendingAnswer, challenger_id: str, now: int) -> PendingAnswer:
        if pending.state is not AnswerState.PENDING:
            raise AlreadyResolved(f"answer {pending.answer_id} is {pending.state.value}")
        if now >= pending.window_end:
            raise WindowClosed(f"window closed at {pending.window_end}")
        pending.disputed = True
        pending.state = AnswerState.ESCALATED
        pending.challenger_id = challenger_id
        pending.disputed_at = now
        return pending

    def finalize(self, pending: PendingAnswer, now: int) -> PendingAnswer:
        """Finalize if the window has elapsed undisputed.

        Anything else returns the answer untouched; a ``Pending`` state on
        return means "not yet final".
        """
        if (pending.state is AnswerState.PENDING and not pending.disputed
                and now >= pending.window_end):
            pending.state = AnswerState.FINALIZED
            pending.finalized_at = now
        return pending

    def resolve_escalation(self, pending: PendingAnswer, reference_values: Sequence[Any],
                           now: int | None = None) -> Any:
        """Settle an escalated answer by median (numeric) or plurality vote."""
        if pending.state is not AnswerState.ESCALATED:
            raise AlreadyResolved(f"answer {pending.answer_id} is not escalated")
        if pending.resolution is not None:
            raise AlreadyResolved(f"answer {pending.answer_id} already resolved")
        if len(reference_values) < MIN_REFERENCES:
            raise TooFewReferences(f"need {MIN_REFERENCES} references, got {len(reference_values)}")
        pending.resolution = resolve_values(reference_values)
        pending.finalized_at = now
        return pending.resolution

    # audits and expulsion ---------------------------------------------------

    def croesus_audit(self, subject: OracleSource | str, references: Sequence[OracleSource | str],
                      probe: str, scheduled_time: int, tolerance: float, ask: Asker) -> AuditReport:
        """Ask the subject and every reference the same probe at the same time.

        ``ask(source, probe, time)`` returns the source's answer, or ``None``
        if it abstains; abstaining references are left out of the median.
        A detected manipulation expels the subject.
        """
        subj = self.source(subject)
        refs = [self.source(r) for r in references if (r if isinstance(r, str) else r.id) != subj.id]
        if len(refs) < MIN_REFERENCES:
            raise TooFewReferences(f"need {MIN_REFERENCES} references, got {len(refs)}")
        subject_value = ask(subj, probe, scheduled_time)
        if subject_value is None:
            raise ValueError(f"subject {subj.id} gave no answer to the probe")
        values = tuple(v for v in (ask(r, probe, scheduled_time) for r in refs) if v is not None)
        med, deviation, verdict = audit_verdict(subject_value, values, tolerance)
        report = AuditReport(subj.id, probe, scheduled_time, subject_value, values,
                             med, deviation, verdict, tolerance)
        if verdict is AuditVerdict.MANIPULATION_DETECTED:
            self.expel(subj)
        return report

    def expel(self, source: OracleSource | str) -> OracleSource:
        src = self.source(source)
        src.status = SourceStatus.EXPELLED
        self.expelled_ids.add(src.id)
        for answer in self.answers.values():
            if answer.source_id == src.id and answer.state in (AnswerState.PENDING, AnswerState.ESCALATED):
                answer.state = AnswerState.INVALIDATED
        return src

    def update_reputation(self, source: OracleSource | str, event: ReputationEvent) -> OracleSource:
        src = self.source(source)
        if not src.active:
            raise SourceExpelled(src.id)
        if ReputationEvent(event) is ReputationEvent.SUCCESS:
            src.reputation = min(src.reputation * SUCCESS_MULTIPLIER, REPUTATION_CAP)
        else:
            src.reputation *= OVERTURN_MULTIPLIER
        return src

    # checkpointing ----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "attributable": self.attributable,
            "whitelist": sorted(self.whitelist),
            "sources": [s.to_dict() for s in self.sources.values()],
            "answers": [a.to_dict() for a in self.answers.values()],
            "expelled_ids": sorted(self.expelled_ids),
            "next_answer_id": self._next_answer_id,
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> TrustModel:
        model = cls(data["whitelist"], data["attributable"])
        for s in data["sources"]:
            model.sources[s["id"]] = OracleSource(
                s["id"], frozenset(s["domain_tags"]), SourceStatus(s["status"]),
                s["reputation"], s["bias"])
        for a in data["answers"]:
            a = dict(a)
            a["state"] = AnswerState(a["state"])
            answer = PendingAnswer(**a)
            model.answers[answer.answer_id] = answer
        model.expelled_ids = set(data["expelled_ids"])
        model._next_answer_id = data["next_answer_id"]
        return model
