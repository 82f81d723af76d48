import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from oraclesim import sim
from oraclesim.sim import AdversaryKind, EventKind, ScenarioConfig
from oraclesim.trustmodel import AuditVerdict, SourceStatus, TrustModel

from conftest import SCENARIOS

NAMES = ["honest", "briber", "sybil", "open_network", "reporters"]


def scenario(name: str) -> ScenarioConfig:
    return sim.load_scenario(str(SCENARIOS / f"{name}.json"))


@pytest.fixture(scope="module")
def runs():
    return {name: sim.run(scenario(name)) for name in NAMES}


def minimal(**overrides) -> dict:
    base = {
        "duration_days": 90,
        "seed": 5,
        "sources": [{"id": s} for s in ("a", "b", "c", "d")],
        "petitioners": [{"id": "p", "queries_per_month": 3}],
    }
    base.update(overrides)
    return base


# configuration -----------------------------------------------------------------

def test_bundled_scenarios_parse():
    for name in NAMES:
        cfg = scenario(name)
        assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.update(bogus=1), "$.bogus"),
    (lambda d: d.update(duration_days=0), "$.duration_days"),
    (lambda d: d.update(seed=-1), "$.seed"),
    (lambda d: d["sources"].append({"id": "a"}), "$.sources[4].id"),
    (lambda d: d["sources"][0].update(bias="high"), "$.sources[0].bias"),
    (lambda d: d["petitioners"][0].update(tier="Gold"), "$.petitioners[0].tier"),
    (lambda d: d.update(adversaries=[{"kind": "Briber", "parameters": {"target": "a", "from_day": 1}}]),
     "$.adversaries[0].parameters.to_day"),
    (lambda d: d.update(adversaries=[{"kind": "Dragon", "parameters": {}}]), "$.adversaries[0].kind"),
    (lambda d: d.update(tolerance=-0.1), "$.tolerance"),
])
def test_invalid_config_paths(mutate, path):
    data = minimal()
    mutate(data)
    with pytest.raises(sim.InvalidConfig) as exc:
        ScenarioConfig.from_dict(data)
    assert path in [p for p, _ in exc.value.errors]


def test_invalid_config_collects_every_error():
    data = minimal(bogus=1, duration_days=0, seed=-3)
    with pytest.raises(sim.InvalidConfig) as exc:
        ScenarioConfig.from_dict(data)
    assert {"$.bogus", "$.duration_days", "$.seed"} <= {p for p, _ in exc.value.errors}


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(sim.InvalidConfig):
        sim.load_scenario(str(tmp_path / "absent.json"))
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(sim.InvalidConfig):
        sim.load_scenario(str(tmp_path / "bad.json"))


# seeds and ground truth -----------------------------------------------------------

def test_derive_seed_is_stable():
    assert sim.derive_seed(7, "service") == sim.derive_seed(7, "service")
    assert sim.derive_seed(7, "service") != sim.derive_seed(7, "dispute")
    assert sim.derive_seed(7, "service") != sim.derive_seed(8, "service")
    assert 0 <= sim.derive_seed(0, "x") < 2**64


@given(st.integers(0, 2**63), st.text(max_size=20))
def test_ground_truth_range(seed, qid):
    assert 50.0 <= sim.ground_truth(seed, qid) <= 149.99


# adversary behaviour -------------------------------------------------------------

def test_briber_steps():
    params = {"target": "pythia", "bias": 30.0, "from_day": 30, "to_day": 180}
    rng = random.Random(0)
    assert sim.adversary_step(AdversaryKind.BRIBER, sim.WorldView(29), rng, params) == []
    assert sim.adversary_step(AdversaryKind.BRIBER, sim.WorldView(30), rng, params) == [sim.SetBias("pythia", 30.0)]
    assert sim.adversary_step(AdversaryKind.BRIBER, sim.WorldView(180), rng, params) == [sim.SetBias("pythia", 0.0)]


def test_sybil_identities_all_rejected_when_attributable():
    rng = random.Random(1)
    actions = sim.adversary_step(AdversaryKind.SYBIL, sim.WorldView(0, month_start=True), rng, {"n": 100})
    assert len(actions) == 100
    assert len({a.identity for a in actions}) == 100
    model = TrustModel(["pythia"])
    accepted = 0
    for a in actions:
        try:
            model.register_source(a.identity, a.domain_tags)
            accepted += 1
        except Exception:
            pass
    assert accepted == 0
    assert sim.adversary_step(AdversaryKind.SYBIL, sim.WorldView(3), rng, {"n": 100}) == []


def test_freeloader():
    rng = random.Random(0)
    nothing = sim.WorldView(5, question_id="q1", visible_answers={})
    assert sim.adversary_step(AdversaryKind.FREELOADER, nothing, rng) == [sim.Abstain()]
    other = sim.WorldView(5, question_id="q1", visible_answers={"q2": 80.0})
    assert sim.adversary_step(AdversaryKind.FREELOADER, other, rng) == [sim.Abstain()]
    seen = sim.WorldView(5, question_id="q1", visible_answers={"q1": 72.5})
    assert sim.adversary_step(AdversaryKind.FREELOADER, seen, rng) == [sim.Answer(72.5, "copy")]


def test_lazy_reporter_caught_by_audit():
    model = TrustModel(["idler", "a", "b", "c"])
    for sid in model.whitelist:
        model.register_source(sid)
    truth = 73.0

    def ask(source, probe, t):
        if source.id == "idler":
            (ans,) = sim.adversary_step(AdversaryKind.LAZY, sim.WorldView(t), random.Random(0), {"constant": 100.0})
            return ans.value
        return truth

    report = model.croesus_audit("idler", ["a", "b", "c"], "probe", 10, 0.01, ask)
    assert report.verdict is AuditVerdict.MANIPULATION_DETECTED
    assert model.sources["idler"].status is SourceStatus.EXPELLED


# whole runs ----------------------------------------------------------------------

def test_honest_run_has_no_manipulation(runs):
    report, log = runs["honest"]
    assert report.manipulation_success_rate == 0.0
    assert report.manipulated_answers == 0
    assert report.expulsions == 0
    assert report.finalized_answers > 0
    assert report.urn_consultations == report.urn_accepted > 0


def test_runs_are_deterministic():
    for name in NAMES:
        cfg = scenario(name)
        r1, log1 = sim.run(cfg)
        r2, log2 = sim.run(cfg)
        assert r1.to_json() == r2.to_json()
        assert sim.log_to_jsonl(log1) == sim.log_to_jsonl(log2)


def test_different_seeds_differ():
    cfg = scenario("honest")
    _, log1 = sim.run(cfg)
    _, log2 = sim.run(cfg.with_seed(cfg.seed + 1))
    assert sim.log_to_jsonl(log1) != sim.log_to_jsonl(log2)


def test_live_metrics_equal_log_replay(runs):
    for name, (report, log) in runs.items():
        assert sim.report_from_log(log, report.run_seed) == report, name


def test_log_jsonl_roundtrip(runs):
    report, log = runs["reporters"]
    restored = sim.log_from_jsonl(sim.log_to_jsonl(log))
    assert restored == log
    assert sim.report_from_log(restored, report.run_seed) == report


def test_log_order(runs):
    for report, log in runs.values():
        keys = [(e.at, e.seq) for e in log]
        assert keys == sorted(keys)
        assert [e.seq for e in log] == list(range(len(log)))


def test_fee_conservation(runs):
    for report, log in runs.values():
        paid = sum(e.payload["amount"] for e in log if e.kind is EventKind.FEE_PAID)
        refunded = sum(e.payload["amount"] for e in log if e.kind is EventKind.REFUND)
        assert report.fee_revenue == pytest.approx(paid - refunded)
        routed = {e.payload["request_id"]: e.payload["decision"] for e in log if e.kind is EventKind.ROUTE}
        refunds = {e.payload["request_id"] for e in log if e.kind is EventKind.REFUND}
        assert refunds == {r for r, d in routed.items() if d == "Reject"}


def test_no_finalize_before_window_end(runs):
    for report, log in runs.values():
        proposed = {e.payload["answer_id"]: e for e in log if e.kind is EventKind.PROPOSE}
        disputed = {e.payload["answer_id"] for e in log if e.kind is EventKind.DISPUTE}
        for e in log:
            if e.kind is EventKind.FINALIZE and e.payload["via"] != "compute":
                p = proposed[e.payload["answer_id"]]
                assert e.at >= p.at + scenario_window(log)
                if e.payload["via"] == "optimistic":
                    assert e.payload["answer_id"] not in disputed


def scenario_window(log) -> int:
    for e in log:
        if e.kind is EventKind.PROPOSE:
            return e.payload["window_end"] - e.at
    return 0


def test_no_acceptance_after_expulsion(runs):
    for report, log in runs.values():
        assert sim.accepted_after_expulsion(log) == []
        assert report.post_expulsion_acceptances == 0


def test_non_event_never_reaches_a_source(runs):
    for report, log in runs.values():
        non_event = {e.payload["request_id"] for e in log
                     if e.kind is EventKind.SUBMIT and e.payload["category"] == "NonEvent"}
        assert not any(e.payload["request_id"] in non_event for e in log if e.kind is EventKind.PROPOSE)


def test_sybil_attempts_rejected(runs):
    report, _ = runs["sybil"]
    assert report.sybil_attempts > 0
    assert report.sybil_accepted == 0


def test_open_network_admits_sybils(runs):
    report, _ = runs["open_network"]
    assert report.sybil_accepted == report.sybil_attempts > 0


def test_reporter_rates(runs):
    report, log = runs["reporters"]
    assert report.freeloader_copy_rate > 0
    assert report.lazy_constant_rate > 0
    copies = [e for e in log if e.kind is EventKind.PROPOSE and e.payload["mode"] == "copy"]
    assert all(e.payload["source_id"] == "copycat" for e in copies)


def test_briber_is_detected_somewhere():
    cfg = scenario("briber")
    detected = [sim.run(cfg.with_seed(s))[0].detection_rate for s in range(40)]
    assert 0 < sum(detected) < 40


@given(st.integers(0, 2**32))
@settings(max_examples=15, deadline=None)
def test_invariants_over_seeds(seed):
    report, log = sim.run(scenario("reporters").with_seed(seed))
    assert sim.report_from_log(log, seed) == report
    assert sim.accepted_after_expulsion(log) == []
    assert 0.0 <= report.manipulation_success_rate <= 1.0


# replication ---------------------------------------------------------------------

def test_replicate_single_run_matches_run():
    cfg = scenario("briber")
    summary = sim.replicate(cfg, 1)
    report, _ = sim.run(cfg)
    assert summary["n_runs"] == 1
    assert summary["metrics"]["finalized_answers"] == {"mean": report.finalized_answers, "std": 0.0, "n": 1}


def test_replicate_honest_has_zero_manipulation_variance():
    summary = sim.replicate(ScenarioConfig.from_dict(minimal()), 10)
    m = summary["metrics"]["manipulation_success_rate"]
    assert m["mean"] == 0.0 and m["std"] == 0.0


def test_replicate_workers_match_serial():
    cfg = scenario("briber")
    assert sim.replicate(cfg, 8, workers=2) == sim.replicate(cfg, 8)


def test_replicate_rejects_bad_counts():
    with pytest.raises(sim.InvalidConfig):
        sim.replicate(scenario("briber"), 0)


def test_report_to_csv(runs):
    report, _ = runs["honest"]
    text = sim.report_to_csv(report)
    assert text.startswith("metric,value\n")
    assert "manipulation_success_rate,0.0" in text
