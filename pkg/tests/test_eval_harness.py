import itertools
import unicodedata

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mailform.benchmark import FIELDS, PUBLISHED_ROWS, bundled_dir, engineer_observed, gold_entries, write_benchmark
from mailform.errors import ParameterError, ScoringError
from mailform.eval_harness import (
    CostParams,
    GoldKey,
    Outcome,
    cost_model,
    load_runs,
    load_schema,
    render_cost,
    render_table,
    score_batch,
    score_plan,
)
from mailform.form_model import FieldKind, FormField, FormSchema


def schema_of(names):
    return FormSchema("d", tuple(FormField(n, n, FieldKind.TEXT) for n in names))


def oracle(observed, expected):
    """Per-field rule, written independently of the implementation."""
    if observed is None or observed.strip() == "":
        return "Blank"
    if expected is None:
        return "Incorrect"
    fold = lambda s: unicodedata.normalize("NFC", unicodedata.normalize("NFC", s.strip()).casefold())  # noqa: E731
    return "Correct" if fold(observed) == fold(expected) else "Incorrect"


def exhaustive_mismatches(max_fields=4):
    mismatches = checked = 0
    for n in range(1, max_fields + 1):
        names = [f"f{i}" for i in range(n)]
        schema = schema_of(names)
        for gold_pattern in itertools.product([None, "Valor"], repeat=n):
            gold = GoldKey(dict(zip(names, gold_pattern)))
            choices = [[None, g, "WRONG"] for g in gold_pattern]
            for obs_values in itertools.product(*choices):
                observed = dict(zip(names, obs_values))
                report = score_plan(observed, gold, schema)
                want = [oracle(o, g) for o, g in zip(obs_values, gold_pattern)]
                got = [report.per_field[k].value for k in names]
                counts = (want.count("Correct"), want.count("Incorrect"), want.count("Blank"))
                checked += 1
                if got != want or report.counts != counts:
                    mismatches += 1
    return mismatches, checked


def test_brute_force_equivalence():
    mismatches, checked = exhaustive_mismatches()
    # 2^n gold patterns times 3^n observations, n = 1..4
    assert checked == 6 + 36 + 216 + 1296
    assert mismatches == 0


@pytest.mark.parametrize("observed,expected,outcome", [
    (" maria ", "MARIA", "Correct"),
    ("Código", "CÓDIGO", "Correct"),
    ("Código", "Código", "Correct"),
    ("MARIA", None, "Incorrect"),
    ("", None, "Blank"),
    ("   ", "MARIA", "Blank"),
    ("MARIA G", "MARIA", "Incorrect"),
])
def test_matching_convention(observed, expected, outcome):
    report = score_plan({"a": observed}, GoldKey({"a": expected}), schema_of(["a"]))
    assert report.per_field["a"].value == outcome == oracle(observed, expected)


def test_missing_observation_is_blank():
    report = score_plan({}, GoldKey({"a": "x", "b": None}), schema_of(["a", "b"]))
    assert report.counts == (0, 0, 2)


def test_mismatched_gold_or_stray_keys():
    with pytest.raises(ScoringError):
        score_plan({}, GoldKey({"a": "x"}), schema_of(["a", "b"]))
    with pytest.raises(ScoringError):
        score_plan({"zz": "1"}, GoldKey({"a": "x"}), schema_of(["a"]))


names4 = st.lists(st.sampled_from(["a", "b", "c", "d", "e", "f"]), min_size=1, max_size=6, unique=True)


@st.composite
def gold_and_observed(draw):
    names = draw(names4)
    gold = {n: draw(st.one_of(st.none(), st.text(min_size=1, max_size=4))) for n in names}
    observed = {n: draw(st.one_of(st.none(), st.text(max_size=4), st.just(gold[n] or "x"))) for n in names}
    return names, gold, observed


@given(st.lists(gold_and_observed(), min_size=1, max_size=5))
def test_row_sum(batch):
    for names, gold, observed in batch:
        r = score_plan(observed, GoldKey(gold), schema_of(names))
        assert r.correct + r.incorrect + r.blank == len(names) == r.total


@given(gold_and_observed())
def test_gold_self_score(case):
    names, gold, _ = case
    g = GoldKey(gold)
    r = score_plan(gold, g, schema_of(names))
    expected_count = sum(1 for v in gold.values() if v is not None and v.strip())
    assert r.incorrect == 0
    assert r.correct == expected_count
    assert r.blank == len(names) - expected_count


@given(gold_and_observed(), st.data())
def test_flip_blank_to_expected(case, data):
    names, gold, observed = case
    candidates = [n for n in names if gold[n] is not None and gold[n].strip()
                  and (observed[n] is None or not observed[n].strip())]
    if not candidates:
        return
    n = data.draw(st.sampled_from(candidates))
    schema, g = schema_of(names), GoldKey(gold)
    before = score_plan(observed, g, schema)
    after = score_plan({**observed, n: gold[n]}, g, schema)
    assert after.correct == before.correct + 1
    assert after.blank == before.blank - 1
    assert after.incorrect == before.incorrect


# --------------------------------------------------------------------------- #
# bundled benchmark

def test_benchmark_shape():
    assert len(FIELDS) == 29
    gold = GoldKey(gold_entries())
    assert len(gold.expected) == 17 and len(gold.expected_blank) == 12
    kinds = {f.kind for f in FIELDS}
    assert kinds == set(FieldKind)


def test_bundled_table_matches_published_counts():
    base = bundled_dir()
    schema = load_schema(base / "form.pdf")
    rows = dict(score_batch(load_runs(base / "runs"), GoldKey.load(base / "gold.json"), schema))
    assert len(schema) == 29
    assert {label: r.counts for label, r in rows.items()} == {lbl: (c, i, b) for lbl, c, i, b in PUBLISHED_ROWS}
    assert all(r.total == 29 for r in rows.values())


def test_schema_json_and_pdf_agree():
    base = bundled_dir()
    assert load_schema(base / "schema.json").fields == load_schema(base / "form.pdf").fields


def test_bundled_data_is_reproducible(tmp_path):
    write_benchmark(tmp_path)
    base = bundled_dir()
    for rel in ["form.pdf", "schema.json", "gold.json"] + [f"runs/{lbl}.json" for lbl, *_ in PUBLISHED_ROWS]:
        assert (tmp_path / rel).read_bytes() == (base / rel).read_bytes(), rel
    assert sorted(p.name for p in (base / "runs").glob("*.json")) == \
        sorted(p.name for p in (tmp_path / "runs").glob("*.json"))


@pytest.mark.parametrize("label,c,i,b", PUBLISHED_ROWS)
def test_engineered_plans_only_use_schema_values(label, c, i, b):
    plan = engineer_observed(label, c, i, b)
    assert list(plan) == [f.name for f in FIELDS]
    for f in FIELDS:
        if f.kind is FieldKind.CHOICE and plan[f.name] is not None:
            assert plan[f.name] in f.options


def test_unreachable_counts_rejected():
    with pytest.raises(ValueError):
        engineer_observed("x", 18, 0, 11)
    with pytest.raises(ValueError):
        engineer_observed("x", 10, 10, 10)


def test_sort_and_render():
    rows = score_batch([("b", {"a": "x"}), ("a", {"a": "x"}), ("c", {})], GoldKey({"a": "x"}), schema_of(["a"]))
    assert [lbl for lbl, _ in rows] == ["a", "b", "c"]
    table = render_table(rows).splitlines()
    assert table[0].split() == ["Model", "Correct", "Incorrect", "Blank"]
    assert table[2].split() == ["a", "1", "0", "0"]
    assert render_table([]).splitlines()[0].startswith("Model")


def test_load_runs_accepts_plan_wrapper(tmp_path):
    (tmp_path / "m.json").write_text('{"entries": {"a": "x"}, "warnings": []}')
    assert load_runs(tmp_path) == [("m", {"a": "x"})]


@pytest.mark.parametrize("content", ["{not json", '["a"]', '{"a": 1}'])
def test_load_runs_rejects_malformed(tmp_path, content):
    (tmp_path / "bad.json").write_text(content)
    with pytest.raises(ScoringError, match="bad.json"):
        load_runs(tmp_path)


def test_outcome_values():
    assert [o.value for o in Outcome] == ["Correct", "Incorrect", "Blank"]


# --------------------------------------------------------------------------- #
# cost model

def test_reference_inputs():
    r = cost_model(CostParams())
    assert r.hourly_wage_eur == pytest.approx(40000 / 2080)
    assert round(r.hourly_wage_eur, 2) == 19.23
    assert round(r.manual_cost_eur, 2) == 4.81
    assert round(r.system_cost_eur, 2) == 1.70
    assert round(r.savings_eur, 2) == 3.11
    assert round(r.savings_pct * 100, 1) == 64.6
    assert r.to_dict(rounded=True) == {"hourly_wage_eur": 19.23, "manual_cost_eur": 4.81, "system_cost_eur": 1.7,
                                       "savings_eur": 3.11, "savings_pct": 64.6}


def test_free_system_limit():
    r = cost_model(CostParams(supervision_minutes=0, cloud_cost_eur=0))
    assert r.system_cost_eur == 0 and r.savings_pct == 1.0


def test_twenty_minutes_manual():
    r = cost_model(CostParams(manual_minutes=20))
    assert r.manual_cost_eur == pytest.approx(20 / 60 * 40000 / 2080)
    assert round(r.manual_cost_eur, 2) == 6.41


@pytest.mark.parametrize("kw", [dict(hours_per_week=0), dict(weeks_per_year=-1), dict(annual_salary_eur=0),
                                dict(manual_minutes=0), dict(supervision_minutes=-1), dict(cloud_cost_eur=float("nan"))])
def test_bad_parameters(kw):
    with pytest.raises(ParameterError):
        cost_model(CostParams(**kw))


positive = st.floats(0.01, 1e6, allow_nan=False, allow_infinity=False)
nonneg = st.floats(0, 1e4, allow_nan=False, allow_infinity=False)


@given(positive, st.floats(1, 168), st.floats(1, 53), st.floats(0.1, 600), nonneg, nonneg)
def test_cost_identities(salary, hours, weeks, manual, supervision, cloud):
    p = CostParams(salary, hours, weeks, manual, supervision, cloud)
    r = cost_model(p)
    e = r.exact
    assert e["savings_eur"] + e["system_cost_eur"] == e["manual_cost_eur"]
    assert r.savings_eur == float(e["savings_eur"]) and r.manual_cost_eur == float(e["manual_cost_eur"])
    more_sup = cost_model(CostParams(salary, hours, weeks, manual, supervision + 1, cloud))
    more_cloud = cost_model(CostParams(salary, hours, weeks, manual, supervision, cloud + 0.5))
    assert more_sup.system_cost_eur > r.system_cost_eur
    assert more_cloud.system_cost_eur > r.system_cost_eur
    assert more_sup.savings_eur < r.savings_eur and more_cloud.savings_eur < r.savings_eur


def test_render_cost():
    text = render_cost(cost_model(CostParams()), CostParams())
    assert "Manual Completion" in text and "4.81" in text and "1.70" in text and "64.6%" in text
