import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copresence.psychometrics import (
    FACTOR_ITEMS,
    FACTORS,
    CommunitasScores,
    EdiResponse,
    FactorScores,
    Meq30Response,
    ResponseValidationError,
    cohort_from_reference_row,
    communitas_scores,
    compare_to_reference,
    complete_mte,
    data_path,
    factor_cohort_summaries,
    load_communitas_csv,
    load_edi_csv,
    load_factor_scores_csv,
    load_ics_csv,
    load_meq30_csv,
    load_reference_csv,
    score_edi,
    score_ics,
    score_meq30,
)
from copresence.stats import CohortSummary


def flat(value):
    return Meq30Response(tuple([value] * 30))


class TestFactorMapping:
    def test_partition_of_thirty(self):
        union = sorted(p for items in FACTOR_ITEMS.values() for p in items)
        assert union == list(range(1, 31))
        assert [len(FACTOR_ITEMS[f]) for f in FACTORS] == [3, 15, 6, 6]


class TestScoreMeq30:
    def test_all_zero(self):
        s = score_meq30(flat(0))
        assert s.as_dict() == {f: 0.0 for f in FACTORS}

    def test_all_max(self):
        s = score_meq30(flat(5))
        assert s.as_dict() == {f: 100.0 for f in FACTORS}

    def test_ineffability_only(self):
        items = [0] * 30
        for pos, v in zip(FACTOR_ITEMS["ineffability"], (3, 4, 5)):
            items[pos - 1] = v
        s = score_meq30(Meq30Response(tuple(items)))
        # mapping arithmetic: mean 4 of max 5 -> 80%
        assert s.ineffability == pytest.approx(80.0)
        assert s.mystical == 0.0 and s.positive_mood == 0.0 and s.transcendence == 0.0

    def test_out_of_range_item_names_index(self):
        items = [0] * 30
        items[14] = 6
        with pytest.raises(ResponseValidationError, match="item 15"):
            Meq30Response(tuple(items))

    @given(st.integers(min_value=0, max_value=29), st.integers(min_value=0, max_value=4))
    @settings(max_examples=120)
    def test_monotone_in_every_item(self, idx, base):
        items = [base] * 30
        low = score_meq30(Meq30Response(tuple(items)))
        items[idx] = base + 1
        high = score_meq30(Meq30Response(tuple(items)))
        for f in FACTORS:
            assert getattr(high, f) >= getattr(low, f)


class TestCompleteMte:
    def test_threshold_inclusive(self):
        assert complete_mte(FactorScores(60, 60, 60, 60)) is True

    def test_any_factor_below_fails(self):
        assert complete_mte(FactorScores(100, 59.9, 100, 100)) is False

    def test_rate_over_bundled_cohort(self):
        scores = load_factor_scores_csv(data_path("table_sm1.csv").read_text())
        n_complete = sum(1 for s in scores.values() if complete_mte(s))
        assert n_complete == 17
        assert round(100 * n_complete / len(scores)) == 29


class TestEdi:
    def test_all_zero(self):
        s = score_edi(EdiResponse(tuple([0.0] * 16)))
        assert (s.dissolution_mean, s.inflation_mean) == (0.0, 0.0)

    def test_even_positions_are_dissolution(self):
        items = [100.0 if i % 2 == 0 else 0.0 for i in range(1, 17)]
        s = score_edi(EdiResponse(tuple(items)))
        assert (s.dissolution_mean, s.inflation_mean) == (100.0, 0.0)

    def test_all_hundred(self):
        s = score_edi(EdiResponse(tuple([100.0] * 16)))
        assert (s.dissolution_mean, s.inflation_mean) == (100.0, 100.0)

    def test_range_validation(self):
        with pytest.raises(ResponseValidationError):
            EdiResponse(tuple([0.0] * 15 + [101.0]))


class TestIcs:
    @pytest.mark.parametrize("letter,score", [("a", 0), ("b", 1), ("f", 5), ("C", 2)])
    def test_letter_mapping(self, letter, score):
        assert score_ics(letter) == score

    def test_invalid_letter(self):
        with pytest.raises(ResponseValidationError):
            score_ics("g")


class TestCommunitas:
    def test_all_sevens(self):
        s = communitas_scores([7] * 10)
        assert s.total8 == 56 and s.pct_of_max == pytest.approx(100.0)
        assert s.bond_participant == 7 and s.bond_facilitator == 7

    def test_all_ones(self):
        assert communitas_scores([1] * 10).total8 == 8

    def test_item_means_sum_close_to_published_cohort_mean(self):
        rows = data_path("table_sm5.csv").read_text().strip().splitlines()[1:]
        means = [float(r.split(",")[1]) for r in rows]
        assert sum(means[:8]) == pytest.approx(44.1, abs=1e-9)
        assert abs(sum(means[:8]) - 44.14) < 0.1  # printed cohort mean, within rounding

    def test_range_validation(self):
        with pytest.raises(ResponseValidationError):
            communitas_scores([0] + [7] * 9)


@pytest.fixture(scope="module")
def loaded():
    cohort_row, studies = load_reference_csv(data_path("reference_meq30.csv").read_text())
    return cohort_from_reference_row(cohort_row), studies


class TestCompareToReference:
    def test_cohort_vs_itself_indistinguishable(self, loaded):
        cohort, _ = loaded
        from copresence.psychometrics import ReferenceStudy

        me = ReferenceStudy("me", 58, {f: (cohort[f].mean, cohort[f].sd) for f in FACTORS})
        (result,) = compare_to_reference(cohort, [me])
        assert result.n_indistinguishable == 4

    def test_meo_dmt_study_higher_on_all_four(self, loaded):
        cohort, studies = loaded
        by_label = {s.label: s for s in studies}
        (result,) = compare_to_reference(cohort, [by_label["Bar '18, MeO-DMT"]])
        assert result.more_intense_on_all and result.n_higher == 4

    def test_21mg_study_indistinguishable_on_all_four(self, loaded):
        cohort, studies = loaded
        by_label = {s.label: s for s in studies}
        (result,) = compare_to_reference(cohort, [by_label["Nich '18, psilo (21mg)"]])
        assert result.n_indistinguishable == 4

    def test_ketamine_row_has_two_factors(self, loaded):
        cohort, studies = loaded
        by_label = {s.label: s for s in studies}
        (result,) = compare_to_reference(cohort, [by_label["Vlis '18, ketamine"]])
        assert result.n_compared == 2
        assert {c.factor for c in result.comparisons} == {"ineffability", "transcendence"}


class TestCsvLoading:
    def test_meq30_roundtrip(self):
        text = "participant_id," + ",".join(f"item{i}" for i in range(1, 31)) + "\n" \
               + "p1," + ",".join(["5"] * 30) + "\n"
        resp = load_meq30_csv(text)
        assert score_meq30(resp["p1"]).mystical == 100.0

    def test_meq30_missing_column(self):
        with pytest.raises(ValueError, match="missing required columns"):
            load_meq30_csv("participant_id,item1\np1,3\n")

    def test_edi_csv(self):
        text = "participant_id," + ",".join(f"item{i}" for i in range(1, 17)) + "\n" \
               + "p1," + ",".join(["50"] * 16) + "\n"
        assert score_edi(load_edi_csv(text)["p1"]).dissolution_mean == 50.0

    def test_ics_csv(self):
        assert load_ics_csv("participant_id,pre_choice,post_choice\np1,a,f\n")["p1"] == (0, 5)

    def test_communitas_csv(self):
        text = "participant_id," + ",".join(f"item{i}" for i in range(1, 11)) + "\np1," + ",".join(["7"] * 10) + "\n"
        assert load_communitas_csv(text)["p1"].total8 == 56

    def test_bundled_cohort_loads(self):
        scores = load_factor_scores_csv(data_path("table_sm1.csv").read_text())
        assert len(scores) == 58
        summaries = factor_cohort_summaries(scores.values())
        assert summaries["ineffability"].n == 58
        assert summaries["ineffability"].mean == pytest.approx(57.2241, abs=1e-3)
