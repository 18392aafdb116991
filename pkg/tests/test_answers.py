import httpx
import pytest

from crystal_eval.answers import (
    AnswerKind,
    HttpJudge,
    MatchedVia,
    classify,
    extract_choice_letter,
    macro_accuracy,
    score_answer,
)
from crystal_eval.errors import EmptyInput

CHOICES = (("A", "Yes"), ("B", "No"), ("C", "Maybe"))


class TestClassify:
    def test_number(self):
        assert classify("200").kind == AnswerKind.NUMERIC

    def test_number_with_unit(self):
        assert classify("200 km").kind == AnswerKind.NUMERIC
        assert classify("37%").kind == AnswerKind.NUMERIC
        assert classify("1,250").kind == AnswerKind.NUMERIC

    def test_choice_when_choices_present(self):
        t = classify("B", CHOICES)
        assert t.kind == AnswerKind.CHOICE
        assert t.choices == CHOICES

    def test_yes_no(self):
        for g in ("yes", "No", "TRUE", "false"):
            assert classify(g).kind == AnswerKind.YES_NO

    def test_short_text_is_categorical(self):
        assert classify("Green").kind == AnswerKind.CATEGORICAL
        assert classify("left to right").kind == AnswerKind.CATEGORICAL

    def test_long_text_is_free_form(self):
        assert classify("captain future man of tomorrow").kind == AnswerKind.FREE_FORM

    def test_classification_ignores_prediction(self):
        # classify takes only gold + choices by signature; no prediction input
        import inspect

        params = list(inspect.signature(classify).parameters)
        assert params == ["gold", "choices"]

    def test_empty_gold_rejected(self):
        with pytest.raises(EmptyInput):
            classify("   ")


class TestScoreNumeric:
    def test_exact(self):
        v = score_answer("200", "200", classify("200"))
        assert v.correct and v.matched_via == MatchedVia.NUMERIC_TOLERANCE

    def test_units_and_commas_stripped(self):
        assert score_answer("1,250 km", "1250", classify("1250")).correct
        assert score_answer("37%", "37", classify("37")).correct

    def test_tolerance_symmetric(self):
        t = classify("1000")
        eps = 0.05
        assert score_answer(str(1000 + eps), "1000", t).correct == \
               score_answer(str(1000 - eps), "1000", t).correct

    def test_relative_tolerance(self):
        t = classify("100000")
        assert score_answer("100005", "100000", t).correct  # 5e-5 relative
        assert not score_answer("100200", "100000", t).correct

    def test_unparseable_pred_is_incorrect_not_fatal(self):
        v = score_answer("roughly a lot", "200", classify("200"))
        assert not v.correct and v.matched_via == MatchedVia.NONE


class TestScoreChoice:
    def test_letter_forms(self):
        t = classify("B", CHOICES)
        for pred in ("B", "b", "B)", "B.", "(B)", "option B", "B) No"):
            v = score_answer(pred, "B", t)
            assert v.correct and v.matched_via == MatchedVia.CHOICE_LETTER, pred

    def test_spec_fixture_a_yes(self):
        t = classify("A", CHOICES)
        v = score_answer("A) Yes", "A", t)
        assert v.correct and v.matched_via == MatchedVia.CHOICE_LETTER

    def test_wrong_letter(self):
        t = classify("B", CHOICES)
        assert not score_answer("C", "B", t).correct

    def test_full_text_fallback(self):
        t = classify("B", CHOICES)
        v = score_answer("No", "B", t)
        assert v.correct and v.matched_via == MatchedVia.EXACT

    def test_plain_word_not_mistaken_for_letter(self):
        t = classify("A", CHOICES)
        # "Also maybe" starts with 'A' but is not a letter pattern;
        # it then fails the text fallback against choice A ("Yes").
        assert not score_answer("Also maybe", "A", t).correct

    def test_extractor(self):
        assert extract_choice_letter("(c)") == "C"
        assert extract_choice_letter("option d") == "D"
        assert extract_choice_letter("Dog") is None


class TestScoreYesNo:
    def test_true_normalizes_to_yes(self):
        v = score_answer("true", "Yes", classify("yes"))
        assert v.correct and v.matched_via == MatchedVia.YES_NO

    def test_false_no(self):
        assert score_answer("FALSE", "no", classify("no")).correct

    def test_unmapped_pred(self):
        assert not score_answer("maybe", "yes", classify("yes")).correct


class TestScoreCategorical:
    def test_case_insensitive(self):
        v = score_answer("green", "Green", classify("Green"))
        assert v.correct and v.matched_via == MatchedVia.EXACT

    def test_whitespace_collapsed(self):
        assert score_answer("left  to   right", "Left to Right",
                            classify("Left to Right")).correct

    def test_symmetric_normalization(self):
        t = classify("Left to Right")
        assert score_answer("LEFT TO RIGHT", "left to right", t).correct
        assert score_answer("left to right", "LEFT  TO  RIGHT", t).correct

    def test_empty_pred_never_matches(self):
        assert not score_answer("", "Green", classify("Green")).correct


class TestFreeFormAndJudge:
    def test_free_form_defaults_to_categorical(self):
        t = classify("captain future man of tomorrow")
        assert t.kind == AnswerKind.FREE_FORM
        assert score_answer("Captain Future Man of Tomorrow",
                            "captain future man of tomorrow", t).correct

    def test_judge_hook_used_when_configured(self):
        t = classify("captain future man of tomorrow")
        v = score_answer("the captain future title", "captain future man of tomorrow",
                         t, judge=lambda q, g, p: True)
        assert v.correct and v.matched_via == MatchedVia.JUDGE

    def test_judge_decline_falls_back(self):
        t = classify("captain future man of tomorrow")
        v = score_answer("captain future man of tomorrow",
                         "captain future man of tomorrow", t, judge=lambda q, g, p: None)
        assert v.correct and v.matched_via == MatchedVia.EXACT

    def test_http_judge_contract(self):
        def handler(request: httpx.Request) -> httpx.Response:
            assert request.url.path == "/score"
            return httpx.Response(200, json={"correct": True})

        judge = HttpJudge("http://judge", transport=httpx.MockTransport(handler))
        assert judge("q", "g", "p") is True

    def test_http_judge_declines_on_error(self):
        judge = HttpJudge("http://judge", transport=httpx.MockTransport(
            lambda request: httpx.Response(500)))
        assert judge("q", "g", "p") is None


class TestMacroAccuracy:
    def test_mean(self):
        t = classify("Green")
        verdicts = [score_answer("Green", "Green", t), score_answer("Red", "Green", t)]
        assert macro_accuracy(verdicts) == 0.5

    def test_all_true(self):
        t = classify("Green")
        assert macro_accuracy([score_answer("green", "Green", t)] * 4) == 1.0

    def test_sentinel_answers_never_match(self):
        t = classify("Green")
        verdicts = [score_answer("", "Green", t) for _ in range(3)]
        assert macro_accuracy(verdicts) == 0.0

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            macro_accuracy([])

    def test_invariant_matched_via_none_iff_incorrect(self):
        t = classify("B", CHOICES)
        for pred in ("B", "C", "No", "", "option B"):
            v = score_answer(pred, "B", t)
            assert (v.matched_via == MatchedVia.NONE) == (not v.correct)
