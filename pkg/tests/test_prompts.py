from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapdex.prompts import (
    ReplayClient,
    build_adjudication_prompt,
    caption_prompt_catalog,
    parse_answer,
    prompt_hash,
)


class TestBuildAdjudicationPrompt:
    def test_two_categories(self):
        rendered = build_adjudication_prompt(["bobcat", "coyote"],
                                             "a coyote in the wild")
        assert rendered == (
            'Write a one-word answer to this question: '
            '"Which of the following animals is in the picture: bobcat, coyote?" '
            "Consider this image description in the answer: a coyote in the wild."
        )

    def test_single_category(self):
        rendered = build_adjudication_prompt(["cat"], "something")
        assert "in the picture: cat?" in rendered

    def test_empty_category_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            build_adjudication_prompt(["bobcat", "empty"], "x")

    def test_no_categories_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            build_adjudication_prompt([], "x")

    def test_order_preserved(self):
        a = build_adjudication_prompt(["coyote", "bobcat"], "x")
        b = build_adjudication_prompt(["bobcat", "coyote"], "x")
        assert a != b
        assert "coyote, bobcat" in a


class TestParseAnswer:
    def test_single_match(self):
        assert parse_answer("Coyote.", ["bobcat", "coyote"]) == "coyote"

    def test_two_matches_is_empty(self):
        assert parse_answer("a bobcat and a coyote", ["bobcat", "coyote"]) is None

    def test_no_match_is_empty(self):
        assert parse_answer("bear", ["bobcat", "coyote"]) is None

    def test_whole_word_only(self):
        # "cat" must not match inside "bobcat".
        assert parse_answer("a bobcat sleeping", ["cat", "bobcat"]) == "bobcat"
        assert parse_answer("concatenation", ["cat"]) is None

    def test_multi_word_phrase(self):
        assert parse_answer("I see a red deer crossing", ["red deer", "fox"]) == "red deer"
        assert parse_answer("red colored deer", ["red deer"]) is None
        assert parse_answer("a red\n deer", ["red deer"]) == "red deer"

    def test_repeated_single_category_still_counts_once(self):
        assert parse_answer("coyote coyote coyote", ["bobcat", "coyote"]) == "coyote"

    def test_total_on_junk(self):
        assert parse_answer("", ["bobcat"]) is None
        assert parse_answer("!@#$%^&*()", ["bobcat"]) is None

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=200))
    def test_never_raises(self, answer):
        result = parse_answer(answer, ["bobcat", "coyote", "red deer"])
        assert result in (None, "bobcat", "coyote", "red deer")

    def test_permutation_and_case_invariance(self):
        rnd = random.Random(11)
        categories = ["bobcat", "coyote", "opossum", "red deer"]
        answers = ["a Coyote walks", "BOBCAT", "nothing here", "opossum and coyote",
                   "RED DEER at night", "red deer and bobcat", "deer"]
        for _ in range(500):
            answer = rnd.choice(answers)
            perm = categories[:]
            rnd.shuffle(perm)
            mangled = "".join(
                ch.upper() if rnd.random() < 0.5 else ch.lower() for ch in answer
            )
            assert parse_answer(answer, perm) == parse_answer(answer, categories)
            assert parse_answer(mangled, categories) == parse_answer(answer, categories)


class TestCaptionCatalog:
    def test_size_and_order(self):
        catalog = caption_prompt_catalog()
        assert len(catalog) == 9
        assert catalog[0].id == "none" and catalog[0].text == ""

    def test_running_entry(self):
        by_id = {p.id: p.text for p in caption_prompt_catalog()}
        assert by_id["running"] == "A running "

    def test_exact_texts(self):
        texts = [p.text for p in caption_prompt_catalog()]
        assert texts == [
            "",
            "The picture shows a cute ",
            "I see cute ",
            "The species of the animal is ",
            "The animal in the picture is ",
            "A running ",
            "A peeking ",
            "This animal is called ",
            "The name of the animal ",
        ]


class TestReplayClient:
    def test_replays_canned_response(self, data_dir):
        client = ReplayClient(data_dir / "replay" / "responses.jsonl")
        prompt = build_adjudication_prompt(["bobcat", "coyote"],
                                           "a coyote in the wild")
        answer = client.complete(prompt)
        assert answer == "Coyote."
        assert parse_answer(answer, ["bobcat", "coyote"]) == "coyote"

    def test_out_of_catalog_answer_is_empty(self, data_dir):
        client = ReplayClient(data_dir / "replay" / "responses.jsonl")
        prompt = build_adjudication_prompt(["bobcat", "coyote"],
                                           "a large bird on a branch")
        assert parse_answer(client.complete(prompt), ["bobcat", "coyote"]) is None

    def test_unknown_prompt(self, data_dir):
        client = ReplayClient(data_dir / "replay" / "responses.jsonl")
        with pytest.raises(KeyError):
            client.complete("never seen")

    def test_hash_is_stable(self):
        assert prompt_hash("abc") == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )
