import json
import random
from functools import lru_cache

import pytest
from hypothesis import given
from hypothesis import strategies as st

from docmask.errors import DataError, TagParseError
from docmask.metrics import (
    EvalReport,
    accuracy,
    anls,
    bio_entities,
    entity_f1,
    evaluate_dumps,
    levenshtein,
    normalized_similarity,
    write_report,
)


def lev_reference(a: str, b: str) -> int:
    """Full-table recursion over prefixes."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


short_text = st.text(alphabet="abcde ", max_size=12)


class TestBio:
    def test_decode(self):
        tags = ["B-Q", "I-Q", "O", "B-A", "B-A", "I-A", "I-Q"]
        assert bio_entities(tags) == {("Q", 0, 1), ("A", 3, 3), ("A", 4, 5), ("Q", 6, 6)}

    def test_dangling_inside_opens(self):
        assert bio_entities(["O", "I-X", "I-X"]) == {("X", 1, 2)}

    @pytest.mark.parametrize("bad", ["B", "X-Q", "B-", "b-Q", ""])
    def test_malformed(self, bad):
        with pytest.raises(TagParseError):
            bio_entities(["O", bad])


class TestEntityF1:
    def test_perfect(self):
        gold = [["B-Q", "I-Q", "O", "B-A"]]
        assert entity_f1(gold, gold).value == 1.0

    def test_no_predictions(self):
        assert entity_f1([["B-Q", "O"]], [["O", "O"]]).value == 0.0

    def test_half(self):
        gold = [["B-Q", "I-Q", "O", "B-A", "O"]]
        pred = [["B-Q", "I-Q", "O", "O", "B-H"]]
        r = entity_f1(gold, pred)
        assert r.support["precision"] == 0.5 and r.support["recall"] == 0.5
        assert r.value == 0.5

    def test_type_and_boundary_must_match(self):
        gold = [["B-Q", "I-Q"]]
        assert entity_f1(gold, [["B-A", "I-A"]]).value == 0.0
        assert entity_f1(gold, [["B-Q", "O"]]).value == 0.0

    def test_document_order_invariant(self):
        rng = random.Random(0)
        tags = ["O", "B-Q", "I-Q", "B-A", "I-A"]
        gold = [[rng.choice(tags) for _ in range(10)] for _ in range(8)]
        pred = [[rng.choice(tags) for _ in range(10)] for _ in range(8)]
        order = list(range(8))
        rng.shuffle(order)
        a = entity_f1(gold, pred)
        b = entity_f1([gold[i] for i in order], [pred[i] for i in order])
        assert a == b

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            entity_f1([["O"]], [["O", "O"]])


class TestAccuracy:
    @pytest.mark.parametrize("gold,pred,value", [
        ([1, 2, 3], [1, 2, 3], 1.0), ([1, 2], [2, 1], 0.0), ([0, 1, 2, 3], [0, 1, 2, 0], 0.75),
    ])
    def test_examples(self, gold, pred, value):
        assert accuracy(gold, pred).value == value

    def test_empty(self):
        with pytest.raises(DataError):
            accuracy([], [])


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [("", "", 0), ("", "abc", 3), ("kitten", "sitting", 3),
                                       ("fine", "find", 1), ("flaw", "lawn", 2)])
    def test_known(self, a, b, d):
        assert levenshtein(a, b) == d == lev_reference(a, b)

    def test_random_pairs_match_reference(self):
        rng = random.Random(1234)
        for _ in range(1000):
            a = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 12)))
            b = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 12)))
            assert levenshtein(a, b) == lev_reference(a, b)

    @given(short_text, short_text)
    def test_symmetric(self, a, b):
        assert levenshtein(a, b) == levenshtein(b, a)

    @given(short_text, short_text, short_text)
    def test_triangle(self, a, b, c):
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)

    @given(short_text)
    def test_identity(self, a):
        assert levenshtein(a, a) == 0


class TestAnls:
    def test_exact(self):
        assert anls(["Total"], [["total "]]).value == 1.0

    def test_fine_find(self):
        assert normalized_similarity("fine", "find") == 0.75
        assert anls(["fine"], [["find"]]).value == 0.75

    def test_threshold(self):
        assert anls(["abc"], [["xyz"]]).value == 0.0
        # 1 - 3/5 = 0.4 < 0.5 is zeroed, 1 - 2/4 = 0.5 is kept
        assert anls(["abcde"], [["abxyz"]]).value == 0.0
        assert anls(["abcd"], [["abxy"]]).value == 0.5

    def test_best_gold(self):
        assert anls(["fine"], [["zzzz", "find"]]).value == 0.75

    def test_mean(self):
        assert anls(["a", "b"], [["a"], ["zzz"]]).value == 0.5

    @given(st.text(min_size=1, max_size=20).filter(lambda s: s.strip()))
    def test_self_is_one(self, s):
        assert anls([s], [[s]]).value == 1.0

    def test_errors(self):
        with pytest.raises(DataError):
            anls(["a"], [[]])
        with pytest.raises(DataError):
            anls(["a"], [])


class TestDumps:
    def write(self, path, rows):
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return path

    def test_gold_as_predictions(self, tmp_path):
        gold = [
            {"id": "a", "task": "token-label", "labels": ["B-Q", "I-Q", "O"]},
            {"id": "b", "task": "token-label", "labels": ["B-A"]},
            {"id": "c", "task": "doc-class", "class": 2},
            {"id": "d", "task": "extractive-qa", "answer": "hello", "answers": ["hello"]},
        ]
        g = self.write(tmp_path / "g.jsonl", gold)
        reports = evaluate_dumps(g, g)
        assert [r.value for r in reports] == [1.0, 1.0, 1.0]
        write_report(reports, tmp_path / "r.tsv")
        lines = (tmp_path / "r.tsv").read_text().splitlines()
        assert [ln.split("\t")[0] for ln in lines] == ["entity_f1", "accuracy", "anls"]

    def test_missing_prediction(self, tmp_path):
        g = self.write(tmp_path / "g.jsonl", [{"id": "a", "task": "doc-class", "class": 1}])
        p = self.write(tmp_path / "p.jsonl", [])
        with pytest.raises(DataError):
            evaluate_dumps(p, g)


def test_report_range():
    with pytest.raises(ValueError):
        EvalReport("x", 1.5)
