import numpy as np
import pytest

from tabmark import vocab as V


def tok(s: str) -> int:
    return V.STRUCTURE[s]


class TestVocabTables:
    def test_reserved_ids_first_and_distinct(self):
        for voc, reserved in [
            (V.STRUCTURE, (V.PAD, V.SOS, V.EOS)),
            (V.CONTENT, (V.PAD, V.SOS, V.EOS, V.SEP, V.UNK)),
        ]:
            ids = [voc[t] for t in reserved]
            assert ids == list(range(len(reserved)))
            assert len(set(ids)) == len(ids)

    def test_dense_ids_roundtrip(self):
        for voc in (V.STRUCTURE, V.CONTENT):
            for i, t in enumerate(voc.tokens):
                assert voc[t] == i
                assert voc.decode(i) == t

    def test_sep_only_in_content(self):
        assert V.SEP in V.CONTENT.tokens
        assert V.SEP not in V.STRUCTURE.tokens

    def test_vocab_file_roundtrip(self, tmp_path):
        path = str(tmp_path / "structure.vocab")
        V.STRUCTURE.to_file(path)
        loaded = V.Vocab.from_file(path, kind="structure")
        assert loaded.tokens == V.STRUCTURE.tokens
        with open(path) as fh:
            lines = fh.read().splitlines()
        assert lines[V.STRUCTURE[V.TR_OPEN]] == V.TR_OPEN


class TestTokenizeStructure:
    def test_plain_cell_merges(self):
        seq = V.tokenize_structure("<table><tr><td></td></tr></table>")
        assert list(seq.ids) == [tok(V.TR_OPEN), tok(V.TD_MERGED), tok(V.TR_CLOSE)]

    def test_spanned_cell_token_group(self):
        seq = V.tokenize_structure('<table><tr><td rowspan="2"></td></tr></table>')
        assert list(seq.ids) == [
            tok(V.TR_OPEN),
            tok(V.TD_OPEN),
            tok(' rowspan="2"'),
            tok(V.GT),
            tok(V.TD_CLOSE),
            tok(V.TR_CLOSE),
        ]

    def test_attribute_order_normalized(self):
        a = V.tokenize_structure('<table><tr><td rowspan="3" colspan="2"></td></tr></table>')
        b = V.tokenize_structure('<table><tr><td colspan="2" rowspan="3"></td></tr></table>')
        assert a.ids == b.ids
        names = [V.STRUCTURE.decode(i) for i in a.ids]
        assert names.index(' colspan="2"') < names.index(' rowspan="3"')

    def test_span_value_one_collapses_to_merged(self):
        seq = V.tokenize_structure('<table><tr><td colspan="1"></td></tr></table>')
        assert list(seq.ids) == [tok(V.TR_OPEN), tok(V.TD_MERGED), tok(V.TR_CLOSE)]

    @pytest.mark.parametrize(
        "html",
        [
            "<table><tr><th></th></tr></table>",
            '<table><tr><td align="left"></td></tr></table>',
            '<table><tr><td colspan="11"></td></tr></table>',
            '<table><tr><td colspan="0"></td></tr></table>',
            "<table><td></td></table>",
            "<table><tr>stray</tr></table>",
            "<table><tr><td></td>",
            "<tr><td></td></tr>",
        ],
    )
    def test_rejections(self, html):
        with pytest.raises(ValueError):
            V.tokenize_structure(html)

    def test_rejection_reports_position(self):
        with pytest.raises(ValueError, match=r"line 1, column"):
            V.tokenize_structure("<table><tr><th></th></tr></table>")

    def test_detokenize_rejects_malformed(self):
        with pytest.raises(ValueError):
            V.detokenize_structure([tok(V.TD_MERGED)])  # cell outside a row
        with pytest.raises(ValueError):
            V.detokenize_structure([tok(V.TR_OPEN)])  # unterminated row
        with pytest.raises(ValueError):
            # td_open immediately followed by '>' violates the merged-token rule
            V.detokenize_structure(
                [tok(V.TR_OPEN), tok(V.TD_OPEN), tok(V.GT), tok(V.TD_CLOSE), tok(V.TR_CLOSE)]
            )

    def test_roundtrip_on_generated_tables(self):
        from tabmark import synth

        rng = np.random.default_rng(7)
        for _ in range(200):
            rec = synth.generate(synth.PRESETS["wide"], int(rng.integers(1 << 30)))
            html = V.detokenize_structure(rec.structure_ids)
            again = V.tokenize_structure(html)
            assert tuple(again.ids) == tuple(rec.structure_ids)

    def test_merged_token_rule_never_open_then_bracket(self):
        from tabmark import synth

        open_id, gt_id = tok(V.TD_OPEN), tok(V.GT)
        for seed in range(50):
            ids = synth.generate(synth.PRESETS["dense"], seed).structure_ids
            for a, b in zip(ids, ids[1:]):
                assert not (a == open_id and b == gt_id)


class TestContent:
    def test_empty(self):
        assert V.tokenize_content("").ids == ()

    def test_per_character(self):
        seq = V.tokenize_content("ab")
        assert [V.CONTENT.decode(i) for i in seq.ids] == ["a", "b"]

    def test_roundtrip_with_space(self):
        assert V.detokenize_content(V.tokenize_content("a b").ids) == "a b"

    def test_unknown_maps_to_unk(self):
        seq = V.tokenize_content("aZb")
        assert seq.ids[1] == V.UNK_ID
        assert V.detokenize_content(seq.ids) == "a?b"


class TestConcatCells:
    def test_empty_list(self):
        assert V.concat_cells([]).ids == ()

    def test_layout_and_split(self):
        cells = [V.tokenize_content(s) for s in ("ab", "", "c")]
        joined = V.concat_cells(cells)
        texts = [V.detokenize_content(c) for c in V.split_cells(joined)]
        assert texts == ["ab", "", "c"]
        assert sum(1 for i in joined.ids if i == V.SEP_ID) == 3

    def test_cell_index_by_sep_count(self):
        joined = V.concat_cells([V.tokenize_content(s) for s in ("ab", "", "c")])
        pos_c = list(joined.ids).index(V.CONTENT["c"])
        assert sum(1 for i in joined.ids[:pos_c] if i == V.SEP_ID) == 2

    def test_rejects_sep_in_input(self):
        bad = V.TokenSeq("content", (V.SEP_ID,))
        with pytest.raises(ValueError):
            V.concat_cells([bad])

    def test_sep_count_bijection(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(0, 8))
            cells = [
                V.tokenize_content("".join(rng.choice(list("abc"), size=rng.integers(0, 5))))
                for _ in range(n)
            ]
            joined = V.concat_cells(cells)
            assert sum(1 for i in joined.ids if i == V.SEP_ID) == n
            assert [list(c.ids) for c in cells] == V.split_cells(joined)


class TestTokenSeq:
    def test_validate_eos_rules(self):
        eos, pad = V.CONTENT.eos, V.CONTENT.pad
        a = V.CONTENT["a"]
        V.TokenSeq("content", (a, eos, pad)).validate()
        with pytest.raises(ValueError):
            V.TokenSeq("content", (eos, a)).validate()
        with pytest.raises(ValueError):
            V.TokenSeq("content", (eos, eos)).validate()

    def test_bad_ids_rejected(self):
        with pytest.raises(ValueError):
            V.TokenSeq("content", (len(V.CONTENT),))
        with pytest.raises(ValueError):
            V.TokenSeq("structure", (-1,))

    def test_reversed_flips_direction(self):
        seq = V.TokenSeq("content", (5, 6, 7), "ltor")
        rev = seq.reversed()
        assert rev.ids == (7, 6, 5) and rev.direction == "rtol"


class TestRenderHtml:
    def test_render_with_contents(self):
        ids = [tok(V.TR_OPEN), tok(V.TD_MERGED), tok(V.TD_MERGED), tok(V.TR_CLOSE)]
        html = V.render_html(ids, ["ab", "c"])
        assert html == "<table><tr><td>ab</td><td>c</td></tr></table>"

    def test_render_spanned_and_missing_text(self):
        ids = [
            tok(V.TR_OPEN),
            tok(V.TD_OPEN),
            tok(' colspan="2"'),
            tok(V.GT),
            tok(V.TD_CLOSE),
            tok(V.TR_CLOSE),
        ]
        html = V.render_html(ids, ["xy"])
        assert html == '<table><tr><td colspan="2">xy</td></tr></table>'
        assert V.render_html(ids, []) == '<table><tr><td colspan="2"></td></tr></table>'

    def test_render_tolerates_garbage(self):
        html = V.render_html([tok(V.GT), tok(V.TD_MERGED)], ["a"])
        assert html.startswith("<table>") and html.endswith("</table>")
