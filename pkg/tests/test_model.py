import numpy as np
import pytest

from tabmark import autodiff as ad
from tabmark import layers as L
from tabmark import model as M
from tabmark import synth
from tabmark import vocab as V
from tabmark.autodiff import Tensor

SOS = V.CONTENT.sos
SEP = V.SEP_ID


def tiny_cfg(**kw) -> M.ModelConfig:
    base = dict(
        image_side=32,
        d=16,
        heads=2,
        html_blocks=1,
        cell_blocks=1,
        refiner_blocks=1,
        ffn_mult=2,
        enc_channels=(4, 8, 16),
        seed=3,
    )
    base.update(kw)
    return M.ModelConfig(**base)


def content_ids(text: str) -> list[int]:
    return list(V.tokenize_content(text).ids)


def structure_ids(html: str) -> list[int]:
    return list(V.tokenize_structure(html).ids)


class TestModelConfig:
    def test_text_roundtrip(self):
        cfg = tiny_cfg(variant="bbox", window=7)
        again = M.ModelConfig.from_text(cfg.to_text())
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            M.ModelConfig.from_text("d=16\nbogus=3\n")

    def test_grid_property(self):
        assert tiny_cfg().downsample == 8
        assert tiny_cfg().grid == 4

    @pytest.mark.parametrize(
        "kw",
        [
            {"d": 18},  # not divisible by 4
            {"d": 20, "heads": 3},  # not divisible by heads
            {"image_side": 30},
            {"variant": "mystery"},
            {"html_blocks": 0},
            {"in_channels": 2},
            {"struct_cap": 0},
        ],
    )
    def test_validation_rejects(self, kw):
        with pytest.raises(ValueError):
            tiny_cfg(**kw).validate()

    def test_with_variant(self):
        cfg = tiny_cfg()
        assert cfg.with_variant("through").variant == "through"
        assert cfg.variant == "full"


class TestCellBox:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            M.CellBox(0.5, 0.5, 1.5, 0.1)
        with pytest.raises(ValueError):
            M.CellBox(-0.1, 0.5, 0.5, 0.1)

    def test_array_roundtrip(self):
        boxes = [M.CellBox(0.2, 0.3, 0.2, 0.2), M.CellBox(0.0, 1.0, 0.5, 0.25)]
        arr = M.boxes_to_array(boxes)
        assert arr.shape == (2, 4)
        assert M.array_to_boxes(arr) == boxes

    def test_empty_list(self):
        assert M.boxes_to_array([]).shape == (0, 4)

    def test_clipping_out_of_range_predictions(self):
        out = M.array_to_boxes(np.array([[1.2, -0.1, 0.5, 0.5]]))
        assert out[0] == M.CellBox(1.0, 0.0, 0.5, 0.5)


class TestCellBufferLayout:
    def test_requires_leading_sos(self):
        with pytest.raises(ValueError, match="start with SOS"):
            M.cell_buffer_layout([SEP], 1)

    def test_stray_sos_rejected(self):
        with pytest.raises(ValueError, match="stray SOS"):
            M.cell_buffer_layout([SOS, SOS], 1)

    def test_token_beyond_last_cell_rejected(self):
        a = content_ids("a")[0]
        with pytest.raises(ValueError, match="unknown cell"):
            M.cell_buffer_layout([SOS, a], 0)
        with pytest.raises(ValueError, match="unknown cell"):
            M.cell_buffer_layout([SOS, a, SEP, a], 1)

    def test_sep_count_assigns_cells(self):
        # "a b SEP SEP c SEP": c belongs to cell 2 (two SEPs precede it)
        a, b, c = content_ids("abc")
        ids = [SOS, a, b, SEP, SEP, c, SEP]
        lay = M.cell_buffer_layout(ids, 3)
        assert lay.mask_cells[5] == 2
        np.testing.assert_array_equal(lay.mask_cells, [L.SOS_CELL, 0, 0, 3, 4, 2, 5])
        np.testing.assert_array_equal(lay.feat_index, [0, 0, 0, 1, 2, 2, M.ZERO_FEAT])
        np.testing.assert_array_equal(lay.rel_pos, [0, 0, 1, 0, 0, 0, 0])

    def test_initial_decode_buffer(self):
        # [SOS, SEP, SEP, SEP]: each SEP is its own island carrying the next cell
        lay = M.cell_buffer_layout([SOS, SEP, SEP, SEP], 3)
        np.testing.assert_array_equal(lay.mask_cells, [L.SOS_CELL, 3, 4, 5])
        np.testing.assert_array_equal(lay.feat_index, [0, 1, 2, M.ZERO_FEAT])
        np.testing.assert_array_equal(lay.rel_pos, [0, 0, 0, 0])

    def test_first_token_of_every_cell_rel_zero(self):
        rng = np.random.default_rng(5)
        letters = content_ids("abcdefgh")
        for _ in range(50):
            n_cells = int(rng.integers(1, 5))
            ids = [SOS]
            for _ in range(n_cells):
                ids += [letters[int(rng.integers(0, 8))] for _ in range(int(rng.integers(0, 4)))]
                ids.append(SEP)
            lay = M.cell_buffer_layout(ids, n_cells)
            prev_boundary = True
            for p in range(1, len(ids)):
                if prev_boundary and ids[p] != SEP:
                    assert lay.rel_pos[p] == 0
                prev_boundary = ids[p] == SEP

    def test_sep_islands_are_unique(self):
        a, b = content_ids("ab")
        lay = M.cell_buffer_layout([SOS, a, SEP, b, SEP], 2)
        seps = [lay.mask_cells[2], lay.mask_cells[4]]
        assert seps == [2, 3]  # >= n_cells and distinct


@pytest.fixture(scope="module")
def model():
    return M.TableModel(tiny_cfg())


@pytest.fixture(scope="module")
def img_feats(model):
    rng = np.random.default_rng(0)
    img = rng.random((32, 32))
    return model.encode_image(img)


class TestEncodeImage:
    def test_output_shape(self, model, img_feats):
        assert img_feats.shape == (16, 16)  # 4x4 grid, d=16

    def test_wrong_side_rejected(self, model):
        with pytest.raises(ValueError, match="expected 32x32"):
            model.encode_image(np.zeros((64, 64)))

    def test_wrong_channels_rejected(self, model):
        with pytest.raises(ValueError, match="channel"):
            model.encode_image(np.zeros((32, 32, 3)))

    def test_locality(self, model):
        # a perturbation confined to the top-left pixels leaves grid cells
        # outside the receptive field (15px here) bitwise unchanged
        rng = np.random.default_rng(1)
        img = rng.random((32, 32))
        poked = img.copy()
        poked[0:4, 0:4] = 1.0 - poked[0:4, 0:4]
        a = model.encode_image(img).data.reshape(4, 4, -1)
        b = model.encode_image(poked).data.reshape(4, 4, -1)
        assert not np.array_equal(a, b)
        for i in range(4):
            for j in range(4):
                if i >= 2 or j >= 2:
                    np.testing.assert_array_equal(a[i, j], b[i, j])


class TestHtmlStep:
    def test_shapes(self, model, img_feats):
        ids = [V.STRUCTURE.sos] + structure_ids("<table><tr><td>x</td></tr></table>")
        logits, hidden = model.html_step(ids, "ltor", img_feats)
        assert logits.shape == (len(ids), len(V.STRUCTURE))
        assert hidden.shape == (len(ids), 16)

    def test_cap_rejected(self, img_feats):
        m = M.TableModel(tiny_cfg(struct_cap=3))
        with pytest.raises(ValueError, match="exceeds cap"):
            m.html_step([V.STRUCTURE.sos] * 4, "ltor", m.encode_image(np.zeros((32, 32))))

    def test_bad_direction_rejected(self, model, img_feats):
        with pytest.raises(ValueError, match="direction"):
            model.html_step([V.STRUCTURE.sos], "ttob", img_feats)

    def test_directions_differ(self, model, img_feats):
        ids = [V.STRUCTURE.sos] + structure_ids("<table><tr><td></td></tr></table>")
        lt, _ = model.html_step(ids, "ltor", img_feats)
        rt, _ = model.html_step(ids, "rtol", img_feats)
        assert not np.allclose(lt.data, rt.data)

    def test_prefix_invariance(self, model, img_feats):
        # causal masking: logits at early positions ignore later tokens
        ids = [V.STRUCTURE.sos] + structure_ids(
            "<table><tr><td></td><td></td></tr><tr><td></td><td></td></tr></table>"
        )
        full, _ = model.html_step(ids, "ltor", img_feats)
        pre, _ = model.html_step(ids[:4], "ltor", img_feats)
        np.testing.assert_allclose(pre.data, full.data[:4], rtol=0, atol=1e-10)


class TestFetchRefine:
    def test_anchor_positions(self, model):
        ids = [
            V.STRUCTURE[V.TR_OPEN],
            V.STRUCTURE[V.TD_MERGED],
            V.STRUCTURE[V.TD_MERGED],
            V.STRUCTURE[V.TR_CLOSE],
        ]
        sf = model.struct_features(ids, Tensor(np.arange(64.0).reshape(4, 16)))
        assert sf.anchors == [1, 2]
        fetched = model.fetch_cells(sf)
        assert fetched.shape == (2, 16)
        np.testing.assert_array_equal(fetched.data[0], np.arange(16.0, 32.0))

    def test_spanned_cell_single_anchor(self, model):
        ids = structure_ids('<table><tr><td colspan="2">x</td></tr></table>')
        sf = model.struct_features(ids, Tensor(np.zeros((len(ids), 16))))
        assert len(sf.anchors) == 1
        assert ids[sf.anchors[0]] == V.STRUCTURE[V.TD_CLOSE]

    def test_empty_table(self, model):
        sf = model.struct_features([], Tensor(np.zeros((0, 16))))
        assert model.fetch_cells(sf).shape == (0, 16)
        assert model.refine(model.fetch_cells(sf)).shape == (0, 16)

    def test_anchor_validation(self):
        with pytest.raises(ValueError, match="anchor"):
            M.StructFeatures(Tensor(np.zeros((3, 4))), [0, 5])
        with pytest.raises(ValueError, match="increasing"):
            M.StructFeatures(Tensor(np.zeros((3, 4))), [2, 1])

    def test_refine_permutation_equivariance(self, model):
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((6, 16))
        perm = rng.permutation(6)
        out = model.refine(Tensor(feats)).data
        out_p = model.refine(Tensor(feats[perm])).data
        np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-10)

    def test_through_variant_is_identity(self):
        m = M.TableModel(tiny_cfg(variant="through"))
        feats = Tensor(np.random.default_rng(3).standard_normal((4, 16)))
        assert m.refine(feats) is feats

    def test_bbox_head_range(self, model):
        feats = Tensor(np.random.default_rng(4).standard_normal((5, 16)) * 10)
        boxes = model.bbox_head(feats)
        assert boxes.shape == (5, 4)
        assert np.all((boxes.data > 0) & (boxes.data < 1))


class TestCellStep:
    def run_step(self, m, buffer, n_cells, cond=None, img=None):
        lay = M.cell_buffer_layout(buffer, n_cells)
        if cond is None:
            cond = Tensor(np.random.default_rng(9).standard_normal((n_cells, m.cfg.d)))
        if img is None:
            img = m.encode_image(np.zeros((m.cfg.image_side, m.cfg.image_side)))
        return m.cell_step(buffer, lay, cond, img)

    def test_shape(self, model):
        a, b = content_ids("ab")
        buf = [SOS, a, SEP, b, SEP]
        logits = self.run_step(model, buf, 2)
        assert logits.shape == (5, len(V.CONTENT))

    def test_cap_rejected(self):
        m = M.TableModel(tiny_cfg(content_cap=2))
        with pytest.raises(ValueError, match="exceeds cap"):
            self.run_step(m, [SOS, SEP, SEP], 2)

    def test_layout_mismatch_rejected(self, model, img_feats):
        lay = M.cell_buffer_layout([SOS, SEP], 1)
        with pytest.raises(ValueError, match="layout length"):
            model.cell_step([SOS, SEP, SEP], lay, Tensor(np.zeros((2, 16))), img_feats)

    def test_missing_feature_rejected(self, model, img_feats):
        buf = [SOS, SEP, SEP]
        lay = M.cell_buffer_layout(buf, 2)
        with pytest.raises(ValueError, match="no feature"):
            model.cell_step(buf, lay, Tensor(np.zeros((1, 16))), img_feats)

    def test_cell_isolation(self, model, img_feats):
        # equal-length edit in cell 0 leaves every cell-1 row bitwise unchanged
        a, b, x, y, c = content_ids("abxyc")
        cond = Tensor(np.random.default_rng(11).standard_normal((2, 16)))
        buf1 = [SOS, a, b, SEP, c, SEP]
        buf2 = [SOS, x, y, SEP, c, SEP]
        l1 = model.cell_step(buf1, M.cell_buffer_layout(buf1, 2), cond, img_feats)
        l2 = model.cell_step(buf2, M.cell_buffer_layout(buf2, 2), cond, img_feats)
        np.testing.assert_array_equal(l1.data[4], l2.data[4])  # c's row
        np.testing.assert_array_equal(l1.data[3], l2.data[3])  # cell 0's SEP island
        assert not np.array_equal(l1.data[1], l2.data[1])

    def test_conditioning_variants(self):
        m_full = M.TableModel(tiny_cfg())
        m_bbox = M.TableModel(tiny_cfg(variant="bbox"))
        refined = Tensor(np.random.default_rng(12).standard_normal((3, 16)))
        boxes = Tensor(np.random.default_rng(13).random((3, 4)))
        assert m_full.cell_conditioning(refined, boxes) is refined
        out = m_bbox.cell_conditioning(refined, boxes)
        np.testing.assert_array_equal(out.data, m_bbox.box_embed(boxes).data)


class TestVariantSurgery:
    """The ablation lattice is realized by weight surgery, not separate graphs."""

    def test_full_equals_through_with_inert_refiner(self):
        cfg = tiny_cfg(seed=21)
        m = M.TableModel(cfg)
        for i in range(cfg.refiner_blocks):
            m.params[f"refiner.block{i}.self.wo"].data[:] = 0.0
            m.params[f"refiner.block{i}.ffn.down.w"].data[:] = 0.0
            m.params[f"refiner.block{i}.ffn.down.b"].data[:] = 0.0
        feats = Tensor(np.random.default_rng(14).standard_normal((5, 16)))
        np.testing.assert_array_equal(m.refine(feats).data, feats.data)

    def test_bbox_equals_full_with_zero_feature_mix(self):
        m1 = M.TableModel(tiny_cfg(seed=22))
        m2 = M.TableModel(tiny_cfg(seed=22, variant="bbox"))
        for m in (m1, m2):
            m.params["cell.mix_feat.w"].data[:] = 0.0
        a, b = content_ids("ab")
        buf = [SOS, a, SEP, b, SEP]
        lay = M.cell_buffer_layout(buf, 2)
        img = m1.encode_image(np.zeros((32, 32)))
        rng = np.random.default_rng(15)
        refined = Tensor(rng.standard_normal((2, 16)))
        boxes = Tensor(rng.random((2, 4)))
        l1 = m1.cell_step(buf, lay, m1.cell_conditioning(refined, boxes), img)
        l2 = m2.cell_step(buf, lay, m2.cell_conditioning(refined, boxes), img)
        np.testing.assert_array_equal(l1.data, l2.data)


class TestWeightSharing:
    def test_single_registry_no_direction_copies(self, model):
        names = model.params.names()
        assert len(names) == len(set(names))
        assert not any("rtol" in n or "ltor" in n for n in names)
        assert model.params["html.dir"] is model.dir_emb

    def test_direction_rows_both_trained(self, model, img_feats):
        # both structure students backprop into the shared tables
        model.params.zero_grad()
        ids = [V.STRUCTURE.sos] + structure_ids("<table><tr><td></td></tr></table>")
        for direction in ("ltor", "rtol"):
            logits, _ = model.html_step(ids, direction, img_feats)
            ad.mean(logits).backward()
        g = model.dir_emb.grad
        assert g is not None
        assert np.any(g[0] != 0) and np.any(g[1] != 0)
        assert model.struct_emb.grad is not None
        model.params.zero_grad()

    def test_same_seed_same_init(self):
        m1 = M.TableModel(tiny_cfg(seed=7))
        m2 = M.TableModel(tiny_cfg(seed=7))
        m3 = M.TableModel(tiny_cfg(seed=8))
        for (n1, p1), (_, p2), (_, p3) in zip(m1.params.items(), m2.params.items(), m3.params.items()):
            np.testing.assert_array_equal(p1.data, p2.data, err_msg=n1)
        assert any(
            not np.array_equal(p1.data, p3.data)
            for (_, p1), (_, p3) in zip(m1.params.items(), m3.params.items())
        )


class TestEndToEnd:
    def test_teacher_forced_pipeline_shapes(self):
        cfg = tiny_cfg()
        m = M.TableModel(cfg)
        rec = synth.generate(synth.PRESETS["wide"], seed=42)
        img = synth.prepare_image(rec.image, cfg.image_side)
        feats = m.encode_image(img)

        body = list(rec.structure_ids)
        inp = [V.STRUCTURE.sos] + body
        logits, hidden = m.html_step(inp, "ltor", feats)
        assert logits.shape == (len(inp), len(V.STRUCTURE))

        token_hidden = ad.take_rows(hidden, np.arange(1, len(inp)))
        sf = m.struct_features(body, token_hidden)
        n = rec.n_cells()
        assert len(sf.anchors) == n

        cells = m.fetch_cells(sf)
        refined = m.refine(cells)
        assert refined.shape == (n, cfg.d)
        boxes = m.bbox_head(refined)
        assert boxes.shape == (n, 4)

        content = V.concat_cells([V.tokenize_content(c) for c in rec.cells])
        buf = [SOS] + list(content.ids)
        lay = M.cell_buffer_layout(buf, n)
        cond = m.cell_conditioning(refined, boxes)
        cell_logits = m.cell_step(buf, lay, cond, feats)
        assert cell_logits.shape == (len(buf), len(V.CONTENT))
