import numpy as np
import pytest
import torch

from vplab.errors import (
    EncoderNotFound,
    InvalidImage,
    InvalidPrompt,
    NumericalError,
    ShapeError,
    SlotError,
)
from vplab.segcore import (
    BinaryMask,
    DecoderConfig,
    ImageRGB,
    MaskLogits,
    PointPrompt,
    binarize,
    decode,
    encode_image,
    encode_points,
    init_decoder_weights,
    weights_hash,
)


def _image(seed=0, size=64):
    rng = np.random.default_rng(seed)
    return ImageRGB(pixels=rng.random((size, size, 3), dtype=np.float32), id=f"img-{seed}")


class TestImageType:
    def test_rejects_non_finite(self):
        px = np.full((64, 64, 3), np.nan, dtype=np.float32)
        with pytest.raises(InvalidImage):
            ImageRGB(pixels=px)

    def test_rejects_out_of_range(self):
        px = np.full((64, 64, 3), 1.5, dtype=np.float32)
        with pytest.raises(InvalidImage):
            ImageRGB(pixels=px)

    def test_rejects_too_small(self):
        px = np.zeros((16, 64, 3), dtype=np.float32)
        with pytest.raises(InvalidImage):
            ImageRGB(pixels=px)


class TestEncoder:
    def test_grid_shape(self):
        grid = encode_image(_image(), "toy-patch")
        assert grid.features.shape == (8, 8, 32)
        assert grid.stride == 8

    def test_deterministic(self):
        g1 = encode_image(_image(3))
        g2 = encode_image(_image(3))
        assert torch.equal(g1.features, g2.features)

    def test_constant_image_interior_patches_equal(self):
        px = np.full((64, 64, 3), 0.5, dtype=np.float32)
        grid = encode_image(ImageRGB(pixels=px))
        interior = grid.features[1:-1, 1:-1]
        ref = interior[0, 0]
        assert torch.allclose(interior, ref.expand_as(interior), atol=1e-6)

    def test_zero_image_gives_zero_features(self):
        px = np.zeros((64, 64, 3), dtype=np.float32)
        grid = encode_image(ImageRGB(pixels=px))
        assert grid.features.abs().max() == 0

    def test_unknown_encoder(self):
        with pytest.raises(EncoderNotFound):
            encode_image(_image(), "no-such-encoder")

    def test_non_multiple_of_stride(self):
        px = np.zeros((70, 70, 3), dtype=np.float32)
        with pytest.raises(InvalidImage):
            encode_image(ImageRGB(pixels=px))


class TestEncodePoints:
    def test_shape(self, tiny_cfg, tiny_weights):
        seq = encode_points([PointPrompt(10, 12)], (64, 64), tiny_cfg.d, tiny_weights)
        assert seq.shape == (1, 32)

    def test_identical_points_identical_tokens(self, tiny_cfg, tiny_weights):
        pts = [PointPrompt(5.0, 9.0), PointPrompt(5.0, 9.0)]
        seq = encode_points(pts, (64, 64), tiny_cfg.d, tiny_weights)
        assert torch.equal(seq[0], seq[1])

    def test_polarity_difference_is_embed_difference(self, tiny_cfg, tiny_weights):
        pos = encode_points([PointPrompt(20, 20, "positive")], (64, 64), tiny_cfg.d, tiny_weights)
        neg = encode_points([PointPrompt(20, 20, "negative")], (64, 64), tiny_cfg.d, tiny_weights)
        expected = tiny_weights["point_embed.positive"] - tiny_weights["point_embed.negative"]
        assert torch.allclose(pos[0] - neg[0], expected, atol=1e-6)

    def test_out_of_bounds(self, tiny_cfg, tiny_weights):
        with pytest.raises(InvalidPrompt):
            encode_points([PointPrompt(64.0, 5.0)], (64, 64), tiny_cfg.d, tiny_weights)

    def test_empty(self, tiny_cfg, tiny_weights):
        with pytest.raises(InvalidPrompt):
            encode_points([], (64, 64), tiny_cfg.d, tiny_weights)


class TestDecode:
    def test_output_shapes(self, tiny_weights):
        cfg = DecoderConfig(d=32, depth=2, heads=2, d_down=16, d_mlp=64, n_mask_tokens=1, upscale=4)
        w = init_decoder_weights(cfg, d_enc=32, seed=0)
        grid = encode_image(_image())
        seq = encode_points([PointPrompt(8, 8)], (64, 64), cfg.d, w)
        ml = decode(grid, seq, cfg, w)
        assert ml.logits.shape == (1, 32, 32)
        assert ml.iou_pred.shape == (1,)

    @pytest.mark.parametrize("upscale,expected", [(1, 8), (2, 16), (4, 32)])
    def test_upscale_covariance(self, upscale, expected):
        cfg = DecoderConfig(d=32, depth=2, heads=2, d_down=16, d_mlp=64, n_mask_tokens=3, upscale=upscale)
        w = init_decoder_weights(cfg, d_enc=32, seed=0)
        grid = encode_image(_image())
        seq = encode_points([PointPrompt(8, 8)], (64, 64), cfg.d, w)
        ml = decode(grid, seq, cfg, w)
        assert ml.logits.shape == (3, expected, expected)

    def test_deterministic(self, tiny_cfg, tiny_weights):
        grid = encode_image(_image(5))
        seq = encode_points([PointPrompt(30, 40)], (64, 64), tiny_cfg.d, tiny_weights)
        a = decode(grid, seq, tiny_cfg, tiny_weights)
        b = decode(grid, seq, tiny_cfg, tiny_weights)
        assert torch.equal(a.logits, b.logits)
        assert torch.equal(a.iou_pred, b.iou_pred)

    def test_never_mutates_weights(self, tiny_cfg, tiny_weights):
        before = weights_hash(tiny_weights)
        grid = encode_image(_image(6))
        seq = encode_points([PointPrompt(30, 40)], (64, 64), tiny_cfg.d, tiny_weights)
        for _ in range(3):
            decode(grid, seq, tiny_cfg, tiny_weights)
        assert weights_hash(tiny_weights) == before

    def test_prompt_permutation_invariance(self, tiny_cfg, tiny_weights):
        grid = encode_image(_image(7))
        pts = [PointPrompt(10, 10), PointPrompt(40, 20, "negative"), PointPrompt(25, 50)]
        seq = encode_points(pts, (64, 64), tiny_cfg.d, tiny_weights)
        perm = seq[[2, 0, 1]]
        a = decode(grid, seq, tiny_cfg, tiny_weights)
        b = decode(grid, perm, tiny_cfg, tiny_weights)
        assert (a.logits - b.logits).abs().max() < 1e-5

    def test_width_mismatch(self, tiny_cfg, tiny_weights):
        grid = encode_image(_image(8))
        with pytest.raises(ShapeError):
            decode(grid, torch.zeros(1, 64), tiny_cfg, tiny_weights)

    def test_non_finite_weights_raise_numerical(self, tiny_cfg, tiny_weights):
        grid = encode_image(_image(9))
        seq = encode_points([PointPrompt(8, 8)], (64, 64), tiny_cfg.d, tiny_weights)
        bad = dict(tiny_weights)
        bad["blocks.1.mlp.lin1.weight"] = tiny_weights["blocks.1.mlp.lin1.weight"] * float("nan")
        with pytest.raises(NumericalError) as exc:
            decode(grid, seq, tiny_cfg, bad)
        assert "block 1" in str(exc.value)


class TestBinarize:
    def _logits(self, arr):
        t = torch.as_tensor(arr, dtype=torch.float32)[None]
        return MaskLogits(logits=t, iou_pred=torch.tensor([0.5]))

    def test_all_positive(self):
        ml = self._logits(np.full((8, 8), 5.0))
        assert binarize(ml, 0, 0.0, (8, 8)).bits.all()

    def test_all_negative(self):
        ml = self._logits(np.full((8, 8), -5.0))
        assert not binarize(ml, 0, 0.0, (8, 8)).bits.any()

    def test_half_split_matches_bruteforce(self):
        arr = np.ones((8, 8), dtype=np.float32)
        arr[:, 4:] = -1.0
        ml = self._logits(arr)
        mask = binarize(ml, 0, 0.0, (8, 8))
        expected = np.zeros((8, 8), dtype=bool)
        for r in range(8):
            for c in range(8):
                expected[r, c] = arr[r, c] > 0.0
        assert (mask.bits == expected).all()

    def test_resize(self):
        arr = np.full((8, 8), 3.0)
        ml = self._logits(arr)
        assert binarize(ml, 0, 0.0, (64, 64)).bits.shape == (64, 64)

    def test_slot_out_of_range(self):
        ml = self._logits(np.zeros((8, 8)))
        with pytest.raises(SlotError):
            binarize(ml, 3, 0.0, (8, 8))


class TestWeightsRoundTrip:
    def test_segc_round_trip(self, tiny_cfg, tiny_weights, tmp_path):
        from vplab.segcore import SegModel

        m = SegModel(encoder_id="toy-patch", cfg=tiny_cfg, weights=tiny_weights)
        p = tmp_path / "w.segc"
        m.save(p)
        m2 = SegModel.load(p)
        assert m2.cfg == tiny_cfg
        assert m2.encoder_id == "toy-patch"
        assert weights_hash(m2.weights) == weights_hash(tiny_weights)

    def test_corrupt_magic(self, tmp_path, tiny_cfg, tiny_weights):
        from vplab.errors import CorruptCheckpoint
        from vplab.segcore import SegModel, load_base_weights

        m = SegModel(encoder_id="toy-patch", cfg=tiny_cfg, weights=tiny_weights)
        p = tmp_path / "w.segc"
        m.save(p)
        data = p.read_bytes()
        with pytest.raises(CorruptCheckpoint):
            load_base_weights(b"XXXXX" + data[5:])
        with pytest.raises(CorruptCheckpoint):
            load_base_weights(data[: len(data) // 2])
