import numpy as np
import pytest

from flowstyle.checkpoint import (
    MAGIC,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from flowstyle.errors import (
    CorruptCheckpointError,
    ImageFormatError,
    MagicMismatchError,
    ShapeError,
    SizeMismatchError,
    VersionMismatchError,
)
from flowstyle.flows import (
    FlowNetConfig,
    build_flownet,
    initialize_actnorms,
    randomize_couplings,
)
from flowstyle.ppm import quantize, read_image, write_image


def trained_like_model(seed=0):
    model = build_flownet(FlowNetConfig(2, 2, 4, 3, 8, 8), seed=seed)
    rng = np.random.default_rng(seed + 1)
    initialize_actnorms(model, rng.random((2, 3, 8, 8)))
    randomize_couplings(model, seed=seed + 2)
    return model


class TestPpm:
    def test_single_white_pixel(self, tmp_path):
        p = tmp_path / "white.ppm"
        p.write_bytes(b"P6 1 1 255\n\xff\xff\xff")
        t = read_image(p)
        assert t.shape == (1, 3, 1, 1)
        np.testing.assert_array_equal(t, np.ones((1, 3, 1, 1)))

    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((1, 3, 5, 7))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_image(a, img)
        write_image(b, read_image(a))
        assert a.read_bytes() == b.read_bytes()

    def test_quantized_tensor_round_trips_exactly(self, tmp_path):
        rng = np.random.default_rng(1)
        img = quantize(rng.random((1, 3, 4, 4))).astype(np.float64) / 255.0
        p = tmp_path / "q.ppm"
        write_image(p, img)
        np.testing.assert_array_equal(read_image(p), img)

    def test_round_half_up(self):
        assert quantize(np.array([0.5]))[0] == 128  # 127.5 rounds up
        assert quantize(np.array([127.4 / 255.0]))[0] == 127
        assert quantize(np.array([-1.0]))[0] == 0
        assert quantize(np.array([2.0]))[0] == 255

    def test_comment_headers_accepted(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes(6))
        assert read_image(p).shape == (1, 3, 1, 2)

    def test_malformed_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5 1 1 255\n\x00")
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6 2 2 255\n" + bytes(5))
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "long.ppm"
        p.write_bytes(b"P6 1 1 255\n" + bytes(4))
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_wrong_maxval_rejected(self, tmp_path):
        p = tmp_path / "hdr.ppm"
        p.write_bytes(b"P6 1 1 65535\n" + bytes(6))
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_write_rejects_batch(self, tmp_path):
        with pytest.raises(ShapeError):
            write_image(tmp_path / "x.ppm", np.zeros((2, 3, 4, 4)))


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, tmp_path):
        model = trained_like_model()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, model)
        save_checkpoint(b, load_checkpoint(a))
        assert a.read_bytes() == b.read_bytes()

    def test_loaded_model_outputs_bit_identical(self, tmp_path):
        model = trained_like_model(seed=3)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        loaded = load_checkpoint(p)
        x = np.random.default_rng(4).random((1, 3, 8, 8))
        np.testing.assert_array_equal(loaded.forward(x), model.forward(x))
        z = model.forward(x)
        np.testing.assert_array_equal(loaded.inverse(z), model.inverse(z))

    def test_parameters_bit_identical(self, tmp_path):
        model = trained_like_model(seed=5)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        loaded = load_checkpoint(p)
        for (na, pa), (nb, pb) in zip(model.param_items(), loaded.param_items()):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)

    def test_initialized_flag_survives(self, tmp_path):
        model = build_flownet(FlowNetConfig(1, 1, 4, 3, 8, 8), seed=6)
        p = tmp_path / "u.ckpt"
        save_checkpoint(p, model)
        assert not load_checkpoint(p).initialized

    def test_truncated_file_rejected(self, tmp_path):
        model = trained_like_model()
        blob = checkpoint_bytes(model)
        p = tmp_path / "t.ckpt"
        p.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = trained_like_model()
        p = tmp_path / "t.ckpt"
        p.write_bytes(checkpoint_bytes(model) + b"\x00")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)

    def test_flipped_magic_rejected(self, tmp_path):
        blob = bytearray(checkpoint_bytes(trained_like_model()))
        blob[0] ^= 0xFF
        p = tmp_path / "m.ckpt"
        p.write_bytes(bytes(blob))
        with pytest.raises(MagicMismatchError):
            load_checkpoint(p)

    def test_wrong_version_rejected(self, tmp_path):
        blob = bytearray(checkpoint_bytes(trained_like_model()))
        blob[4] = 99
        p = tmp_path / "v.ckpt"
        p.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(p)

    def test_size_mismatch_rejected(self, tmp_path):
        model = trained_like_model()
        blob = bytearray(checkpoint_bytes(model))
        # First layer block: squeeze at offset 32 (tag u8 + count u64).
        # Corrupt the actnorm count that follows it.
        offset = 32 + 9
        blob[offset + 1 : offset + 9] = (5).to_bytes(8, "little")
        p = tmp_path / "s.ckpt"
        p.write_bytes(bytes(blob))
        with pytest.raises(SizeMismatchError):
            load_checkpoint(p)

    def test_magic_is_stable(self):
        assert MAGIC == b"PFN1"
