import numpy as np
import pytest

from blockprune import (ActivationStats, ContainerError, compute_scores,
                        init_model, load_model, load_scores, load_stats,
                        read_container, save_model, save_scores, save_stats,
                        write_container)
from blockprune.container import parse_tensor_record, tensor_record_bytes
from blockprune.model import named_parameters
from blockprune.tensor import DTYPE
from conftest import tiny_config
from oracles import FROZEN_TENSOR_RECORD_1X2


class TestTensorRecord:
    def test_frozen_bytes(self):
        rec = tensor_record_bytes(np.array([[1.0, 2.0]], dtype=DTYPE))
        assert rec == FROZEN_TENSOR_RECORD_1X2

    def test_round_trip(self, rng):
        arr = rng.standard_normal((3, 5)).astype(DTYPE)
        out, consumed = parse_tensor_record(tensor_record_bytes(arr))
        assert consumed == len(tensor_record_bytes(arr))
        np.testing.assert_array_equal(out, arr)

    def test_vector_round_trip(self):
        arr = np.array([1.5, -2.5, 0.0], dtype=DTYPE)
        out, _ = parse_tensor_record(tensor_record_bytes(arr))
        np.testing.assert_array_equal(out, arr)

    def test_bad_magic_rejected(self):
        rec = bytearray(FROZEN_TENSOR_RECORD_1X2)
        rec[0:4] = b"XXXX"
        with pytest.raises(ContainerError, match="magic"):
            parse_tensor_record(bytes(rec))

    def test_truncated_payload_rejected(self):
        with pytest.raises(ContainerError):
            parse_tensor_record(FROZEN_TENSOR_RECORD_1X2[:-2])


class TestContainerFile:
    def test_write_read_write_byte_identical(self, tmp_path, rng):
        tensors = {"b": rng.standard_normal((2, 3)).astype(DTYPE),
                   "a": rng.standard_normal((4,)).astype(DTYPE)}
        p1, p2 = tmp_path / "one.bip", tmp_path / "two.bip"
        write_container(p1, {"kind": "test", "n": 2}, tensors)
        header, loaded = read_container(p1)
        assert header["kind"] == "test"
        write_container(p2, header, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_name_order_does_not_matter(self, tmp_path, rng):
        a = rng.standard_normal((2, 2)).astype(DTYPE)
        b = rng.standard_normal((2, 2)).astype(DTYPE)
        p1, p2 = tmp_path / "one.bip", tmp_path / "two.bip"
        write_container(p1, {}, {"x": a, "y": b})
        write_container(p2, {}, {"y": b, "x": a})
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_file_magic(self, tmp_path):
        p = tmp_path / "bad.bip"
        p.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ContainerError, match="magic"):
            read_container(p)

    def test_bad_version(self, tmp_path, rng):
        p = tmp_path / "v.bip"
        write_container(p, {}, {"t": rng.standard_normal((1, 1)).astype(DTYPE)})
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(ContainerError, match="version"):
            read_container(p)

    def test_truncated_file(self, tmp_path, rng):
        p = tmp_path / "t.bip"
        write_container(p, {}, {"t": rng.standard_normal((4, 4)).astype(DTYPE)})
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ContainerError):
            read_container(p)


class TestModelPersistence:
    @pytest.mark.parametrize("gated,prenorm", [(False, False), (True, True)])
    def test_model_round_trip(self, tmp_path, gated, prenorm):
        cfg = tiny_config(n_blocks=2, gated=gated, prenorm=prenorm, causal=True)
        m = init_model(cfg, seed=11, init_std=0.3)
        p = tmp_path / "m.bip"
        save_model(p, m)
        out = load_model(p)
        assert out.config == m.config
        for (na, pa), (nb, pb) in zip(named_parameters(m), named_parameters(out)):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)

    def test_save_load_save_byte_identical(self, tmp_path):
        m = init_model(tiny_config(n_blocks=1), seed=5)
        p1, p2 = tmp_path / "a.bip", tmp_path / "b.bip"
        save_model(p1, m)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_pruned_model_round_trip(self, tmp_path):
        from blockprune import SparsityTarget, apply_prune, select_masks
        m = init_model(tiny_config(n_blocks=2), seed=5, init_std=0.4)
        scores = compute_scores(m, "magnitude")
        pruned = apply_prune(m, select_masks(scores, SparsityTarget(0.5)))
        p = tmp_path / "p.bip"
        save_model(p, pruned)
        out = load_model(p)
        assert out.blocks[0].wu.shape == pruned.blocks[0].wu.shape
        np.testing.assert_array_equal(out.blocks[1].wo, pruned.blocks[1].wo)


class TestStatsAndScores:
    def test_stats_round_trip(self, tmp_path, rng):
        stats = ActivationStats(
            mean_abs_xh=[rng.random(8).astype(DTYPE), rng.random(8).astype(DTYPE)],
            mean_abs_xu=[rng.random(16).astype(DTYPE), rng.random(16).astype(DTYPE)],
            token_count=640)
        p = tmp_path / "s.bip"
        save_stats(p, stats)
        out = load_stats(p)
        assert out.token_count == 640
        for l in range(2):
            np.testing.assert_array_equal(out.mean_abs_xh[l], stats.mean_abs_xh[l])
            np.testing.assert_array_equal(out.mean_abs_xu[l], stats.mean_abs_xu[l])

    def test_scores_round_trip(self, tmp_path):
        m = init_model(tiny_config(n_blocks=2), seed=3, init_std=0.4)
        scores = compute_scores(m, "nisp")
        p = tmp_path / "sc.bip"
        save_scores(p, scores)
        out = load_scores(p)
        assert out.method == "nisp"
        for l in range(2):
            np.testing.assert_array_equal(out.ffn[l], scores.ffn[l])
            np.testing.assert_array_equal(out.heads[l], scores.heads[l])
