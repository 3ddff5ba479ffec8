"""Checkpoint container: byte layout, bit-exact round-trips, digests,
and corruption rejection."""
import json
import struct

import numpy as np
import pytest

from slotfill.checkpoint import (
    MAGIC,
    load_checkpoint,
    params_digest,
    save_checkpoint,
    serialize,
)
from slotfill.data import Utterance, build_vocab, encode_and_batch
from slotfill.errors import DataError
from slotfill.models import JointModel, ModelConfig, SlotModel, predict_label_ids


def _corpus(domain="music", n=8):
    return [
        Utterance([f"{domain}{i}", "go"], ["B-x", "O"], domain) for i in range(n)
    ]


def _model(kind="specific", h=3, seed=0):
    utts = _corpus()
    vocab = build_vocab(utts)
    cfg = ModelConfig.for_vocab(
        vocab, embedding_dim=h, hidden_dim=h, mlp_hidden_dim=h, dropout_rate=0.25
    )
    return SlotModel(cfg, vocab, kind, np.random.default_rng(seed)), vocab, utts


def _joint(h=3):
    spec, vocab, utts = _model("specific", h=h)
    gen = SlotModel(
        ModelConfig.for_vocab(vocab, embedding_dim=h, hidden_dim=h, mlp_hidden_dim=h),
        vocab, "general-adv", np.random.default_rng(7),
    )
    return JointModel(spec, gen, np.random.default_rng(3)), vocab, utts


class TestLayout:
    def test_magic_and_header(self):
        model, _, _ = _model()
        raw = serialize(model)
        assert raw[:8] == MAGIC == b"SFCKPT01"
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
        assert header["format_version"] == 1
        assert header["kind"] == "specific"
        assert [p["name"] for p in header["params"]] == list(model.params)
        payload = sum(
            8 * int(np.prod(p["shape"] or [1])) for p in header["params"]
        )
        assert len(raw) == 16 + hlen + payload

    def test_serialize_is_reproducible(self):
        model, _, _ = _model()
        assert serialize(model) == serialize(model)

    def test_no_wallclock_in_header(self):
        model, _, _ = _model()
        raw = serialize(model)
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        text = raw[16 : 16 + hlen].decode("utf-8").lower()
        for word in ("time", "date", "host", "user"):
            assert word not in text


class TestRoundTrip:
    @pytest.mark.parametrize("kind", ["specific", "general", "general-adv"])
    def test_slot_model(self, tmp_path, kind):
        model, vocab, utts = _model(kind)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        back = load_checkpoint(p)
        assert back.kind == kind
        assert back.vocab == vocab
        assert back.config == model.config
        assert list(back.params) == list(model.params)
        for k in model.params:
            assert np.array_equal(back.params[k].data, model.params[k].data), k
        assert serialize(back) == serialize(model)

    def test_predictions_survive(self, tmp_path):
        model, vocab, utts = _model()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        back = load_checkpoint(p)
        (batch,) = encode_and_batch(utts, vocab, 16)
        assert np.array_equal(
            predict_label_ids(back, batch), predict_label_ids(model, batch)
        )

    def test_joint_model(self, tmp_path):
        joint, vocab, _ = _joint()
        p = tmp_path / "j.ckpt"
        save_checkpoint(p, joint)
        back = load_checkpoint(p)
        assert back.kind == "joint"
        assert back.mlp_hidden_dim == joint.mlp_hidden_dim
        assert back.dropout_rate == joint.dropout_rate
        for k in joint.params:
            assert np.array_equal(back.params[k].data, joint.params[k].data), k
        for name in ("specific", "general"):
            a, b = getattr(joint, name), getattr(back, name)
            assert b.kind == a.kind and b.vocab == a.vocab
            for k in a.params:
                assert np.array_equal(b.params[k].data, a.params[k].data), (name, k)
        assert serialize(back) == serialize(joint)


class TestDigest:
    def test_stable(self):
        model, _, _ = _model()
        assert params_digest(model) == params_digest(model)
        assert len(params_digest(model)) == 64

    def test_tracks_parameter_changes(self):
        model, _, _ = _model()
        before = params_digest(model)
        model.params["embedding"].data[0, 0] += 1e-9
        assert params_digest(model) != before

    def test_differs_between_models(self):
        a, _, _ = _model(seed=0)
        b, _, _ = _model(seed=1)
        assert params_digest(a) != params_digest(b)

    def test_joint_digest_covers_encoders(self):
        joint, _, _ = _joint()
        before = params_digest(joint)
        joint.general.params["embedding"].data[0, 0] += 1e-9
        assert params_digest(joint) != before


class TestCorruption:
    def _saved(self, tmp_path):
        model, _, _ = _model()
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model)
        return p, p.read_bytes()

    def test_bad_magic(self, tmp_path):
        p, raw = self._saved(tmp_path)
        p.write_bytes(b"NOTMAGIC" + raw[8:])
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(p)

    def test_truncated_payload(self, tmp_path):
        p, raw = self._saved(tmp_path)
        p.write_bytes(raw[:-10])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(p)

    def test_trailing_garbage(self, tmp_path):
        p, raw = self._saved(tmp_path)
        p.write_bytes(raw + b"\x00" * 8)
        with pytest.raises(DataError, match="trailing"):
            load_checkpoint(p)

    def test_corrupt_header_json(self, tmp_path):
        p, raw = self._saved(tmp_path)
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        p.write_bytes(raw[:16] + b"{" * hlen + raw[16 + hlen :])
        with pytest.raises(DataError, match="header"):
            load_checkpoint(p)

    def test_unsupported_version(self, tmp_path):
        p, raw = self._saved(tmp_path)
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16 : 16 + hlen])
        header["format_version"] = 99
        hj = json.dumps(header).encode()
        p.write_bytes(raw[:8] + struct.pack("<Q", len(hj)) + hj + raw[16 + hlen :])
        with pytest.raises(DataError, match="version"):
            load_checkpoint(p)

    def test_unknown_kind(self, tmp_path):
        p, raw = self._saved(tmp_path)
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16 : 16 + hlen])
        header["kind"] = "mystery"
        hj = json.dumps(header).encode()
        p.write_bytes(raw[:8] + struct.pack("<Q", len(hj)) + hj + raw[16 + hlen :])
        with pytest.raises(DataError, match="kind"):
            load_checkpoint(p)
