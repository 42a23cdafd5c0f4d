"""Checkpoint round-trips and integrity failures."""
import json

import numpy as np
import pytest

from ratext.checkpoint import blob_path, load_checkpoint, save_checkpoint
from ratext.errors import ContractViolation, DataError
from ratext.params import ParamStore


def small_store() -> ParamStore:
    store = ParamStore(dtype=np.float64)
    rng = np.random.default_rng(11)
    store.add("enc.W", rng.standard_normal((4, 3)), group="generator")
    store.add("enc.b", rng.standard_normal(3), group="generator")
    store.add("disc.w", rng.standard_normal((3, 1)), group="discriminator")
    return store


class TestRoundTrip:
    def test_bit_exact_float32(self, tmp_path):
        store = small_store()
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path, tag="model", meta={"note": 1})
        values, manifest = load_checkpoint(path, expect_tag="model")

        for name, p in store.params.items():
            expected = p.data.astype("<f4")
            assert np.array_equal(values[name], expected.astype(np.float64).astype("<f4"))
        assert manifest["format"] == "ratext-checkpoint"
        assert manifest["tag"] == "model"
        assert manifest["meta"] == {"note": 1}

    def test_save_load_save_stable(self, tmp_path):
        store = small_store()
        p1 = tmp_path / "a.ckpt"
        save_checkpoint(store, p1, tag="model", meta={})
        values, _ = load_checkpoint(p1)
        store.load_values(values)
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(store, p2, tag="model", meta={})
        assert blob_path(p1).read_bytes() == blob_path(p2).read_bytes()

    def test_groups_preserved(self, tmp_path):
        store = small_store()
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path, tag="model", meta={})
        _, manifest = load_checkpoint(path)
        assert "enc.W" in manifest["groups"]["generator"]
        assert "disc.w" in manifest["groups"]["discriminator"]


class TestIntegrity:
    def test_missing_blob(self, tmp_path):
        store = small_store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(store, path, tag="model", meta={})
        blob_path(path).unlink()
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_truncated_blob(self, tmp_path):
        store = small_store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(store, path, tag="model", meta={})
        blob = blob_path(path)
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_wrong_format_name(self, tmp_path):
        store = small_store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(store, path, tag="model", meta={})
        manifest = json.loads(path.read_text())
        manifest["format"] = "something-else"
        path.write_text(json.dumps(manifest))
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_tag_mismatch(self, tmp_path):
        store = small_store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(store, path, tag="lm", meta={})
        with pytest.raises(ContractViolation):
            load_checkpoint(path, expect_tag="model")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "absent.ckpt")
