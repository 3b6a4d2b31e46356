import zipfile

import numpy as np
import pytest
from conftest import tiny_config

from sern.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from sern.model import forward_dialog, init_params


@pytest.fixture
def ckpt(vocab):
    params = init_params(tiny_config(len(vocab), score="concat", window=3), seed=2)
    return Checkpoint(params, vocab, 6, {"seed": 2, "note": "x"})


def test_round_trip(ckpt, tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.params.config == ckpt.params.config
    assert back.regime == 6 and back.meta == ckpt.meta
    assert back.vocab.itos == ckpt.vocab.itos and back.vocab_hash == ckpt.vocab_hash
    for (n, a), (m, b) in zip(ckpt.params.named(), back.params.named()):
        assert n == m
        np.testing.assert_array_equal(a.data, b.data)
    d = [np.array([2, 3]), np.array([4])]
    for p, q in zip(forward_dialog(ckpt.params, d)[0], forward_dialog(back.params, d)[0]):
        assert np.array_equal(p.data, q.data)


def test_bytes_are_reproducible(ckpt, tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    save_checkpoint(tmp_path / "b.ckpt", ckpt)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_members(ckpt, tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    names = zipfile.ZipFile(tmp_path / "m.ckpt").namelist()
    assert names[0] == "meta.json"
    assert {f"params/{n}.npy" for n, _ in ckpt.params.named()} == set(names[1:])


def test_not_a_zip(tmp_path):
    (tmp_path / "m.ckpt").write_text("hello")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def _rewrite_meta(src, dst, edit):
    import json

    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for item in zin.infolist():
            data = zin.read(item.filename)
            if item.filename == "meta.json":
                meta = json.loads(data)
                edit(meta)
                data = json.dumps(meta).encode()
            zout.writestr(item, data)


@pytest.mark.parametrize(
    "edit, match",
    [
        (lambda m: m.update(version=99), "version"),
        (lambda m: m.update(format="other"), "format"),
        (lambda m: m["vocab"]["tokens"].append("zzz"), "hash"),
    ],
)
def test_corrupted_meta(ckpt, tmp_path, edit, match):
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    _rewrite_meta(tmp_path / "m.ckpt", tmp_path / "bad.ckpt", edit)
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(tmp_path / "bad.ckpt")
