import numpy as np
import pytest

from physhape.checkpoint import save_tensors, load_tensors, MAGIC
from physhape.errors import IoError
from physhape.nets import DenseNet
from physhape import nets


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a": rng.normal(size=(3, 4, 5)),
        "b/weights": rng.normal(size=(7,)),
        "scalarish": np.array(3.14159),
        "tiny": rng.normal(size=(1, 1)),
    }
    p = tmp_path / "ck.phy3"
    save_tensors(p, tensors)
    back = load_tensors(p)
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].dtype == np.float64
        assert np.array_equal(back[k],
                              np.asarray(tensors[k], dtype=np.float64))
        assert back[k].shape == np.asarray(tensors[k]).shape


def test_file_is_deterministic_function_of_contents(tmp_path):
    t = {"x": np.arange(6.0).reshape(2, 3), "y": np.ones(2)}
    p1, p2 = tmp_path / "a", tmp_path / "b"
    save_tensors(p1, t)
    save_tensors(p2, dict(reversed(list(t.items()))))
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:4] == MAGIC


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(IoError):
        load_tensors(p)


def test_truncated_rejected(tmp_path):
    p = tmp_path / "ck"
    save_tensors(p, {"a": np.ones((4, 4))})
    data = p.read_bytes()
    p.write_bytes(data[:-9])
    with pytest.raises(IoError):
        load_tensors(p)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_tensors(tmp_path / "absent.phy3")


def test_net_checkpoint_roundtrip(tmp_path):
    net = DenseNet((3, 12, 12, 3), kind="tanh", seed=5, out_scale=0.1)
    p = tmp_path / "net.phy3"
    save_tensors(p, net.to_tensors("u/"))
    net2 = DenseNet.from_tensors(load_tensors(p), "u/")
    x = np.array([[0.1, -0.4, 0.7], [0.0, 0.0, 0.0]])
    assert np.array_equal(nets.forward(net, x), nets.forward(net2, x))
    for a, b in zip(net.params(), net2.params()):
        assert np.array_equal(a, b)
