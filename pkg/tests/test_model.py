import numpy as np
import pytest

from proxyvad import numerics as nx
from proxyvad.model import (
    ArchitectureConfig,
    build_model,
    count_parameters,
    forward_decoder,
    forward_head,
    forward_shared,
    load_checkpoint,
    save_checkpoint,
)

ARCHS = ["shallow+narrow", "shallow+wide", "deep+narrow", "deep+wide"]


@pytest.fixture(scope="module")
def models():
    return {a: build_model(ArchitectureConfig.from_name(a), seed=0) for a in ARCHS}


def expected_count(filters, n_pool, n_distill, side=64):
    """Walk layer shapes by hand: conv weight + bias (+ gamma, beta)."""
    total, c = 0, 3
    for f in filters:
        total += 27 * c * f + f + 2 * f
        c = f
    pooled = side // 2 ** n_pool // 2
    for units in (2, 2, n_distill):
        total += 9 * c * 32 + 32 + 2 * 32
        total += pooled * pooled * 32 * units + units
    widths = list(reversed(filters))[:-1] + [3]
    c_dec = c
    for i, w in enumerate(widths):
        total += 9 * c_dec * w + w + (0 if i == len(widths) - 1 else 2 * w)
        c_dec = w
    return total


def test_table_filter_counts():
    assert ArchitectureConfig.from_name("shallow+narrow").backbone_filters() == (16, 32, 32)
    assert ArchitectureConfig.from_name("shallow+wide").backbone_filters() == (32, 64, 64)
    assert ArchitectureConfig.from_name("deep+narrow").backbone_filters() == (16, 16, 32, 32, 32, 32)
    assert ArchitectureConfig.from_name("deep+wide").backbone_filters() == (32, 32, 64, 64, 64, 64)


def test_backbone_kernels_match_plan(models):
    m = models["shallow+narrow"]
    kernels = [p.shape for n, p in m.params.items() if n.startswith("backbone") and n.endswith("kernel")]
    assert kernels == [(3, 3, 3, 3, 16), (3, 3, 3, 16, 32), (3, 3, 3, 32, 32)]


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        ArchitectureConfig(depth="medium")
    with pytest.raises(ValueError):
        ArchitectureConfig(width="huge")


def test_same_seed_bit_identical():
    a = build_model(ArchitectureConfig(), seed=7)
    b = build_model(ArchitectureConfig(), seed=7)
    c = build_model(ArchitectureConfig(), seed=8)
    for n in a.params:
        assert a.params[n].data.tobytes() == b.params[n].data.tobytes()
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


def test_init_convention(models):
    m = models["shallow+narrow"]
    for n, p in m.params.items():
        if n.endswith(".bias") or n.endswith(".beta"):
            assert not p.data.any()
        elif n.endswith(".gamma"):
            assert np.all(p.data == 1)
    k = m.params["backbone.conv2.kernel"].data
    assert np.std(k) == pytest.approx(np.sqrt(2 / (27 * 32)), rel=0.05)


@pytest.mark.parametrize("arch", ARCHS)
def test_symmetry_invariants(models, arch):
    m = models[arch]
    n_pool = sum(1 for k, _ in m.backbone_layers if k.startswith("pool"))
    n_conv = sum(1 for k, _ in m.backbone_layers if k == "conv")
    assert sum(1 for k, _ in m.decoder_layers if k == "up") == n_pool
    assert sum(1 for k, _ in m.decoder_layers if k.startswith("conv")) == n_conv


def test_deep_decoder_interleaving():
    plan = ArchitectureConfig.from_name("deep+narrow").decoder_plan()
    kinds = ["up" if s == "u" else "conv" for s in plan]
    assert kinds == ["conv", "up"] * 4 + ["conv", "conv"]
    assert plan[-1] == 3


def test_shallow_feature_shape_t7(models):
    x = np.random.default_rng(0).random((7, 64, 64, 3))
    assert forward_shared(models["shallow+narrow"], x).shape == (1, 8, 8, 32)


def test_deep_wide_feature_shape_t1(models):
    x = np.random.default_rng(0).random((1, 64, 64, 3))
    assert forward_shared(models["deep+wide"], x).shape == (1, 4, 4, 64)


def test_zero_input_finite(models):
    m = models["shallow+narrow"]
    first = nx.conv3d(np.zeros((7, 64, 64, 3), np.float32), m.params["backbone.conv0.kernel"],
                      m.params["backbone.conv0.bias"])
    assert not first.data.any()
    out = forward_shared(m, np.zeros((7, 64, 64, 3)))
    assert np.all(np.isfinite(out.data))


def test_wrong_side_rejected(models):
    with pytest.raises(ValueError):
        forward_shared(models["shallow+narrow"], np.zeros((7, 32, 32, 3)))


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("T", [1, 6, 7])
def test_shape_contract(models, arch, T):
    m = models[arch]
    f = forward_shared(m, np.random.default_rng(T).random((T, 64, 64, 3)))
    assert forward_head(m, "T1", f).shape == (2,)
    assert forward_head(m, "T2", f).shape == (2,)
    assert forward_head(m, "T4", f).shape == (m.config.n_distill,)
    assert forward_decoder(m, f).shape == (64, 64, 3)


def test_t3_head_rejected(models):
    m = models["shallow+narrow"]
    f = forward_shared(m, np.zeros((6, 64, 64, 3)))
    with pytest.raises(ValueError):
        forward_head(m, "T3", f)


def test_paper_scale_distill_width():
    m = build_model(ArchitectureConfig(n_distill=1080), seed=0)
    f = forward_shared(m, np.zeros((1, 64, 64, 3)))
    assert forward_head(m, "T4", f).shape == (1080,)


def test_batch_permutation_equivariant(models):
    m = models["shallow+narrow"]
    x = np.random.default_rng(1).random((3, 7, 64, 64, 3))
    perm = [2, 0, 1]
    a = forward_head(m, "T1", forward_shared(m, x)).data
    b = forward_head(m, "T1", forward_shared(m, x[perm])).data
    np.testing.assert_allclose(b, a[perm], atol=1e-5)


@pytest.mark.parametrize("arch", ARCHS)
def test_count_matches_shape_walk(models, arch):
    m = models[arch]
    cfg = m.config
    assert count_parameters(m) == expected_count(cfg.backbone_filters(), cfg.n_pool, cfg.n_distill)


def test_count_ordering(models):
    c = {a: count_parameters(m) for a, m in models.items()}
    assert c["shallow+wide"] > c["shallow+narrow"]
    assert c["deep+wide"] > c["deep+narrow"]
    assert c["shallow+narrow"] < c["deep+wide"]


def test_batch_of_two_backward_no_nan():
    m = build_model(ArchitectureConfig(), seed=0)
    rng = np.random.default_rng(2)
    f = m.forward_shared(rng.random((2, 7, 64, 64, 3)), training=True)
    loss = nx.cross_entropy_loss(m.forward_head("T1", f, training=True), np.eye(2))
    loss = loss + nx.l1_loss(m.forward_decoder(f, training=True), rng.random((2, 64, 64, 3)))
    t4 = m.forward_head("T4", f, training=True)
    loss = loss + nx.l1_loss(t4, np.zeros(t4.shape))
    loss.backward()
    for n, p in m.params.items():
        if n.startswith("T2."):
            assert p.grad is None  # head unused in this loss
            continue
        assert p.grad is not None and p.grad.shape == p.shape, n
        assert np.all(np.isfinite(p.grad)), n


def test_checkpoint_round_trip(tmp_path):
    m = build_model(ArchitectureConfig.from_name("deep+narrow"), seed=3)
    m.forward_shared(np.random.default_rng(0).random((2, 7, 64, 64, 3)), training=True)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, {"epoch": 4})
    loaded, meta = load_checkpoint(path)
    assert meta == {"epoch": 4}
    assert loaded.config == m.config
    a, b = m.state_arrays(), loaded.state_arrays()
    assert list(a) == list(b)
    for n in a:
        assert a[n].dtype == b[n].dtype and a[n].tobytes() == b[n].tobytes()
    save_checkpoint(tmp_path / "again.ckpt", loaded, meta)
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(p)
