import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyvad.detection import Detection
from proxyvad.inference import (
    SmoothingConfig,
    assemble_map,
    combine_terms,
    frame_scores,
    gaussian_kernel,
    late_fusion,
    late_fusion_videos,
    mean_filter_3d,
    object_scores,
    run_frame_level,
    run_object_level,
    score_terms,
    temporal_gaussian,
)
from proxyvad.model import ArchitectureConfig, build_model
from proxyvad.spriteworld import VideoClip

ARCH = ArchitectureConfig.from_name("shallow+narrow")


@pytest.fixture(scope="module")
def model():
    return build_model(ARCH, seed=4)


@pytest.fixture(scope="module")
def video():
    return VideoClip(np.random.default_rng(0).random((8, 40, 50, 3)).astype(np.float32))


def _dets(rng, n, n_frames=8, n_det=8):
    out = []
    for _ in range(n):
        x1, y1 = rng.integers(0, 30), rng.integers(0, 20)
        w, h = rng.integers(3, 20), rng.integers(3, 20)
        probs = rng.dirichlet(np.ones(n_det))
        out.append(Detection(int(rng.integers(0, n_frames)), (x1, y1, min(50, x1 + w), min(40, y1 + h)),
                             1.0, probs))
    return out


def test_scores_in_unit_interval(model, video):
    dets = _dets(np.random.default_rng(1), 20)
    terms = score_terms(model, video, dets, 3)
    for k, v in terms.items():
        assert v.shape == (20,)
        assert np.all((v >= 0) & (v <= 1)), k
    s = combine_terms(terms)
    assert np.all((s >= 0) & (s <= 1))


def test_single_task_score_is_that_term(model, video):
    dets = _dets(np.random.default_rng(2), 4)
    full = score_terms(model, video, dets, 3)
    for k in full:
        assert np.allclose(object_scores(model, video, dets, 3, (k,)), full[k])
    assert np.allclose(combine_terms(full), np.mean([full[k] for k in full], axis=0))


def test_edge_windows_clamp(model, video):
    d = Detection(0, (0, 0, 20, 20), 1.0, np.ones(8) / 8)
    assert score_terms(model, video, [d], 3)["T1"].shape == (1,)


def test_no_heads_rejected(model, video):
    with pytest.raises(ValueError):
        score_terms(model, video, _dets(np.random.default_rng(0), 1), 3, tasks=())


def test_assemble_map_cases():
    m = assemble_map((10, 12), [((0, 0, 4, 4), 0.3), ((2, 2, 6, 6), 0.7)])
    assert m[0, 0] == 0.3 and m[3, 3] == 0.7 and m[5, 5] == 0.7 and m[9, 11] == 0.0
    assert np.array_equal(assemble_map((5, 5), []), np.zeros((5, 5)))
    with pytest.raises(ValueError):
        assemble_map((5, 5), [((0, 0, 6, 3), 1.0)])


def _window_mean_oracle(maps, ext):
    T, H, W = maps.shape
    rt, ry, rx = (e // 2 for e in ext)
    out = np.empty_like(maps)
    for t in range(T):
        for y in range(H):
            for x in range(W):
                acc = 0.0
                for dt in range(-rt, rt + 1):
                    for dy in range(-ry, ry + 1):
                        for dx in range(-rx, rx + 1):
                            acc += maps[min(max(t + dt, 0), T - 1), min(max(y + dy, 0), H - 1),
                                        min(max(x + dx, 0), W - 1)]
                out[t, y, x] = acc / (ext[0] * ext[1] * ext[2])
    return out


def test_mean_filter_matches_window_sum_oracle():
    maps = np.random.default_rng(3).random((4, 7, 8))
    cfg = SmoothingConfig((3, 3, 5))
    assert np.allclose(mean_filter_3d(maps, cfg), _window_mean_oracle(maps, (3, 3, 5)), atol=1e-12)


def test_mean_filter_impulse():
    maps = np.zeros((5, 9, 9))
    maps[2, 4, 4] = 1.0
    out = mean_filter_3d(maps, SmoothingConfig((3, 3, 3)))
    assert out[2, 4, 4] == pytest.approx(1 / 27)
    assert out.sum() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0, 1), sigma=st.floats(0.5, 5))
def test_smoothing_preserves_constants(c, sigma):
    maps = np.full((5, 12, 12), c)
    assert np.max(np.abs(mean_filter_3d(maps) - c)) < 1e-9
    series = np.full(40, c)
    assert np.max(np.abs(temporal_gaussian(series, SmoothingConfig(gaussian_sigma=sigma)) - c)) < 1e-9


def test_mean_filter_extent_too_large_rejected():
    with pytest.raises(ValueError):
        mean_filter_3d(np.zeros((2, 10, 10)))


@pytest.mark.parametrize("sigma,radius", [(1.0, 3), (3.0, 9), (0.7, 0), (2.5, 20)])
def test_gaussian_kernel_sums_to_one(sigma, radius):
    k = gaussian_kernel(sigma, radius)
    assert len(k) == 2 * radius + 1
    assert abs(k.sum() - 1) < 1e-9
    assert np.allclose(k, k[::-1])


def test_gaussian_impulse_response_is_kernel():
    cfg = SmoothingConfig(gaussian_sigma=2.0)
    x = np.zeros(41)
    x[20] = 1.0
    out = temporal_gaussian(x, cfg)
    k = gaussian_kernel(2.0, cfg.radius)
    assert np.allclose(out[20 - cfg.radius:20 + cfg.radius + 1], k)
    assert len(out) == len(x)


def test_frame_scores_is_max():
    maps = np.random.default_rng(4).random((3, 5, 6))
    assert np.array_equal(frame_scores(maps), maps.max(axis=(1, 2)))


def test_higher_object_score_raises_frame_score():
    def series(score):
        maps = np.stack([assemble_map((20, 20), [((2, 2, 12, 12), score if f == 5 else 0.1)])
                         for f in range(11)])
        return temporal_gaussian(frame_scores(mean_filter_3d(maps)))
    lo, hi = series(0.3), series(0.9)
    assert np.all(hi >= lo) and hi[5] > lo[5]


def test_object_and_frame_pipelines(model, video):
    rng = np.random.default_rng(5)
    dets = [[d] for d in _dets(rng, 8)]
    for f, ds in enumerate(dets):
        ds[0].frame_index = f
    res = run_object_level(model, video, dets, 2)
    assert res.series.shape == (8,) and res.maps.shape == (8, 40, 50)
    assert [len(s) for s in res.scores] == [1] * 8
    frame = run_frame_level(model, video, dets, 2, 8)
    assert frame.shape == (8,)
    assert np.all((frame >= 0) & (frame <= 1))
    empty = run_object_level(model, video, [[] for _ in range(8)], 2)
    assert np.array_equal(empty.series, np.zeros(8))


def test_late_fusion_properties():
    a = np.array([0.0, 2.0, 4.0])
    b = np.array([1.0, 1.5, 2.0])
    f = late_fusion(a, b)
    assert np.allclose(f, [0.0, 0.5, 1.0])
    assert np.allclose(late_fusion(a * 10 + 3, b), f)  # affine invariance
    assert np.allclose(late_fusion(a, np.ones(3)), a / 8)  # a flat stream contributes zeros
    with pytest.raises(ValueError):
        late_fusion(a, b[:2])


def test_late_fusion_videos_normalises_jointly():
    obj = [np.array([0.0, 1.0]), np.array([2.0])]
    frm = [np.array([0.0, 1.0]), np.array([2.0])]
    out = late_fusion_videos(obj, frm)
    assert [o.tolist() for o in out] == [[0.0, 0.5], [1.0]]
