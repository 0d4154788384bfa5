import numpy as np
import pytest

from proxyvad.spriteworld import (
    SceneConfig,
    VideoClip,
    generate_dataset,
    ground_truth_boxes,
    read_ground_truth,
    read_video,
    test_anomaly_kinds,
    write_ground_truth,
    write_video,
)

SMALL = SceneConfig(n_train_videos=2, n_test_videos=3, frames_per_video=60, anomaly_duration=(20, 30))


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SMALL)


@pytest.fixture(scope="module")
def default_data():
    return generate_dataset(SceneConfig())


def test_same_seed_bit_identical(small):
    train2, test2, _ = generate_dataset(SMALL)
    train, test, _ = small
    for a, b in zip(train, train2):
        assert a.frames.tobytes() == b.frames.tobytes()
    for (a, ga), (b, gb) in zip(test, test2):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert ga == gb


def test_different_seed_differs(small):
    other = generate_dataset(SceneConfig(**{**SMALL.__dict__, "seed": 1}))
    assert not np.array_equal(other[0][0].frames, small[0][0].frames)


def test_pixels_in_unit_range(small):
    train, test, _ = small
    for clip in train + [c for c, _ in test]:
        assert clip.frames.dtype == np.float32
        assert clip.frames.min() >= 0 and clip.frames.max() <= 1


def test_no_anomaly_types_gives_normal_test():
    cfg = SceneConfig(n_train_videos=1, n_test_videos=2, frames_per_video=20, anomaly_types=(),
                      anomaly_duration=(5, 10))
    _, test, _ = generate_dataset(cfg)
    for _, gt in test:
        assert not gt.frame_labels.any()


def test_training_split_is_normal(small):
    _, _, train_gt = small
    for gt in train_gt:
        assert not gt.frame_labels.any()
        assert all(not r.anomalous for rs in gt.regions for r in rs)


def test_default_anomalous_fraction(default_data):
    _, test, _ = default_data
    labels = np.concatenate([gt.frame_labels for _, gt in test])
    assert 0.1 <= labels.mean() <= 0.6


def test_every_anomaly_type_covered(default_data):
    cfg = SceneConfig()
    kinds = test_anomaly_kinds(cfg)
    assert set(kinds) == set(cfg.anomaly_types)
    _, test, _ = default_data
    for kind, (_, gt) in zip(kinds, test):
        assert gt.frame_labels.any(), kind


def test_label_consistency(default_data):
    _, test, train_gt = default_data
    for gt in train_gt + [g for _, g in test]:
        gt.check_consistency()
        for rs in gt.regions:
            tracks = [r.track_id for r in rs if r.anomalous]
            assert len(tracks) == len(set(tracks))


def test_boxes_inside_frame(default_data):
    _, test, _ = default_data
    for clip, gt in test:
        h, w = clip.frame_size
        for f in range(gt.n_frames):
            for (x1, y1, x2, y2), _, _ in ground_truth_boxes(gt, f):
                assert 0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h


def test_single_sprite_box_is_tight():
    cfg = SceneConfig(n_train_videos=1, n_test_videos=1, frames_per_video=5, n_normal_sprites=1,
                      anomaly_types=(), anomaly_duration=(1, 2))
    train, _, train_gt = generate_dataset(cfg)
    clip, gt = train[0], train_gt[0]
    background, _, _ = generate_dataset(SceneConfig(**{**cfg.__dict__, "n_normal_sprites": 0}))
    diff = np.abs(clip.frames[2] - background[0].frames[2]).max(axis=-1) > 0
    ys, xs = np.nonzero(diff)
    (box, _, _), = ground_truth_boxes(gt, 2)
    x1, y1, x2, y2 = box
    assert abs(xs.min() - x1) <= 1 and abs(ys.min() - y1) <= 1
    assert abs(xs.max() + 1 - x2) <= 1 and abs(ys.max() + 1 - y2) <= 1


def test_out_of_range_frame_rejected(small):
    _, test, _ = small
    with pytest.raises(IndexError):
        ground_truth_boxes(test[0][1], SMALL.frames_per_video)


def test_tracks_match_union_of_frame_boxes(default_data):
    _, test, _ = default_data
    for _, gt in test:
        for tid, regions in gt.tracks.items():
            from_frames = [(f, r.box) for f in range(gt.n_frames)
                           for r in gt.regions[f] if r.track_id == tid]
            assert from_frames == regions


def test_fast_motion_sprite_is_fast(default_data):
    _, test, _ = default_data
    kinds = test_anomaly_kinds(SceneConfig())
    v = kinds.index("fast_motion")
    gt = test[v][1]
    tid = gt.anomalous_track_ids()[0]
    centres = np.array([((b[0] + b[2]) / 2, (b[1] + b[3]) / 2) for _, b in gt.tracks[tid]])
    steps = np.hypot(*np.diff(centres, axis=0).T)
    assert np.median(steps) >= 4.0


def test_unseen_shape_class_not_in_training(default_data):
    _, test, train_gt = default_data
    seen = {r.cls for gt in train_gt for rs in gt.regions for r in rs}
    v = test_anomaly_kinds(SceneConfig()).index("unseen_shape")
    anomalous = {r.cls for rs in test[v][1].regions for r in rs if r.anomalous}
    assert anomalous and not anomalous & seen


@pytest.mark.parametrize("kwargs", [
    {"normal_shapes": ()},
    {"speed_anomalous": 1.5},
    {"anomaly_types": ("teleport",)},
])
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ValueError):
        SceneConfig(**kwargs)


def test_video_container_round_trip(tmp_path, small):
    clip = small[0][0]
    p = tmp_path / "v.spwv"
    write_video(p, clip)
    t, h, w = clip.frames.shape[:3]
    raw = p.read_bytes()
    assert len(raw) == 16 + t * h * w * 3
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [t, h, w]
    assert np.array_equal(read_video(p).frames, clip.frames)


def test_truncated_container_rejected(tmp_path, small):
    p = tmp_path / "v.spwv"
    write_video(p, small[0][0])
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ValueError):
        read_video(p)


def test_ground_truth_round_trip(tmp_path, small):
    gt = small[1][0][1]
    write_ground_truth(tmp_path / "gt.txt", gt)
    back = read_ground_truth(tmp_path / "gt.txt")
    assert back == gt


def test_uint8_round_trip():
    px = np.random.default_rng(0).integers(0, 256, (2, 4, 4, 3), dtype=np.uint8)
    assert np.array_equal(VideoClip.from_uint8(px).to_uint8(), px)
