import numpy as np
import pytest

from headpose.detector import (
    HogParams,
    LinearDetector,
    Roi,
    crop,
    detect,
    gray_channel,
    hog_features,
    hog_length,
    oracle_roi,
    sample_training_windows,
    train_detector,
)
from headpose.detector import _normalized_blocks, _cell_histograms, _score_windows
from headpose.geometry import (
    RigidTransform,
    quat_from_axis_angle,
    quat_multiply,
)
from headpose.phantom import Frame, VirtualCamera, build_phantom, render_frame

RNG = np.random.default_rng(11)


def random_pose(rng):
    q = np.array([1.0, 0.0, 0.0, 0.0])
    for ax in range(3):
        q = quat_multiply(
            quat_from_axis_angle(np.eye(3)[ax], rng.uniform(-20, 20)), q)
    return RigidTransform(q, [rng.uniform(-50, 50), rng.uniform(-35, 35),
                              rng.uniform(550, 850)])


@pytest.fixture(scope="module")
def phantom():
    return build_phantom(seed=3, resolution=20000)


@pytest.fixture(scope="module")
def camera():
    return VirtualCamera()


@pytest.fixture(scope="module")
def detector(phantom, camera):
    rng = np.random.default_rng(4)
    poses = [random_pose(rng) for _ in range(60)]
    frames = [render_frame(phantom, camera, p, noise_seed=i)
              for i, p in enumerate(poses)]
    rois = [oracle_roi(camera, p, phantom) for p in poses]
    pos, neg = sample_training_windows(frames, rois, 48, "ir",
                                       negatives_per_frame=3, seed=0)
    return train_detector(pos, neg)


# --- HOG -------------------------------------------------------------------

def test_hog_constant_image_zero():
    desc = hog_features(np.full((16, 16), 7.0))
    assert desc.shape == (hog_length(16, HogParams()),)
    assert np.allclose(desc, 0.0)


def test_hog_vertical_edge_votes():
    # vertical step edge: gradient is horizontal, edge orientation 90deg.
    # With 9 bins over [0, 180) the 90deg vote splits between the two bins
    # whose centers straddle it (80 and 100 deg)
    img = np.zeros((8, 8))
    img[:, 4:] = 10.0
    hist = _cell_histograms(img, cell=8, bins=9)[0, 0]
    assert hist.sum() > 0
    assert hist[4] + hist[5] == pytest.approx(hist.sum())
    assert hist[4] == pytest.approx(hist[5])


def test_hog_horizontal_edge_votes():
    img = np.zeros((8, 8))
    img[4:, :] = 10.0
    hist = _cell_histograms(img, cell=8, bins=9)[0, 0]
    # horizontal edge orientation is 0 deg: all votes in bin 0
    assert hist[0] == pytest.approx(hist.sum())


def test_hog_brightness_shift_invariant():
    img = RNG.uniform(0, 1, size=(24, 24))
    assert np.allclose(hog_features(img), hog_features(img + 100.0))


def test_hog_block_norms_bounded():
    img = RNG.uniform(0, 255, size=(32, 32))
    cells = _cell_histograms(img, 4, 9)
    blocks = _normalized_blocks(cells, 2)
    norms = np.linalg.norm(blocks, axis=2)
    assert np.all(norms <= 1.0 + 1e-6)


def test_hog_length_matches():
    img = RNG.uniform(0, 1, size=(40, 40))
    assert hog_features(img).shape == (hog_length(40, HogParams()),)


def test_hog_too_small_errors():
    with pytest.raises(ValueError, match="smaller"):
        hog_features(np.zeros((4, 4)))


# --- training ---------------------------------------------------------------

def separable_windows(rng, n=60):
    # positives: strong vertical stripes; negatives: flat noise
    xs = np.arange(16)
    stripe = np.where((xs // 2) % 2 == 0, 10.0, 0.0)
    pos = [np.tile(stripe, (16, 1)) + rng.normal(0, 0.1, (16, 16))
           for _ in range(n)]
    neg = [rng.normal(0, 0.1, (16, 16)) for _ in range(n)]
    return pos, neg


def test_train_separable_perfect_holdout():
    pos, neg = separable_windows(np.random.default_rng(0))
    det = train_detector(pos, neg)
    scores_p = [hog_features(w) @ det.weights + det.bias for w in pos]
    scores_n = [hog_features(w) @ det.weights + det.bias for w in neg]
    assert min(scores_p) > det.threshold
    assert max(scores_n) <= det.threshold + 1e-9


def test_train_swapped_labels_negates_scores():
    pos, neg = separable_windows(np.random.default_rng(1))
    a = train_detector(pos, neg)
    b = train_detector(neg, pos)
    assert np.allclose(b.weights, -a.weights, atol=1e-8)
    assert b.bias == pytest.approx(-a.bias, abs=1e-8)


def test_train_deterministic():
    pos, neg = separable_windows(np.random.default_rng(2))
    a = train_detector(pos, neg, seed=3)
    b = train_detector(pos, neg, seed=3)
    assert np.array_equal(a.weights, b.weights)
    assert a.threshold == b.threshold


def test_train_too_few_windows():
    pos, neg = separable_windows(np.random.default_rng(3), n=10)
    with pytest.raises(ValueError, match="50"):
        train_detector(pos, neg)


def test_detector_save_load_roundtrip(tmp_path, detector):
    path = tmp_path / "det.json"
    detector.save(path)
    loaded = LinearDetector.load(path)
    assert np.allclose(loaded.weights, detector.weights)
    assert loaded.bias == pytest.approx(detector.bias)
    assert loaded.window == detector.window
    assert loaded.threshold == pytest.approx(detector.threshold)
    assert loaded.channel == detector.channel


# --- detection ---------------------------------------------------------------

def test_detect_centered_face(phantom, camera, detector):
    pose = RigidTransform([1, 0, 0, 0], [0, 0, 700])
    frame = render_frame(phantom, camera, pose, noise_seed=999)
    roi = detect(frame, detector)
    oracle = oracle_roi(camera, pose, phantom)
    assert roi is not None
    assert np.hypot(roi.cu - oracle.cu, roi.cv - oracle.cv) < 8.0


def test_detect_blank_frame_none(camera, detector):
    h, w = camera.height, camera.width
    blank = Frame(rgb=np.zeros((h, w, 3), dtype=np.float32),
                  depth=np.zeros((h, w), dtype=np.float32),
                  ir=np.zeros((h, w), dtype=np.float32),
                  ground_truth=RigidTransform.identity())
    assert detect(blank, detector) is None


def test_detect_deterministic(phantom, camera, detector):
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [10, 5, 650]),
                         noise_seed=7)
    a = detect(frame, detector)
    b = detect(frame, detector)
    assert (a.cu, a.cv, a.score) == (b.cu, b.cv, b.score)


def test_detect_argmax_property(phantom, camera, detector):
    # the returned score beats every window evaluated at the base level
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [-5, 8, 620]),
                         noise_seed=13)
    roi = detect(frame, detector)
    assert roi is not None
    scores = _score_windows(gray_channel(frame, detector.channel), detector)
    assert roi.score >= scores.max() - 1e-12


# --- oracle ROI and cropping -------------------------------------------------

def test_oracle_roi_centered(phantom, camera):
    pose = RigidTransform([1, 0, 0, 0], [0, 0, 700])
    roi = oracle_roi(camera, pose, phantom)
    assert abs(roi.cu - camera.cx) < 6.0
    assert abs(roi.cv - camera.cy) < 6.0


def test_oracle_roi_translation_moves_center(phantom, camera):
    base = oracle_roi(camera, RigidTransform([1, 0, 0, 0], [0, 0, 700]),
                      phantom)
    moved = oracle_roi(camera, RigidTransform([1, 0, 0, 0], [20, 0, 700]),
                       phantom)
    assert moved.cu > base.cu + 2.0


def test_oracle_roi_inside_image(phantom, camera):
    rng = np.random.default_rng(8)
    for _ in range(20):
        roi = oracle_roi(camera, random_pose(rng), phantom)
        assert 0 <= roi.cu - roi.width / 2
        assert roi.cu + roi.width / 2 <= camera.width - 1
        assert 0 <= roi.cv - roi.height / 2
        assert roi.cv + roi.height / 2 <= camera.height - 1


def test_crop_center(phantom, camera):
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [0, 0, 700]),
                         noise_seed=0)
    roi = Roi(cu=camera.width / 2, cv=camera.height / 2, width=40, height=40,
              score=1.0)
    out = crop(frame, roi, crop_px=60)
    assert out.depth.shape == (60, 60)
    u0 = camera.width // 2 - 30
    v0 = camera.height // 2 - 30
    assert np.array_equal(out.depth, frame.depth[v0:v0 + 60, u0:u0 + 60])
    assert out.ground_truth == frame.ground_truth


def test_crop_clamped_at_border(phantom, camera):
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [0, 0, 700]),
                         noise_seed=0)
    roi = Roi(cu=2.0, cv=1.0, width=40, height=40, score=1.0)
    out = crop(frame, roi, crop_px=60)
    assert out.depth.shape == (60, 60)
    assert np.array_equal(out.depth, frame.depth[0:60, 0:60])


def test_crop_depth_subset(phantom, camera):
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [5, -5, 680]),
                         noise_seed=2)
    out = crop(frame, Roi(cu=70, cv=50, width=40, height=40, score=1.0))
    original = set(frame.depth[frame.depth > 0].tolist())
    assert set(out.depth[out.depth > 0].tolist()) <= original


def test_crop_too_large(phantom, camera):
    frame = render_frame(phantom, camera,
                         RigidTransform([1, 0, 0, 0], [0, 0, 700]),
                         noise_seed=0)
    with pytest.raises(ValueError, match="crop"):
        crop(frame, Roi(cu=80, cv=60, width=40, height=40, score=1.0),
             crop_px=500)
