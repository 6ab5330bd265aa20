"""Generator determinism, invariant compliance, degradation statistics."""

import numpy as np
import pytest

from mapkit.scene import EPS_CONN, Scene, load_scene, write_scene
from mapkit.scenegen import (GenConfig, compute_resampling_weights,
                             degrade_to_sdmap, generate_corpus, generate_scene,
                             load_corpus)


def test_same_seed_byte_identical(tmp_path):
    cfg = GenConfig()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_scene(generate_scene(17, cfg), a)
    write_scene(generate_scene(17, cfg), b)
    assert a.read_bytes() == b.read_bytes()


def test_distinct_seeds_differ(tmp_path):
    cfg = GenConfig()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_scene(generate_scene(1, cfg), a)
    write_scene(generate_scene(2, cfg), b)
    assert a.read_bytes() != b.read_bytes()


def test_adjacency_endpoint_rule():
    cfg = GenConfig(lanes_min=3, lanes_max=8)
    for seed in range(15):
        s = generate_scene(seed, cfg)
        for i, j in zip(*np.nonzero(s.adj_ll)):
            tail = s.lane_segments[i].centerline.points[-1]
            head = s.lane_segments[j].centerline.points[0]
            assert np.linalg.norm(tail - head) <= EPS_CONN
        assert s.adj_ll.any() or len(s.lane_segments) < 2


def test_traffic_association_rule():
    """Each element attaches to exactly one lane, selected by binning its
    horizontal image position into the lanes' lateral order."""
    cfg = GenConfig(lanes_min=2, lanes_max=6, traffic_min=2, traffic_max=4)
    from mapkit.scene import IMAGE_WIDTH
    for seed in range(15):
        s = generate_scene(seed, cfg)
        n = len(s.lane_segments)
        order = np.argsort([ls.centerline.points[:, 1].mean()
                            for ls in s.lane_segments], kind="stable")
        for t, te in enumerate(s.traffic_elements):
            assert s.adj_lt[:, t].sum() == 1
            cx = 0.5 * (te.bbox[0] + te.bbox[2]) / IMAGE_WIDTH
            expect = order[min(int(cx * n), n - 1)]
            assert s.adj_lt[expect, t]


def test_empty_lane_range():
    s = generate_scene(0, GenConfig(lanes_min=0, lanes_max=0))
    assert len(s.lane_segments) == 0
    assert s.adj_ll.shape == (0, 0)
    assert len(s.traffic_elements) == 0


def test_all_scenes_validate():
    # Scene.__post_init__ enforces invariants; construction = validation
    cfg = GenConfig()
    for seed in range(20):
        assert isinstance(generate_scene(seed, cfg), Scene)


def test_degrade_noop():
    s = generate_scene(3, GenConfig())
    sd = degrade_to_sdmap(s, sigma=0.0, stride=1)
    assert len(sd.lines) == len(s.lane_segments)
    for line, ls in zip(sd.lines, s.lane_segments):
        np.testing.assert_array_equal(line.points, ls.centerline.points)


def test_degrade_line_count():
    s = generate_scene(4, GenConfig(lanes_min=4, lanes_max=6))
    sd = degrade_to_sdmap(s, sigma=1.0, stride=3)
    assert len(sd.lines) == len(s.lane_segments)


def test_degrade_displacement_statistics():
    """Mean ||offset|| of iid N(0, sigma) per axis is sigma * sqrt(pi/2)."""
    sigma = 0.7
    disps = []
    for seed in range(40):
        s = generate_scene(seed, GenConfig(lanes_min=4, lanes_max=6))
        sd = degrade_to_sdmap(s, sigma=sigma, stride=1, seed=seed)
        for line, ls in zip(sd.lines, s.lane_segments):
            disps.append(np.linalg.norm(line.points - ls.centerline.points,
                                        axis=1))
    mean_disp = np.concatenate(disps).mean()
    assert mean_disp == pytest.approx(sigma * np.sqrt(np.pi / 2), rel=0.10)


class TestResamplingWeights:
    def test_identical_scenes_weight_one(self):
        s = generate_scene(5, GenConfig())
        w = compute_resampling_weights([s] * 6)
        np.testing.assert_allclose(w, 1.0)

    def test_mean_one_and_positive(self):
        scenes = [generate_scene(i, GenConfig()) for i in range(12)]
        w = compute_resampling_weights(scenes)
        assert (w > 0).all()
        assert w.mean() == pytest.approx(1.0, abs=1e-12)

    def test_rare_class_gets_max_weight(self):
        """Craft a corpus where exactly one scene holds the rarest class."""
        from mapkit.scene import (Pose2D, Scene, SDMap, TrafficElement)

        def scene_with_classes(classes):
            tes = tuple(TrafficElement((10.0, 10.0, 50.0, 50.0), c)
                        for c in classes)
            return Scene(SDMap(()), (), (), tes,
                         np.zeros((0, 0), bool), np.zeros((0, len(tes)), bool),
                         Pose2D(0, 0, 0))

        scenes = [scene_with_classes([0, 0]) for _ in range(8)]
        scenes.append(scene_with_classes([12]))  # the single rare instance
        w = compute_resampling_weights(scenes)
        assert np.argmax(w) == len(scenes) - 1
        assert w.mean() == pytest.approx(1.0, abs=1e-12)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            compute_resampling_weights([])


class TestCorpus:
    def test_corpus_roundtrip(self, tmp_path):
        cfg = GenConfig(n_scenes=4)
        mp = generate_corpus(cfg, tmp_path / "corpus", base_seed=100)
        scenes = load_corpus(mp)
        assert len(scenes) == 4

    def test_refuses_overwrite(self, tmp_path):
        cfg = GenConfig(n_scenes=2)
        generate_corpus(cfg, tmp_path / "c")
        with pytest.raises(FileExistsError):
            generate_corpus(cfg, tmp_path / "c")
        generate_corpus(cfg, tmp_path / "c", force=True)

    def test_zero_scene_corpus(self, tmp_path):
        mp = generate_corpus(GenConfig(n_scenes=0), tmp_path / "c")
        assert load_corpus(mp) == []

    def test_scene_files_reload(self, tmp_path):
        cfg = GenConfig(n_scenes=3)
        generate_corpus(cfg, tmp_path / "c", base_seed=7)
        s = load_scene(tmp_path / "c" / "scene_0001.json")
        assert isinstance(s, Scene)
