import json

import numpy as np
import pytest

from flatscan import io as fio
from flatscan.datasetgen import (FAMILIES, DatasetManifest, MaterialRecipe, Sample, augment,
                                 corpus_stats, generate_dataset, generate_material, image_stats,
                                 make_sample, random_recipe, sub_seed, write_sample)
from flatscan.material import MaterialMaps, TextureMap, validate_material
from flatscan.metrics import evaluate
from flatscan.shading import scanner_pair


def _two_pass(images):
    # explicit two-pass per-channel accumulation
    n, total = 0, np.zeros(3)
    for im in images:
        for px in im.reshape(-1, 3):
            total += px
            n += 1
    mean = total / n
    sq = np.zeros(3)
    for im in images:
        for px in im.reshape(-1, 3):
            sq += (px - mean) ** 2
    return mean, np.sqrt(sq / n)


class TestRecipe:
    @pytest.mark.parametrize("kw", [{"family": "knit"}, {"size": 16}, {"period": 5},
                                    {"period": 200}, {"hole_density": 1.5},
                                    {"hole_radius": 9.0}, {"bump_amplitude": 75.0},
                                    {"base_color": (0.1, 0.2)}, {"specular_range": (0.6, 0.2)},
                                    {"transmittance": 0.95}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MaterialRecipe(**kw)

    def test_dict_roundtrip(self):
        r = random_recipe("weave", 4, 64)
        assert MaterialRecipe.from_dict(json.loads(json.dumps(r.to_dict()))) == r

    def test_sub_seed_stable_and_distinct(self):
        assert sub_seed(7, 3, 0) == sub_seed(7, 3, 0)
        assert len({sub_seed(7, i, k) for i in range(5) for k in range(2)}) == 10


class TestGenerateMaterial:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_valid_and_deterministic(self, family):
        r = random_recipe(family, 11, 64)
        a, b = generate_material(r), generate_material(r)
        validate_material(a)
        assert a == b
        assert a.albedo.shape == (64, 64, 3) and a.ppi == 1200.0

    def test_mesh_without_holes(self):
        m = generate_material(random_recipe("mesh", 3, 64, hole_density=0.0))
        assert np.all(m.opacity.data == 1.0)

    def test_mesh_holes_transmit(self):
        m = generate_material(random_recipe("mesh", 3, 64, hole_density=1.0))
        holes = m.opacity.data == 0.0
        assert holes.any()
        np.testing.assert_array_equal(m.transmittance.data[holes], 1.0)

    @pytest.mark.parametrize("period", [8, 12, 16])
    def test_weave_autocorrelation_peak(self, period):
        m = generate_material(random_recipe("weave", 5, 128, period=period,
                                            hole_radius=period / 4))
        x = m.albedo.data - m.albedo.data.mean(axis=(0, 1))
        # first dominant peak; multiples of the period score about the same
        lags = np.arange(2, period + period // 2 + 1)
        ac = [np.mean(x[:, :-k] * x[:, k:]) for k in lags]
        assert lags[int(np.argmax(ac))] == period

    def test_different_seeds_differ(self):
        a = generate_material(random_recipe("grain", 1, 64))
        b = generate_material(random_recipe("grain", 2, 64))
        assert a != b


class TestPairs:
    def test_specular_free_diffuse_is_albedo(self):
        r = random_recipe("grain", 8, 64, specular_range=(0.0, 0.0), transmittance=0.0)
        s = make_sample(r, intensity=1.3)
        np.testing.assert_allclose(s.i_d.data, 1.3 * s.maps.albedo.data, atol=1e-6)

    def test_directional_variance_exceeds_diffuse(self):
        wins = 0
        for k in range(20):
            s = make_sample(random_recipe(FAMILIES[k % 3], 200 + k, 48))
            # compared relative to brightness: I_l is uniformly darker by about cos(55)/pi
            cv_l = s.i_l.data.var() / s.i_l.data.mean() ** 2
            cv_d = s.i_d.data.var() / s.i_d.data.mean() ** 2
            wins += cv_l >= cv_d
        assert wins == 20

    def test_aligned_shapes(self):
        s = make_sample(random_recipe("mesh", 1, 48))
        assert s.i_d.shape == s.i_l.shape == (48, 48, 3)


def _sample(seed=1, family="weave", size=64):
    return make_sample(random_recipe(family, seed, size))


class TestAugment:
    def test_empty_is_identity(self):
        s = _sample()
        out = augment(s, [])
        assert out.maps == s.maps and out.i_d == s.i_d and out.i_l == s.i_l
        assert out.augmentations == ()

    @pytest.mark.parametrize("op", ["flip_h", "flip_v"])
    def test_flips_consistent(self, op):
        s = _sample()
        out = augment(s, [op])
        axis = 1 if op == "flip_h" else 0
        np.testing.assert_array_equal(out.i_d.data, np.flip(s.i_d.data, axis))
        np.testing.assert_array_equal(out.i_l.data, np.flip(s.i_l.data, axis))
        for name, t in out.maps.maps().items():
            np.testing.assert_array_equal(t.data, np.flip(s.maps.maps()[name].data, axis))

    def test_crop(self):
        s = _sample(size=160)
        out = augment(s, ["crop128"], seed=3)
        assert out.i_d.shape == (128, 128, 3) and out.maps.albedo.shape == (128, 128, 3)
        (tag,) = out.augmentations
        x0, y0 = (int(v) for v in tag.split("@")[1].split(","))
        np.testing.assert_array_equal(out.i_l.data, s.i_l.data[y0:y0 + 128, x0:x0 + 128])
        with pytest.raises(ValueError):
            augment(_sample(size=64), ["crop128"])

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            augment(_sample(), ["rotate"])

    def test_deterministic_per_seed(self):
        s = _sample(size=160)
        a = augment(s, ["crop128", "rescale"], seed=9)
        b = augment(s, ["crop128", "rescale"], seed=9)
        c = augment(s, ["crop128", "rescale"], seed=10)
        assert a.augmentations == b.augmentations and a.i_l == b.i_l
        assert a.augmentations != c.augmentations

    def test_rescale_gt_self_consistent(self):
        out = augment(_sample(), ["rescale:300"])
        assert out.maps.ppi == pytest.approx(300.0)
        assert out.i_d.shape[:2] == out.maps.albedo.shape[:2] == (16, 16)
        r = evaluate(out.maps, out.maps)
        assert r.l1_albedo == r.l1_specular == r.l1_roughness == r.l1_transmittance == 0.0
        assert r.l_bsdf == 0.0 and r.angular_normals == 0.0 and r.jaccard_opacity == 1.0

    @pytest.mark.parametrize("ops", [["flip_h"], ["flip_v", "crop:48"], ["rescale:600"],
                                     ["crop:48", "rescale:900", "flip_h"]])
    def test_pair_alignment(self, ops):
        s = _sample(seed=4, family="grain")
        out = augment(s, ops, seed=2)
        i_d, i_l = scanner_pair(out.maps)
        assert np.abs(i_d.data - out.i_d.data).mean() < 0.02
        assert np.abs(i_l.data - out.i_l.data).mean() < 0.02


class TestCorpusStats:
    def _manifest(self, tmp_path, images):
        samples = []
        for k, im in enumerate(images):
            d = tmp_path / f"s{k}"
            for key in ("i_d", "i_l"):
                fio.write_png(d / f"{key}.png", im, transfer="linear", bits=16)
            samples.append({"i_d": f"s{k}/i_d.png", "i_l": f"s{k}/i_l.png"})
        return DatasetManifest(tmp_path, samples)

    def test_constant(self, tmp_path):
        c = 0.25
        m = self._manifest(tmp_path, [np.full((4, 4, 3), c)] * 3)
        st = corpus_stats(m)
        q = round(c * 65535) / 65535
        np.testing.assert_allclose(st["i_d"]["mean"], q, rtol=0, atol=1e-12)
        np.testing.assert_allclose(st["i_l"]["std"], 0.0, atol=1e-12)
        assert m.stats == st

    def test_zero_one(self, tmp_path):
        m = self._manifest(tmp_path, [np.zeros((4, 4, 3)), np.ones((4, 4, 3))])
        st = corpus_stats(m)
        np.testing.assert_allclose(st["i_d"]["mean"], 0.5)
        np.testing.assert_allclose(st["i_d"]["std"], 0.5)

    def test_two_pass_oracle(self, rng):
        images = [rng.uniform(size=(5, 7, 3)) for _ in range(4)]
        mean, std = _two_pass(images)
        st = image_stats(images)
        np.testing.assert_allclose(st["mean"], mean, rtol=0, atol=1e-9)
        np.testing.assert_allclose(st["std"], std, rtol=0, atol=1e-9)

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            corpus_stats(DatasetManifest(tmp_path, []))
        with pytest.raises(ValueError):
            image_stats([])


class TestDataset:
    def test_layout_and_regeneration(self, tmp_path):
        man = generate_dataset(tmp_path / "ds", 3, seed=5, size=48)
        assert len(man.samples) == 3
        back = DatasetManifest.read(tmp_path / "ds" / "manifest.json")
        assert back.samples == json.loads(json.dumps(man.samples))
        assert back.stats == man.stats
        assert [s["recipe"]["family"] for s in back.samples] == list(FAMILIES)
        for entry in back.samples:
            for key in ("i_d", "i_l"):
                assert (back.root / entry[key]).is_file()
            assert isinstance(fio.load_material(back.root / entry["material"]), MaterialMaps)
        # rebuild the first sample from its stored recipe and compare file bytes
        entry = back.samples[0]
        s = make_sample(MaterialRecipe.from_dict(entry["recipe"]))
        write_sample(s, tmp_path / "again")
        for key in ("i_d", "i_l"):
            assert (tmp_path / "again" / f"{key}.png").read_bytes() == \
                (back.root / entry[key]).read_bytes()

    def test_same_seed_same_manifest(self, tmp_path):
        a = generate_dataset(tmp_path / "a", 2, seed=1, size=32)
        b = generate_dataset(tmp_path / "b", 2, seed=1, size=32)
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_augmented_entries_recorded(self, tmp_path):
        man = generate_dataset(tmp_path, 2, seed=1, size=64, augmentations=["flip_h", "crop:32"])
        for entry in man.samples:
            assert entry["augmentations"][0] == "flip_h"
            assert entry["augmentations"][1].startswith("crop:32@")

    def test_bad_count(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, 0)


def test_sample_is_frozen():
    s = _sample(size=32)
    assert isinstance(s, Sample) and isinstance(s.i_d, TextureMap)
