"""Synthetic dataset generator: determinism, quantization, stem spectra."""

import numpy as np
import pytest

from soundscape_ml import acoustic
from soundscape_ml.data import cleanse_noise_only, load_manifest
from soundscape_ml.synth import (
    LOW_NOISE_RECIPE,
    SynthRecipe,
    attribute_scores_from_units,
    draw_gains,
    embedding_from_units,
    generate,
    ideal_r2,
    quantize_gain_to_score,
    synthesize_audio,
)


class TestQuantization:
    def test_absent_stem_scores_one(self):
        assert quantize_gain_to_score(None, LOW_NOISE_RECIPE) == 1

    def test_max_gain_scores_five(self):
        recipe = LOW_NOISE_RECIPE
        assert quantize_gain_to_score(recipe.gain_max_db, recipe) == 5

    def test_min_gain_scores_two(self):
        recipe = LOW_NOISE_RECIPE
        assert quantize_gain_to_score(recipe.gain_min_db, recipe) == 2

    def test_only_first_class_at_full_gain(self):
        recipe = LOW_NOISE_RECIPE
        gains = [recipe.gain_max_db] + [None] * 6
        scores = [quantize_gain_to_score(g, recipe) for g in gains]
        assert scores == [5, 1, 1, 1, 1, 1, 1]

    def test_quartile_steps(self):
        recipe = SynthRecipe(gain_min_db=-20.0, gain_max_db=0.0)
        assert quantize_gain_to_score(-15.1, recipe) == 2
        assert quantize_gain_to_score(-10.1, recipe) == 3
        assert quantize_gain_to_score(-5.1, recipe) == 4
        assert quantize_gain_to_score(-4.9, recipe) == 5


class TestAttributeRule:
    def test_outputs_valid_seven_point_scores(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            units = rng.integers(0, 5, size=7) / 4.0
            attrs = attribute_scores_from_units(units, LOW_NOISE_RECIPE, rng)
            for key in ("pl", "ev", "ca", "vi", "an", "un", "ch", "mo"):
                assert 1 <= getattr(attrs, key) <= 7

    def test_deterministic_without_noise(self):
        rng_a = np.random.default_rng(1)
        rng_b = np.random.default_rng(2)
        units = np.array([1.0, 0.0, 0.5, 0.0, 0.75, 0.25, 0.0])
        a = attribute_scores_from_units(units, LOW_NOISE_RECIPE, rng_a)
        b = attribute_scores_from_units(units, LOW_NOISE_RECIPE, rng_b)
        assert a == b

    def test_nature_pleasant_technology_unpleasant(self):
        rng = np.random.default_rng(3)
        nature = attribute_scores_from_units(
            np.array([0, 0, 0, 0, 1.0, 1.0, 0]), LOW_NOISE_RECIPE, rng
        )
        traffic = attribute_scores_from_units(
            np.array([1.0, 1.0, 0, 0, 0, 0, 0]), LOW_NOISE_RECIPE, rng
        )
        assert nature.pl > traffic.pl
        assert nature.an < traffic.an


class TestEmbeddingRule:
    def test_dimension_and_determinism(self):
        rng = np.random.default_rng(4)
        units = np.array([0.25] * 7)
        a = embedding_from_units(units, LOW_NOISE_RECIPE, rng)
        b = embedding_from_units(units, LOW_NOISE_RECIPE, np.random.default_rng(99))
        assert a.shape == (2048,)
        assert (a == b).all()  # noiseless rule ignores the rng

    def test_distinct_scores_distinct_embeddings(self):
        rng = np.random.default_rng(5)
        a = embedding_from_units(np.zeros(7), LOW_NOISE_RECIPE, rng)
        b = embedding_from_units(np.ones(7), LOW_NOISE_RECIPE, rng)
        assert not np.allclose(a, b)


class TestAudio:
    def test_stems_land_in_their_bands(self):
        recipe = LOW_NOISE_RECIPE
        rng = np.random.default_rng(6)
        # Creature stem only: top octave-band energy at 4 kHz or 8 kHz.
        gains = [None] * 7
        gains[4] = recipe.gain_max_db
        levels = acoustic.per_second_levels(synthesize_audio(gains, recipe, rng))
        top = np.argmax(levels.matrix[:, 1:].mean(axis=0))
        assert acoustic.OCTAVE_CENTERS[top] in (4000.0, 8000.0)

    def test_traffic_stem_lands_low(self):
        recipe = LOW_NOISE_RECIPE
        rng = np.random.default_rng(7)
        gains = [None] * 7
        gains[0] = recipe.gain_max_db
        levels = acoustic.per_second_levels(synthesize_audio(gains, recipe, rng))
        top = np.argmax(levels.matrix[:, 1:].mean(axis=0))
        assert acoustic.OCTAVE_CENTERS[top] <= 250.0

    def test_samples_stay_in_range(self):
        rng = np.random.default_rng(8)
        gains = [LOW_NOISE_RECIPE.gain_max_db] * 7
        waveform = synthesize_audio(gains, LOW_NOISE_RECIPE, rng)
        assert np.max(np.abs(waveform.samples)) <= 1.0
        assert len(waveform.samples) == 320000


class TestGenerate:
    def test_same_seed_byte_identical(self, tmp_path):
        recipe = SynthRecipe(attribute_noise=0.2, embedding_noise=0.1, noise_only_rate=0.1)
        a = generate(6, recipe, seed=11, out_dir=tmp_path / "a")
        b = generate(6, recipe, seed=11, out_dir=tmp_path / "b")
        assert a.manifest_path.read_bytes() == b.manifest_path.read_bytes()
        assert a.embeddings_path.read_bytes() == b.embeddings_path.read_bytes()
        for wav in sorted(p.name for p in a.audio_dir.iterdir()):
            assert (a.audio_dir / wav).read_bytes() == (b.audio_dir / wav).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = generate(4, LOW_NOISE_RECIPE, seed=1, out_dir=tmp_path / "a", write_wavs=False)
        b = generate(4, LOW_NOISE_RECIPE, seed=2, out_dir=tmp_path / "b", write_wavs=False)
        assert a.manifest_path.read_bytes() != b.manifest_path.read_bytes()

    def test_outputs_load_through_standard_interfaces(self, tmp_path):
        dataset = generate(5, LOW_NOISE_RECIPE, seed=3, out_dir=tmp_path)
        manifest = load_manifest(dataset.manifest_path, check_audio=True)
        assert len(manifest) == 5
        feature = acoustic.extract_feature(
            dataset.audio_dir / f"{manifest.entries[0].recording.id}.wav"
        )
        assert feature.values.shape == (126,)

    def test_noise_only_rows_get_cleansed(self, tmp_path):
        recipe = SynthRecipe(noise_only_rate=0.5)
        dataset = generate(40, recipe, seed=4, out_dir=tmp_path, write_wavs=False)
        kept = cleanse_noise_only(dataset.manifest)
        assert 0 < len(kept) < 40

    def test_unit_scores_match_manifest(self, tmp_path):
        dataset = generate(8, LOW_NOISE_RECIPE, seed=5, out_dir=tmp_path, write_wavs=False)
        for row, entry in zip(dataset.unit_scores, dataset.manifest.entries):
            np.testing.assert_allclose(row, (entry.sources.as_array() - 1.0) / 4.0)

    def test_zero_noise_targets_are_deterministic_in_scores(self, tmp_path):
        """Identical source-score rows always carry identical impressions."""
        from soundscape_ml.impressions import impressions_from_attributes

        dataset = generate(60, LOW_NOISE_RECIPE, seed=6, out_dir=tmp_path, write_wavs=False)
        seen = {}
        for entry in dataset.manifest.entries:
            key = tuple(entry.sources.as_array())
            pair = impressions_from_attributes(entry.attributes)
            if key in seen:
                assert seen[key] == (pair.p, pair.e)
            seen[key] = (pair.p, pair.e)


class TestIdealR2:
    def test_noiseless_recipe_is_perfectly_predictable(self):
        r2_p, r2_e = ideal_r2(LOW_NOISE_RECIPE, n=400, seed=0)
        assert r2_p == pytest.approx(1.0, abs=1e-12)
        assert r2_e == pytest.approx(1.0, abs=1e-12)

    def test_noise_lowers_the_ceiling(self):
        noisy = SynthRecipe(attribute_noise=1.0)
        r2_p, r2_e = ideal_r2(noisy, n=1500, seed=1)
        assert r2_p < 0.99
        assert r2_e < 0.99
        assert r2_p > 0.0
