import numpy as np
import pytest

from conftest import random_model
from shapefit.errors import FormatError
from shapefit.pdm import (
    generate_shape,
    inverse_prior_diag,
    load_model,
    prior_penalty,
    project_shape,
    save_model,
    train_pdm,
)
from shapefit.shapes import SimilarityTransform, apply_similarity, to_vector


def jittered_copies(base, count, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        t = SimilarityTransform(rng.uniform(0.8, 1.2), rng.uniform(-0.2, 0.2), *rng.normal(size=2))
        out.append(apply_similarity(t, base))
    return out


BASE = np.array([[0.0, 1.0], [2.0, -0.5], [-1.5, 0.5], [0.5, -2.0], [-1.0, -1.0]])


class TestTraining:
    def test_identical_shapes_give_zero_modes(self):
        model = train_pdm([BASE.copy() for _ in range(12)])
        assert model.n_modes == 0
        # the training shape is a similarity transform of the mean, so the
        # model reproduces it exactly through project/generate
        rebuilt = generate_shape(model, project_shape(model, BASE))
        np.testing.assert_allclose(rebuilt, BASE, atol=1e-9)

    def test_rank_one_construction(self):
        rng = np.random.default_rng(1)
        shapes, model0 = [], train_pdm(jittered_copies(BASE, 12))
        # build a direction orthogonal to the similarity subspace of the mean
        direction = rng.standard_normal(10)
        sim = model0.similarity_bases
        direction -= sim @ (sim.T @ direction)
        direction /= np.linalg.norm(direction)
        for c in np.linspace(-0.02, 0.02, 40):
            shapes.append((model0.mean_vector + c * direction).reshape(-1, 2))
        model = train_pdm(shapes, variance_retained=0.999999)
        assert model.n_modes == 1
        overlap = abs(float(model.components[:, 0] @ direction))
        assert overlap == pytest.approx(1.0, abs=1e-6)

    def test_spectrum_recovery(self, training_corpus, face_model):
        _, record = training_corpus
        target = np.sort(record.mode_variances)[::-1]
        assert face_model.n_modes == len(target)
        np.testing.assert_allclose(face_model.eigenvalues, target, rtol=0.10)

    def test_basis_orthonormal(self, face_model):
        gram = face_model.basis.T @ face_model.basis
        assert np.abs(gram - np.eye(face_model.n_params)).max() < 1e-8

    def test_retained_fraction_honored(self, training_corpus):
        shapes, _ = training_corpus
        for retained in (0.5, 0.8, 0.95):
            from shapefit.pdm import train_pdm_with_spectrum

            model, spectrum = train_pdm_with_spectrum(shapes, variance_retained=retained)
            fraction = model.eigenvalues.sum() / spectrum.sum()
            assert fraction >= retained - 1e-12
            if model.n_modes > 1:
                smaller = model.eigenvalues[:-1].sum() / spectrum.sum()
                assert smaller < retained

    def test_component_count_override(self, training_corpus):
        shapes, _ = training_corpus
        model = train_pdm(shapes, n_components=4)
        assert model.n_modes == 4

    def test_too_few_shapes(self):
        with pytest.raises(ValueError):
            train_pdm([BASE])


class TestGenerateProject:
    def test_zero_params_give_mean(self, face_model):
        shape = generate_shape(face_model, np.zeros(face_model.n_params))
        np.testing.assert_array_equal(to_vector(shape), face_model.mean_vector)

    def test_single_mode_excitation(self, face_model):
        p = np.zeros(face_model.n_params)
        p[4] = np.sqrt(face_model.eigenvalues[0])
        shape = generate_shape(face_model, p)
        expected = face_model.mean_vector + p[4] * face_model.components[:, 0]
        np.testing.assert_allclose(to_vector(shape), expected, atol=1e-15)

    def test_project_inverts_generate(self, face_model):
        rng = np.random.default_rng(2)
        p0 = rng.normal(scale=0.01, size=face_model.n_params)
        shape = generate_shape(face_model, p0)
        np.testing.assert_allclose(project_shape(face_model, shape), p0, atol=1e-10)

    def test_generate_project_identity_on_span(self, face_model):
        rng = np.random.default_rng(3)
        p0 = rng.normal(scale=0.1, size=face_model.n_params)
        shape = generate_shape(face_model, p0)
        rebuilt = generate_shape(face_model, project_shape(face_model, shape))
        assert np.abs(rebuilt - shape).max() < 1e-9

    def test_residual_orthogonal_to_basis(self, face_model):
        rng = np.random.default_rng(4)
        arbitrary = rng.normal(size=(face_model.n_points, 2)) * 50
        residual = to_vector(arbitrary) - to_vector(
            generate_shape(face_model, project_shape(face_model, arbitrary))
        )
        assert np.abs(face_model.basis.T @ residual).max() < 1e-8

    def test_dimension_mismatch(self, face_model):
        with pytest.raises(ValueError):
            generate_shape(face_model, np.zeros(face_model.n_params + 1))
        with pytest.raises(ValueError):
            project_shape(face_model, np.zeros((face_model.n_points + 1, 2)))


class TestPrior:
    def test_zero_penalty(self, face_model):
        assert prior_penalty(face_model, np.zeros(face_model.n_params)) == 0.0

    def test_unit_mahalanobis(self, face_model):
        p = np.zeros(face_model.n_params)
        p[4] = np.sqrt(face_model.eigenvalues[0])
        assert prior_penalty(face_model, p) == pytest.approx(1.0, abs=1e-12)

    def test_matches_dense_oracle(self):
        model = random_model(seed=5)
        rng = np.random.default_rng(6)
        p = rng.normal(size=model.n_params)
        dense = np.zeros((model.n_modes, model.n_modes))
        np.fill_diagonal(dense, 1.0 / model.eigenvalues)
        oracle = float(p[4:] @ dense @ p[4:])
        assert prior_penalty(model, p) == pytest.approx(oracle, abs=1e-12)

    def test_invariant_to_similarity_coefficients(self):
        model = random_model(seed=7)
        rng = np.random.default_rng(8)
        p = rng.normal(size=model.n_params)
        q = p.copy()
        q[:4] = rng.normal(size=4) * 100
        assert prior_penalty(model, p) == prior_penalty(model, q)

    def test_inverse_prior_conventions(self):
        model = random_model(seed=9)
        diag = inverse_prior_diag(model)
        assert np.all(diag[:4] == 0)
        np.testing.assert_allclose(diag[4:], 1.0 / model.eigenvalues, atol=1e-15)
        assert np.all(inverse_prior_diag(model, np.inf) == 0)
        np.testing.assert_allclose(
            inverse_prior_diag(model, 4.0)[4:], 0.25 / model.eigenvalues, atol=1e-15
        )


class TestModelFile:
    def test_roundtrip_exact(self, face_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(face_model, path)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.mean_vector, face_model.mean_vector)
        np.testing.assert_array_equal(loaded.components, face_model.components)
        np.testing.assert_array_equal(loaded.eigenvalues, face_model.eigenvalues)
        np.testing.assert_array_equal(loaded.similarity_bases, face_model.similarity_bases)

    def test_rejects_unknown_version(self, face_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(face_model, path)
        text = path.read_text().replace('"version": 1', '"version": 99')
        path.write_text(text)
        with pytest.raises(FormatError):
            load_model(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("not a document")
        with pytest.raises(FormatError):
            load_model(path)
