import math

import numpy as np
import pytest

from conftest import identity_bank, random_image
from deepframe.exceptions import GeometryError
from deepframe.models.frame_model import NonStationaryFrame, StationaryFrame
from deepframe.models.image import Image
from deepframe.services.bank_service import BankService
from deepframe.services.frame_service import FrameService

PAS = 1e-6


def _modele(rng, classe=NonStationaryFrame, sigma_sq=1.0):
    bank = BankService.make_random_bank([3, 2], activation="relu", padding="circular", seed=8)
    model = classe.zeros(bank, (8, 8, 1), sigma_sq)
    return model.with_weights(rng.standard_normal(model.stats_shape()))


def test_energie_nulle_et_gaussienne():
    model = NonStationaryFrame.zeros(identity_bank(), (1, 2, 1))
    assert FrameService.energy(model, Image(np.zeros((1, 2, 1)))).energy == 0.0
    rapport = FrameService.energy(model, Image(np.array([[[1.0], [1.0]]])))
    assert rapport.energy == 1.0
    assert rapport.feature_term == 0.0


def test_energie_recalculee(rng):
    model = _modele(rng)
    img = random_image(rng)
    cartes = BankService.forward(model.bank, img).maps
    attendu = np.sum(img.data ** 2) / 2.0 - np.sum(model.w * cartes)
    assert FrameService.energy(model, img).energy == pytest.approx(attendu, rel=1e-12)
    lot = np.stack([img.to_chw(), img.to_chw()])
    assert FrameService.energy_batch(model, lot).tolist() == [FrameService.energy(model, img).energy] * 2


def test_energie_croit_a_l_infini(rng):
    model = _modele(rng)
    img = random_image(rng)
    energies = [FrameService.energy(model, Image(t * img.data)).energy for t in (10, 100, 1000)]
    assert energies[0] < energies[1] < energies[2]
    assert energies[2] > 1e4


def test_gradient_poids_nuls_exact(rng):
    model = NonStationaryFrame.zeros(identity_bank(), (8, 8, 1), 0.5)
    img = random_image(rng)
    assert np.array_equal(FrameService.grad_energy_image(model, img).data, img.data / 0.5)


def test_gradient_image_nulle_relu():
    bank = BankService.make_random_bank([3], activation="relu", padding="zero", seed=1)
    bank = bank.with_layers([bank.layers[0].with_weights(bank.layers[0].kernels, np.zeros(3))])
    model = NonStationaryFrame(bank, np.ones((3, 6, 6)), 1.0, (6, 6, 1))
    assert np.all(FrameService.grad_energy_image(model, Image(np.zeros((6, 6, 1)))).data == 0.0)


@pytest.mark.parametrize("classe", [NonStationaryFrame, StationaryFrame])
def test_gradient_energie_differences_finies(rng, classe):
    model = _modele(rng, classe, sigma_sq=0.8)
    x = random_image(rng).to_chw()[None]
    analytique = FrameService.grad_energy_image_batch(model, x)
    for index in [(0, 0, 0, 0), (0, 0, 3, 5), (0, 0, 7, 7), (0, 0, 4, 1)]:
        plus, moins = x.copy(), x.copy()
        plus[index] += PAS
        moins[index] -= PAS
        numerique = (FrameService.energy_batch(model, plus)[0] - FrameService.energy_batch(model, moins)[0]) / (2 * PAS)
        assert analytique[index] == pytest.approx(numerique, rel=1e-4, abs=1e-6)


def test_score_independant_de_sigma(rng):
    model = _modele(rng)
    img = random_image(rng)
    autre = NonStationaryFrame(model.bank, model.w, 7.0, model.image_shape)
    cartes = BankService.forward(model.bank, img).maps
    assert FrameService.log_score(model, img) == FrameService.log_score(autre, img)
    assert FrameService.log_score(model, img) == pytest.approx(float(np.vdot(model.w, cartes)), rel=1e-12)
    assert FrameService.log_score(NonStationaryFrame.zeros(model.bank, (8, 8, 1)), img) == 0.0


def test_score_de_detection_rectifie(rng):
    model = _modele(rng)
    img = random_image(rng)
    score = FrameService.log_score(model, img)
    assert FrameService.detection_score(model, img, score + 1.0) == 0.0
    assert FrameService.detection_score(model, img, score - 2.0) == pytest.approx(2.0)


def test_stats_regroupees_constantes():
    model = StationaryFrame.zeros(identity_bank(), (4, 4, 1))
    assert FrameService.pooled_stats(model, Image(np.full((4, 4, 1), 0.25))).tolist() == [0.25]


def test_stats_regroupees_invariantes_par_translation(rng):
    model = _modele(rng, StationaryFrame)
    img = random_image(rng)
    decalee = Image(np.roll(img.data, (3, 1), axis=(0, 1)))
    assert np.array_equal(FrameService.pooled_stats(model, img), FrameService.pooled_stats(model, decalee))
    assert FrameService.energy(model, img).energy == FrameService.energy(model, decalee).energy
    cartes = BankService.forward(model.bank, img).maps
    assert np.allclose(FrameService.pooled_stats(model, img), cartes.mean(axis=(1, 2)), rtol=1e-12)


def test_geometrie_incompatible(rng):
    model = _modele(rng)
    with pytest.raises(GeometryError):
        FrameService.energy(model, random_image(rng, 9, 8))
