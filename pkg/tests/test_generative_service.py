import math

import numpy as np
import pytest
from scipy.special import expit

from conftest import identity_bank, random_image, stripes
from deepframe.models.filter_bank import ConvLayer, FilterBank
from deepframe.models.frame_model import NonStationaryFrame
from deepframe.models.generative_layer import GenerativeLayer
from deepframe.models.image import Image
from deepframe.models.learning import LearnConfig
from deepframe.models.oracle_spec import OracleSpec
from deepframe.services.bank_service import BankService
from deepframe.services.frame_service import FrameService
from deepframe.services.generative_service import GenerativeService
from deepframe.services.learner_service import LearnerService
from deepframe.services.oracle_service import OracleService

PAS = 1e-6


def _couche(rng, base=None, experts=2, fenetre=2, forme=(8, 8, 1)):
    base = base or BankService.make_random_bank([3], activation="relu", padding="zero", seed=6)
    poids = rng.standard_normal((experts, base.n_filters, fenetre, fenetre))
    return GenerativeLayer(base, poids, rng.standard_normal(experts), forme)


def _deux_couches_4x4():
    """Base relu 2x2 puis couche apprise 2x2 : detecteurs 2x2 sur des images 4x4."""
    base = FilterBank((ConvLayer(np.array([[[[0.7, -0.4], [0.25, 0.55]]]]), np.array([0.13]),
                                 1, "valid", "relu"),))
    return GenerativeLayer(base, np.array([[[[0.5, -0.3], [0.2, 0.4]]]]), np.array([-0.1]), (4, 4, 1))


def test_detecteurs_biais_seul(rng):
    layer = _couche(rng)
    pile = BankService.forward(layer.base, random_image(rng))
    eteint = layer.with_weights(np.zeros(layer.weights.shape), np.full(2, -1.0))
    allume = layer.with_weights(np.zeros(layer.weights.shape), np.full(2, 1.0))
    assert np.all(GenerativeService.detect(eteint, pile) == 0)
    assert np.all(GenerativeService.detect(allume, pile) == 1)
    assert GenerativeService.detect(allume, pile).dtype == np.uint8


def test_pre_activation_nulle_eteinte(rng):
    layer = _couche(rng)
    pile = BankService.forward(layer.base, random_image(rng))
    nul = layer.with_weights(np.zeros(layer.weights.shape), np.zeros(2))
    assert np.all(GenerativeService.detect(nul, pile) == 0)


def test_detecteurs_binaires(rng):
    layer = _couche(rng)
    x = np.stack([random_image(rng).to_chw() for _ in range(3)])
    delta = GenerativeService.detect_batch(layer, x)
    assert set(np.unique(delta)) <= {0.0, 1.0}


def test_gradient_nul_sans_detection(rng):
    layer = _couche(rng)
    layer = layer.with_weights(layer.weights, np.full(2, -1e6))
    x = np.stack([random_image(rng).to_chw() for _ in range(2)])
    gradient = GenerativeService.grad_generative_layer(layer, x, x[::-1] * 0.5)
    assert np.all(gradient.kernels == 0.0)
    assert np.all(gradient.bias == 0.0)


def test_une_seule_detection():
    base = identity_bank("valid")
    # un detecteur 1x1 qui ne s'active qu'au-dessus de 0.9
    layer = GenerativeLayer(base, np.ones((1, 1, 1, 1)), np.array([-0.9]), (3, 3, 1))
    img = np.zeros((1, 1, 3, 3))
    img[0, 0, 1, 2] = 1.5
    chaines = np.zeros((2, 1, 3, 3))
    gradient = GenerativeService.grad_generative_layer(layer, np.concatenate([img, np.zeros_like(img)]), chaines)
    assert gradient.kernels[0, 0, 0, 0] == pytest.approx(1.5 / 2)
    assert gradient.bias[0] == pytest.approx(0.5)


def test_gradient_egal_retropropagation_composee(rng):
    layer = _couche(rng)
    x = np.stack([random_image(rng).to_chw() for _ in range(3)])
    stats, comptes = GenerativeService.gated_stats(layer, x)
    composee = BankService.backward_weights_batch(
        layer.feature_bank(), x, np.ones((3,) + layer.detector_shape())
    )
    assert np.allclose(stats * 3, composee[-1].kernels, rtol=1e-10, atol=1e-12)
    assert np.allclose(comptes * 3, composee[-1].bias, rtol=1e-10, atol=1e-12)


def test_energie_produit_d_experts(rng):
    layer = _couche(rng)
    img = random_image(rng)
    base = BankService.forward(layer.base, img).maps
    _, pre = GenerativeService._top_pre(layer, base[None])
    attendu = np.sum(img.data ** 2) / 2 - np.sum(np.maximum(pre, 0))
    assert FrameService.energy(layer, img).energy == pytest.approx(attendu, rel=1e-12)


def test_force_on_equivaut_au_modele_objet():
    base = BankService.make_random_bank([2], activation="relu", padding="circular", seed=12)
    images = [stripes(6, 6, 3), Image(np.roll(stripes(6, 6, 3).data, 1, axis=1), 0.5)]
    config = LearnConfig(gamma0=0.05, iterations=4, langevin_steps=10, n_chains=3, epsilon=0.1, master_seed=2)
    objet, etat_objet, journal_objet = LearnerService.fit_object(base, images, config)
    couche, etat_couche, journal_couche = GenerativeService.fit_layer(
        base, images, 1, (6, 6), config, padding="valid", force_on=True, init_scale=0.0,
    )
    assert np.array_equal(couche.weights[0], objet.w)
    assert np.all(couche.biases == 0.0)
    assert np.array_equal(etat_couche.images, etat_objet.images)
    assert [r.max_abs_diff for r in journal_couche.records] == [r.max_abs_diff for r in journal_objet.records]


def test_raffinement_du_sommet_equivaut_a_fit_layer(rng):
    base = BankService.make_random_bank([2], activation="relu", padding="zero", seed=5)
    images = [stripes(8, 8), stripes(8, 8, 2)]
    poids = 0.1 * rng.standard_normal((2, 2, 3, 3))
    biais = np.array([-0.05, 0.02])
    config = LearnConfig(gamma0=0.1, iterations=3, langevin_steps=5, n_chains=2, epsilon=0.1)
    appris, etat_a, _ = GenerativeService.fit_layer(base, images, 2, 3, config, initial=poids, bias_init=biais)
    depart = GenerativeLayer(base, poids, biais, (8, 8, 1))
    raffine, etat_b, _ = GenerativeService.refine_all_layers(depart, images, config, trainable={1})
    assert np.array_equal(appris.weights, raffine.weights)
    assert np.array_equal(appris.biases, raffine.biases)
    assert np.array_equal(etat_a.images, etat_b.images)


def test_raffinement_couches_de_base(rng):
    base = BankService.make_random_bank([2], activation="relu", padding="zero", seed=5)
    depart = GenerativeLayer(base, 0.1 * rng.standard_normal((2, 2, 3, 3)), np.zeros(2), (8, 8, 1))
    config = LearnConfig(gamma0=0.05, iterations=2, langevin_steps=5, n_chains=2, epsilon=0.1)
    seul_bas, _, journal = GenerativeService.refine_all_layers(depart, [stripes(8, 8)], config, trainable={0})
    assert np.array_equal(seul_bas.weights, depart.weights)
    assert not np.array_equal(seul_bas.base.layers[0].kernels, base.layers[0].kernels)
    assert len(journal.records) == 2
    assert seul_bas.mean_offset == 0.5


def test_raffinement_ne_touche_pas_les_couches_gelees(rng):
    base = BankService.make_random_bank([2, 2], activation="relu", padding="zero", seed=6)
    depart = GenerativeLayer(base, 0.1 * rng.standard_normal((2, 2, 3, 3)), np.zeros(2), (10, 10, 1))
    config = LearnConfig(gamma0=0.05, iterations=2, langevin_steps=5, n_chains=2, epsilon=0.1)
    raffine, _, _ = GenerativeService.refine_all_layers(depart, [stripes(10, 10)], config, trainable={1})
    assert np.array_equal(raffine.base.layers[0].kernels, base.layers[0].kernels)
    assert np.array_equal(raffine.base.layers[0].bias, base.layers[0].bias)
    assert not np.array_equal(raffine.base.layers[1].kernels, base.layers[1].kernels)
    assert np.array_equal(raffine.weights, depart.weights)


def test_gradient_toutes_couches_differences_finies():
    spec = OracleSpec(4, 4, (0.0, 1.0))
    layer = _deux_couches_4x4()
    observe = OracleService.state_images(spec, [3, 1000, 20000, 40000, 65535])

    def vraisemblance(m):
        scores = [FrameService.log_score(m, Image.from_chw(i)) for i in observe]
        return math.fsum(scores) / len(scores) - OracleService.exact_partition(spec, m)

    exact = OracleService.exact_expectation(spec, layer, lower_layers=[0])
    haut_obs = GenerativeService.gated_stats(layer, observe)
    bas_obs = GenerativeService.lower_layer_stats(layer, observe, [0])
    gradient_haut = haut_obs[0] - exact[0]
    gradient_bas = bas_obs[0] - exact[2]

    for index in [(0, 0, 0, 0), (0, 0, 1, 1)]:
        plus, moins = layer.weights.copy(), layer.weights.copy()
        plus[index] += PAS
        moins[index] -= PAS
        numerique = (vraisemblance(layer.with_weights(plus)) - vraisemblance(layer.with_weights(moins))) / (2 * PAS)
        assert gradient_haut[index] == pytest.approx(numerique, rel=1e-4, abs=1e-8)

    couche = layer.base.layers[0]
    for index in [(0, 0, 0, 1), (0, 0, 1, 0)]:
        plus, moins = couche.kernels.copy(), couche.kernels.copy()
        plus[index] += PAS
        moins[index] -= PAS
        l_plus = vraisemblance(layer.with_base(layer.base.with_layers([couche.with_weights(plus, couche.bias)])))
        l_moins = vraisemblance(layer.with_base(layer.base.with_layers([couche.with_weights(moins, couche.bias)])))
        assert gradient_bas[index] == pytest.approx((l_plus - l_moins) / (2 * PAS), rel=1e-4, abs=1e-8)


def test_point_fixe_exact_couche_1x1():
    spec = OracleSpec(2, 2, (0.0, 1.0))
    trois = np.array([[[[1.0, 1.0], [1.0, 0.0]]]])
    deux = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    images = [Image.from_chw(trois[0])] * 6 + [Image.from_chw(deux[0])] * 4
    config = LearnConfig(gamma0=0.5, iterations=500, tolerance=1e-9)
    layer, _, journal = GenerativeService.fit_layer(
        identity_bank("valid"), images, 1, 1, config, initial=np.ones((1, 1, 1, 1)), bias_init=-0.5,
        expectation=lambda m: OracleService.exact_expectation(spec, m),
    )
    assert journal.converged
    x = np.stack([i.to_chw() for i in images])
    observe = GenerativeService.gated_stats(layer, x)
    exact = OracleService.exact_expectation(spec, layer)
    assert np.max(np.abs(observe[0] - exact[0])) <= 1e-6
    assert np.max(np.abs(observe[1] - exact[1])) <= 1e-6
    assert expit(layer.weights[0, 0, 0, 0] + layer.biases[0]) == pytest.approx(0.65, abs=1e-6)


def test_biais_depuis_alpha():
    assert GenerativeService.bias_from_alpha(0.5, 0.0) == 0.0
    valeurs = [GenerativeService.bias_from_alpha(a, 1.3) for a in (0.01, 0.2, 0.7, 0.99)]
    assert valeurs == sorted(valeurs)
    assert GenerativeService.bias_from_alpha(1e-12, 0.0) < -25


def test_alpha_retrouve_sur_melange():
    spec = OracleSpec(3, 3, (0.0, 1.0))
    bank = FilterBank((ConvLayer(np.array([[[[1.0, -0.5], [0.3, 0.8]]]]), np.zeros(1)),))
    model = NonStationaryFrame(bank, np.array([[[0.8, -0.4], [0.6, 1.1]]]), 1.0, (3, 3, 1))
    log_z = OracleService.exact_partition(spec, model)
    alpha = 0.3
    rng = np.random.default_rng(21)
    n = 4000
    depuis_p = rng.uniform(size=n) < alpha
    _, x_p = OracleService.exact_sample(spec, model, int(depuis_p.sum()), seed=22)
    x_q = OracleService.state_images(spec, rng.integers(0, spec.n_states, size=n - int(depuis_p.sum())))
    scores = FrameService.feature_terms_batch(model, np.concatenate([x_p, x_q]))
    posterieur = expit(scores + GenerativeService.bias_from_alpha(alpha, log_z))
    assert posterieur.mean() == pytest.approx(alpha, abs=0.05)


def test_softplus_et_relu():
    r = np.linspace(-30, 30, 2001)
    ecart = GenerativeService.softplus(r) - np.maximum(r, 0)
    assert np.all(ecart >= 0)
    assert np.all(ecart <= math.log(2) + 1e-15)


def test_rapport_du_melange():
    score, log_z, alpha = 1.7, 0.4, 0.25
    attendu = math.log(alpha * math.exp(score - log_z) + 1 - alpha)
    assert GenerativeService.mixture_log_ratio(score, log_z, alpha) == pytest.approx(attendu, rel=1e-12)


def test_biais_par_quantile(rng):
    layer = _couche(rng, experts=3)
    x = np.stack([random_image(rng).to_chw() for _ in range(6)])
    biais = GenerativeService.quantile_biases(layer, x, 0.9)
    delta = GenerativeService.detect_batch(layer.with_weights(layer.weights, biais), x)
    for j in range(3):
        assert delta[:, j].mean() == pytest.approx(0.1, abs=0.02)


def test_fit_layer_initialisation_deterministe():
    base = BankService.make_random_bank([2], activation="relu", padding="zero", seed=5)
    config = LearnConfig(iterations=2, langevin_steps=3, n_chains=2, epsilon=0.1, master_seed=4)
    a = GenerativeService.fit_layer(base, [stripes(8, 8)], 3, 3, config)
    b = GenerativeService.fit_layer(base, [stripes(8, 8)], 3, 3, config)
    assert np.array_equal(a[0].weights, b[0].weights)
    assert np.array_equal(a[0].biases, b[0].biases)
    assert a[0].detector_shape() == (3, 6, 6)
