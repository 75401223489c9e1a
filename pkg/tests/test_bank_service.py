import itertools
import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from conftest import identity_bank
from deepframe.exceptions import ChannelChainError, GeometryError
from deepframe.models.filter_bank import ConvLayer, FilterBank, LayerGradient, Padding
from deepframe.models.image import FeatureStack, Image
from deepframe.services.bank_service import BankService

PAS = 1e-6
COUDE = 1e-3

CONFIGURATIONS = list(itertools.product(
    ("valid", "zero", "circular"), ("identity", "relu", "abs"), ((0, 0), (2, 2), (3, 1)), (1, 2),
))
# deux instances aleatoires par configuration : 108 cas pour les images, 108 pour les poids
REPLICAS = (0, 1)


def _loin_des_coudes(bank, x) -> bool:
    """Pas de pre-activation proche de 0, pas de maximum ex aequo dans une fenetre active."""
    _, traces = BankService.forward_batch(bank, x, keep_trace=True)
    for trace in traces:
        couche = trace.layer
        if couche.activation.rectifying and np.min(np.abs(trace.pre)) < COUDE:
            return False
        if couche.pooled:
            fenetres = sliding_window_view(
                trace.activated, (couche.pool_window, couche.pool_window), axis=(2, 3)
            )[:, :, ::couche.pool_stride, ::couche.pool_stride]
            tri = np.sort(fenetres.reshape(fenetres.shape[:4] + (-1,)), axis=-1)
            if np.any((tri[..., -1] - tri[..., -2] < COUDE) & (np.abs(tri[..., -1]) > COUDE)):
                return False
    return True


def _instance(padding, activation, pool, stride, graine):
    rng = np.random.default_rng(graine)
    bank = BankService.make_random_bank(
        [3, 2], kernel_size=3, activation=activation, padding=padding, stride=stride,
        pool_window=pool[0], pool_stride=pool[1], seed=graine,
    )
    for _ in range(50):
        x = rng.standard_normal((1, 1, 15, 15))
        if _loin_des_coudes(bank, x):
            g = rng.standard_normal(BankService.forward_batch(bank, x).shape)
            return bank, x, g
    pytest.skip("pas d'instance loin des coudes")


def _produit(bank, x, g) -> float:
    return math.fsum((g * BankService.forward_batch(bank, x)).ravel())



def _remplacer(bank, i, couche):
    return bank.with_layers(bank.layers[:i] + (couche,) + bank.layers[i + 1:])


@pytest.mark.parametrize("replique", REPLICAS)
@pytest.mark.parametrize("padding,activation,pool,stride", CONFIGURATIONS)
def test_gradient_image_differences_finies(padding, activation, pool, stride, replique):
    graine = len(REPLICAS) * CONFIGURATIONS.index((padding, activation, pool, stride)) + replique
    bank, x, g = _instance(padding, activation, pool, stride, graine)
    analytique = BankService.backward_image_batch(bank, x, g)
    numerique = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, moins = x.copy(), x.copy()
        plus[index] += PAS
        moins[index] -= PAS
        numerique[index] = (_produit(bank, plus, g) - _produit(bank, moins, g)) / (2 * PAS)
    echelle = max(1.0, float(np.max(np.abs(numerique))))
    assert np.max(np.abs(analytique - numerique)) / echelle < 1e-4


@pytest.mark.parametrize("replique", REPLICAS)
@pytest.mark.parametrize("padding,activation,pool,stride", CONFIGURATIONS)
def test_gradient_poids_differences_finies(padding, activation, pool, stride, replique):
    graine = 1000 + len(REPLICAS) * CONFIGURATIONS.index((padding, activation, pool, stride)) + replique
    bank, x, g = _instance(padding, activation, pool, stride, graine)
    gradients = BankService.backward_weights_batch(bank, x, g)
    for i, couche in enumerate(bank.layers):
        numerique = np.zeros_like(couche.kernels)
        for index in np.ndindex(couche.kernels.shape):
            plus, moins = couche.kernels.copy(), couche.kernels.copy()
            plus[index] += PAS
            moins[index] -= PAS
            numerique[index] = (_produit(_remplacer(bank, i, couche.with_weights(plus, couche.bias)), x, g)
                                - _produit(_remplacer(bank, i, couche.with_weights(moins, couche.bias)), x, g)) / (2 * PAS)
        echelle = max(1.0, float(np.max(np.abs(numerique))))
        assert np.max(np.abs(gradients[i].kernels - numerique)) / echelle < 1e-4

        numerique = np.zeros_like(couche.bias)
        for k in range(couche.out_channels):
            plus, moins = couche.bias.copy(), couche.bias.copy()
            plus[k] += PAS
            moins[k] -= PAS
            numerique[k] = (_produit(_remplacer(bank, i, couche.with_weights(couche.kernels, plus)), x, g)
                            - _produit(_remplacer(bank, i, couche.with_weights(couche.kernels, moins)), x, g)) / (2 * PAS)
        echelle = max(1.0, float(np.max(np.abs(numerique))))
        assert np.max(np.abs(gradients[i].bias - numerique)) / echelle < 1e-4


def test_identite_1x1(rng):
    img = Image(rng.standard_normal((5, 4, 1)))
    pile = BankService.forward(identity_bank(), img)
    assert np.array_equal(pile.maps[0], img.data[:, :, 0])
    retour = BankService.backward_image(identity_bank(), img, FeatureStack(np.ones((1, 5, 4))))
    assert np.array_equal(retour.data, np.ones((5, 4, 1)))


def test_geometrie_valid_et_pooling():
    couche = ConvLayer(np.zeros((2, 1, 3, 3)), np.zeros(2), 1, "valid", "relu", 2, 2)
    bank = FilterBank((couche,))
    assert bank.output_shape(8, 8) == (2, 3, 3)
    assert BankService.forward_batch(bank, np.zeros((1, 1, 8, 8))).shape == (1, 2, 3, 3)


def test_origine_avec_pooling():
    couche = ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), 1, "valid", "identity", 2, 2)
    assert FilterBank((couche,)).origin() == (2, 0)
    x = np.zeros((1, 1, 8, 8))
    x[0, 0, 4, 6] = 1.0
    cartes = BankService.forward_batch(FilterBank((couche,)), x)
    assert cartes[0, 0, 2, 3] == 1.0
    rembourre = ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1), 1, "zero", "relu", 2, 2)
    assert FilterBank((rembourre,)).origin() == (2, -1)
    pile = BankService.forward(FilterBank((rembourre,)), Image(np.zeros((8, 8))))
    assert (pile.stride, pile.offset) == (2, -1)


def test_image_plus_petite_que_le_champ():
    bank = FilterBank((ConvLayer(np.zeros((1, 1, 5, 5)), np.zeros(1)),))
    with pytest.raises(GeometryError):
        BankService.forward_batch(bank, np.zeros((1, 1, 3, 3)))


def test_chaine_de_canaux_incoherente():
    c1 = ConvLayer(np.zeros((3, 1, 3, 3)), np.zeros(3))
    c2 = ConvLayer(np.zeros((2, 4, 3, 3)), np.zeros(2))
    with pytest.raises(ChannelChainError):
        FilterBank((c1, c2))


def test_max_pool_premier_maximum():
    couche = ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), 1, "valid", "identity", 2, 2)
    bank = FilterBank((couche,))
    x = np.array([[[[1.0, 1.0], [0.0, 1.0]]]])
    assert BankService.forward_batch(bank, x)[0, 0, 0, 0] == 1.0
    retour = BankService.backward_image_batch(bank, x, np.ones((1, 1, 1, 1)))
    assert retour[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_circulaire_invariant_par_translation(rng):
    bank = BankService.make_random_bank([3, 2], activation="relu", padding="circular", seed=3)
    x = rng.standard_normal((1, 1, 9, 9))
    decale = np.roll(x, (2, 5), axis=(2, 3))
    cartes = BankService.forward_batch(bank, x)
    assert np.array_equal(np.roll(cartes, (2, 5), axis=(2, 3)), BankService.forward_batch(bank, decale))


def test_gabor_seize_noyaux():
    bank = BankService.make_gabor_bank([1, 2], 4)
    assert bank.n_filters == 16
    assert bank.layers[0].activation.name == "ABS"
    assert bank.layers[0].padding is Padding.ZERO
    for noyau in bank.layers[0].kernels[:, 0]:
        assert np.linalg.norm(noyau) == pytest.approx(1.0)
        assert noyau.sum() == pytest.approx(0.0, abs=1e-12)


def test_gabor_paire_et_impaire():
    paire = BankService.gabor_kernel(2.0, 0.0, "even")
    impaire = BankService.gabor_kernel(2.0, 0.0, "odd")
    assert np.allclose(paire, paire[:, ::-1])
    assert np.allclose(impaire, -impaire[:, ::-1])


def test_gabor_aveugle_aux_intensites_constantes():
    bank = BankService.make_gabor_bank([1], 3, padding="circular")
    cartes = BankService.forward_batch(bank, np.full((1, 1, 16, 16), 0.3))
    assert np.max(np.abs(cartes)) < 1e-12


def test_dog_centre_pourtour():
    noyau = BankService.dog_kernel(1.0)
    centre = noyau.shape[0] // 2
    assert noyau[centre, centre] > 0
    assert noyau.sum() == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(noyau, noyau.T)
    bank = BankService.make_dog_bank([1, 2], channels=3)
    assert bank.input_channels == 3
    assert bank.n_filters == 2


def test_banc_aleatoire_deterministe():
    a = BankService.make_random_bank([4, 2], seed=11)
    b = BankService.make_random_bank([4, 2], seed=11)
    for ca, cb in zip(a.layers, b.layers):
        assert np.array_equal(ca.kernels, cb.kernels)
        assert np.array_equal(ca.bias, cb.bias)


def test_appliquer_gradients_couches_gelees():
    bank = BankService.make_random_bank([2, 2], seed=1)
    gradients = [
        LayerGradient(np.ones_like(c.kernels), np.ones_like(c.bias)) for c in bank.layers
    ]
    nouveau = BankService.apply_gradients(bank, gradients, 0.5, trainable={1})
    assert np.array_equal(nouveau.layers[0].kernels, bank.layers[0].kernels)
    assert np.array_equal(nouveau.layers[1].kernels, bank.layers[1].kernels + 0.5)


def _correlation_naive(x, couche):
    """Boucle directe sur les positions, sans padding ni stride."""
    k_out, k_in, h, w = couche.kernels.shape
    ho, wo = x.shape[1] - h + 1, x.shape[2] - w + 1
    sortie = np.zeros((k_out, ho, wo))
    for o in range(k_out):
        for i in range(ho):
            for j in range(wo):
                sortie[o, i, j] = np.sum(couche.kernels[o] * x[:, i:i + h, j:j + w]) + couche.bias[o]
    return sortie


def test_deux_couches_contre_boucle_naive(rng):
    bank = BankService.make_random_bank([3, 2], activation="relu", padding="valid", seed=9)
    x = rng.standard_normal((1, 8, 8))
    attendu = x
    for couche in bank.layers:
        attendu = np.maximum(_correlation_naive(attendu, couche), 0.0)
    obtenu = BankService.forward_batch(bank, x[None])[0]
    assert np.allclose(obtenu, attendu, rtol=1e-12, atol=1e-14)
    assert np.all(obtenu >= 0)


def test_cotangente_nulle(rng):
    bank = BankService.make_random_bank([3], padding="zero", seed=4)
    img = Image(rng.standard_normal((6, 6, 1)))
    retour = BankService.backward_image(bank, img, FeatureStack(np.zeros((3, 6, 6))))
    assert np.all(retour.data == 0.0)


def test_adjoint_couche_lineaire(rng):
    couche = ConvLayer(rng.standard_normal((2, 1, 3, 3)), np.zeros(2), 1, "valid", "identity")
    bank = FilterBank((couche,))
    g = rng.standard_normal((1, 2, 4, 4))
    attendu = np.zeros((6, 6))
    for o in range(2):
        for i in range(4):
            for j in range(4):
                attendu[i:i + 3, j:j + 3] += g[0, o, i, j] * couche.kernels[o, 0]
    obtenu = BankService.backward_image_batch(bank, np.zeros((1, 1, 6, 6)), g)[0, 0]
    assert np.allclose(obtenu, attendu, rtol=1e-12, atol=1e-14)


def test_gradient_poids_image_nulle_relu():
    bank = BankService.make_random_bank([3], activation="relu", padding="zero", seed=2)
    bank = bank.with_layers([bank.layers[0].with_weights(bank.layers[0].kernels, np.zeros(3))])
    gradients = BankService.backward_weights_batch(bank, np.zeros((1, 1, 5, 5)), np.ones((1, 3, 5, 5)))
    assert np.all(gradients[0].kernels == 0.0)


def test_gradient_poids_1x1_lineaire(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    bank = FilterBank((ConvLayer(np.ones((1, 3, 1, 1)), np.zeros(1)),), 3)
    gradients = BankService.backward_weights_batch(bank, x, np.ones((1, 1, 4, 4)))
    for c in range(3):
        assert gradients[0].kernels[0, c, 0, 0] == pytest.approx(x[0, c].sum(), rel=1e-12)
    assert gradients[0].bias[0] == 16.0


def test_gabor_une_paire():
    assert BankService.make_gabor_bank([1], 1).n_filters == 2


def test_dog_isotrope_et_constante():
    noyau = BankService.dog_kernel(1.5)
    assert np.allclose(noyau, np.rot90(noyau), atol=1e-10)
    bank = BankService.make_dog_bank([1.0], padding="circular")
    _, traces = BankService.forward_batch(bank, np.full((1, 1, 12, 12), 0.3), keep_trace=True)
    assert np.allclose(traces[0].pre, 0.0, atol=1e-12)


def test_banc_sauve_puis_relu_f32(tmp_path, rng):
    bank = BankService.make_gabor_bank([1], 2)
    BankService.save_bank(bank, tmp_path / "g.fbk")
    relu = BankService.load_bank(tmp_path / "g.fbk")
    x = rng.standard_normal((1, 1, 10, 10))
    assert np.allclose(BankService.forward_batch(relu, x), BankService.forward_batch(bank, x), rtol=1e-6, atol=1e-6)
