"""
Couche generative au-dessus d'un banc de base : detecteurs binaires,
gradient de la vraisemblance du produit d'experts, apprentissage de
la couche et raffinement de toutes les couches.
"""

import logging
import math
from typing import Callable, Optional

import numpy as np
from scipy.special import logit

from deepframe.exceptions import DivergenceError, GeometryError, UsageError
from deepframe.models.filter_bank import FilterBank, LayerGradient, Padding
from deepframe.models.generative_layer import GenerativeLayer
from deepframe.models.image import FeatureStack
from deepframe.models.learning import LearnConfig, StatsSnapshot
from deepframe.services.bank_service import BankService
from deepframe.services.learner_service import LearnerService, stack_images

logger = logging.getLogger(__name__)

DEFAULT_BIAS_QUANTILE = 0.9
DEFAULT_INIT_SCALE = 1e-3
# Indice de flux reserve a l'initialisation des poids (hors des indices de chaines)
INIT_STREAM = 2 ** 31 - 1


def _moyenne(par_image: np.ndarray, poids: Optional[np.ndarray]) -> np.ndarray:
    """Moyenne sur l'axe 0, ou somme ponderee par poids (probabilites exactes)."""
    if poids is None:
        return par_image.sum(axis=0) / par_image.shape[0]
    return np.tensordot(poids, par_image, axes=1)


def _variance_regroupee(par_image: np.ndarray, axes: tuple) -> np.ndarray:
    """Variance sur les images et les axes donnes, diffusee a la forme d'une statistique."""
    tous = (0,) + tuple(a + 1 for a in axes)
    moyenne = par_image.mean(axis=tous, keepdims=True)
    variance = np.square(par_image - moyenne).mean(axis=tous, keepdims=True)
    return np.broadcast_to(variance[0], par_image.shape[1:]).copy()


class GenerativeService:
    """Apprentissage de couches de convolution generatives."""

    # ---- Detecteurs ----

    @staticmethod
    def _top_pre(layer: GenerativeLayer, base: np.ndarray) -> tuple:
        """(cartes de base completees, pre-activations (N, J, H'', W''))."""
        haut = layer.top_layer()
        ho, wo = haut.conv_shape(base.shape[2], base.shape[3])
        padded = BankService.pad(base, haut)
        return padded, BankService.correlate(padded, haut, ho, wo)

    @staticmethod
    def _detectors(layer: GenerativeLayer, pre: np.ndarray) -> np.ndarray:
        if layer.force_on:
            return np.ones_like(pre)
        # h'(0) = 0 : une pre-activation nulle n'active pas le detecteur
        return (pre > 0).astype(np.float64)

    @staticmethod
    def detect(layer: GenerativeLayer, base_stack: FeatureStack) -> np.ndarray:
        """delta[j, y] = 1 si sum_{k,x} w^(j)_{k,x} [F_k*I](y+x) + b_j > 0."""
        if tuple(base_stack.shape) != tuple(layer.base_shape()):
            raise GeometryError(f"Cartes {base_stack.shape}, base attendue {layer.base_shape()}")
        _, pre = GenerativeService._top_pre(layer, base_stack.maps[None])
        return GenerativeService._detectors(layer, pre)[0].astype(np.uint8)

    @staticmethod
    def detect_batch(layer: GenerativeLayer, x: np.ndarray) -> np.ndarray:
        base = BankService.forward_batch(layer.base, x)
        _, pre = GenerativeService._top_pre(layer, base)
        return GenerativeService._detectors(layer, pre)

    # ---- Statistiques et gradients ----

    @staticmethod
    def gated_stats_per_image(layer: GenerativeLayer, x: np.ndarray) -> tuple:
        """
        Par image : sum_y delta_{j,y} [F_k*I](y+x) de forme (N, J, K, h, w)
        et nombre de detections (N, J).
        """
        base = BankService.forward_batch(layer.base, x)
        padded, pre = GenerativeService._top_pre(layer, base)
        delta = GenerativeService._detectors(layer, pre)
        j, k, h, w = layer.weights.shape
        ho, wo = pre.shape[2], pre.shape[3]
        stats = np.zeros((x.shape[0], j, k, h, w))
        for a in range(h):
            for b in range(w):
                stats[:, :, :, a, b] = np.einsum(
                    "njyz,nkyz->njk", delta, padded[:, :, a:a + ho, b:b + wo]
                )
        return stats, delta.sum(axis=(2, 3))

    @staticmethod
    def gated_stats(layer: GenerativeLayer, x: np.ndarray, weights: Optional[np.ndarray] = None) -> list:
        """[statistiques des poids (J, K, h, w), statistiques des biais (J,)], moyennes sur le lot."""
        stats, comptes = GenerativeService.gated_stats_per_image(layer, x)
        return [_moyenne(stats, weights), _moyenne(comptes, weights)]

    @staticmethod
    def grad_generative_layer(layer: GenerativeLayer, observed: np.ndarray,
                              chains: np.ndarray) -> LayerGradient:
        """
        Gradient de la log-vraisemblance par rapport aux poids et biais :
        moyenne observee moins moyenne des chaines.
        """
        obs_w, obs_b = GenerativeService.gated_stats(layer, observed)
        syn_w, syn_b = GenerativeService.gated_stats(layer, chains)
        return LayerGradient(obs_w - syn_w, obs_b - syn_b)

    @staticmethod
    def lower_layer_stats(layer: GenerativeLayer, x: np.ndarray, indices: list,
                          weights: Optional[np.ndarray] = None) -> list:
        """Gradients moyens de sum_{j,y} h(...) pour les couches de base indices."""
        if not indices:
            return []
        composee = layer.feature_bank()
        cot = np.ones((x.shape[0],) + layer.detector_shape())
        if weights is not None:
            cot = cot * weights[:, None, None, None]
        gradients = BankService.backward_weights_batch(composee, x, cot)
        resultat = []
        for i in indices:
            if weights is None:
                resultat += [gradients[i].kernels / x.shape[0], gradients[i].bias / x.shape[0]]
            else:
                resultat += [gradients[i].kernels, gradients[i].bias]
        return resultat

    # ---- Biais ----

    @staticmethod
    def quantile_biases(layer: GenerativeLayer, x: np.ndarray,
                        quantile: float = DEFAULT_BIAS_QUANTILE) -> np.ndarray:
        """b_j = -quantile des pre-activations sans biais sur les images observees."""
        if not 0.0 <= quantile <= 1.0:
            raise UsageError(f"Quantile hors de [0, 1] : {quantile}")
        sans_biais = layer.with_weights(layer.weights, np.zeros(layer.n_experts))
        base = BankService.forward_batch(layer.base, x)
        _, pre = GenerativeService._top_pre(sans_biais, base)
        return np.array([-np.quantile(pre[:, j].ravel(), quantile) for j in range(layer.n_experts)])

    @staticmethod
    def bias_from_alpha(alpha: float, log_z: float) -> float:
        """b = log(alpha / (1 - alpha)) - log Z(w)."""
        if not 0.0 < alpha < 1.0:
            raise UsageError(f"alpha doit etre dans (0, 1), recu {alpha}")
        return float(logit(alpha)) - log_z

    @staticmethod
    def softplus(r):
        return np.logaddexp(0.0, r)

    @staticmethod
    def mixture_log_ratio(score, log_z: float, alpha: float):
        """
        log(p_mix / q) pour le melange alpha p(I; w) + (1 - alpha) q(I).
        La relu du detecteur en est l'approximation max(0, .).
        """
        if not 0.0 < alpha < 1.0:
            raise UsageError(f"alpha doit etre dans (0, 1), recu {alpha}")
        r = np.asarray(score, dtype=np.float64) - log_z + logit(alpha)
        return GenerativeService.softplus(r) + math.log1p(-alpha)

    # ---- Apprentissage ----

    @staticmethod
    def _observed(per_image: list, variances_axes: list) -> list:
        return [
            StatsSnapshot(_moyenne(p, None), variance=_variance_regroupee(p, axes))
            for p, axes in zip(per_image, variances_axes)
        ]

    @staticmethod
    def _check_finite(*tableaux) -> None:
        for t in tableaux:
            if not np.all(np.isfinite(t)):
                raise DivergenceError("Poids non finis apres mise a jour")

    @staticmethod
    def fit_layer(base: FilterBank, images, n_experts: int, window, config: LearnConfig,
                  padding: str = "valid", force_on: bool = False, initial=None,
                  init_scale: float = DEFAULT_INIT_SCALE, bias_init=None,
                  bias_quantile: float = DEFAULT_BIAS_QUANTILE,
                  expectation: Optional[Callable] = None,
                  on_iteration: Optional[Callable] = None) -> tuple:
        """
        Apprend J filtres de taille window sur les cartes du banc de base.
        Poids initiaux uniformes dans [-init_scale, init_scale] (0 : nuls),
        biais par la regle du quantile sauf bias_init explicite.
        """
        images = list(images)
        x, forme, offset = stack_images(images)
        if n_experts < 1:
            raise UsageError("Il faut au moins un expert")
        h, w = (window, window) if isinstance(window, int) else tuple(window)
        k = base.n_filters

        if initial is not None:
            poids = np.array(initial, dtype=np.float64)
            if poids.shape != (n_experts, k, h, w):
                raise GeometryError(f"Poids initiaux {poids.shape}, attendu {(n_experts, k, h, w)}")
        elif init_scale > 0:
            rng = np.random.default_rng([config.master_seed, INIT_STREAM])
            poids = rng.uniform(-init_scale, init_scale, size=(n_experts, k, h, w))
        else:
            poids = np.zeros((n_experts, k, h, w))

        layer = GenerativeLayer(base, poids, np.zeros(n_experts), forme, config.sigma_sq,
                                Padding.parse(padding), force_on, offset)
        if bias_init is not None:
            biais = np.broadcast_to(np.asarray(bias_init, dtype=np.float64), (n_experts,)).copy()
        elif force_on:
            biais = np.zeros(n_experts)
        else:
            biais = GenerativeService.quantile_biases(layer, x, bias_quantile)
        layer = layer.with_weights(poids, biais)
        logger.info(
            f"Couche generative : {n_experts} experts {h}x{w} sur {k} cartes, "
            f"detecteurs {layer.detector_shape()}"
        )
        return GenerativeService._learn_layers(layer, x, [], config, True, expectation, on_iteration)

    @staticmethod
    def refine_all_layers(layer: GenerativeLayer, images, config: LearnConfig,
                          trainable=None, expectation: Optional[Callable] = None,
                          on_iteration: Optional[Callable] = None) -> tuple:
        """
        Montee de gradient jointe sur les couches entrainables du banc compose.
        trainable : indices des couches (la couche apprise a l'indice len(base.layers)).
        """
        images = list(images)
        x, forme, offset = stack_images(images)
        if forme != layer.image_shape:
            raise GeometryError(f"Images {forme}, couche {layer.image_shape}")
        sommet = len(layer.base.layers)
        trainable = set(range(sommet + 1)) if trainable is None else set(trainable)
        if not trainable or max(trainable) > sommet or min(trainable) < 0:
            raise UsageError(f"Couches entrainables invalides : {sorted(trainable)}")
        bas = sorted(i for i in trainable if i < sommet)
        return GenerativeService._learn_layers(
            layer.with_offset(offset), x, bas, config, sommet in trainable, expectation, on_iteration
        )

    @staticmethod
    def _learn_layers(layer: GenerativeLayer, x: np.ndarray, bas: list, config: LearnConfig,
                      top: bool, expectation, on_iteration) -> tuple:
        def statistiques(m, lot, poids=None):
            resultat = GenerativeService.gated_stats(m, lot, poids) if top else []
            return resultat + GenerativeService.lower_layer_stats(m, lot, bas, poids)

        # les detecteurs dependent des poids : statistiques observees
        # recalculees image par image a chaque iteration
        def observe(m):
            par_image, axes = [], []
            if top:
                stats, comptes = GenerativeService.gated_stats_per_image(m, x)
                par_image += [stats, comptes]
                axes += [(2, 3), ()]
            for i in bas:
                noyaux, biais = [], []
                for n in range(x.shape[0]):
                    g = GenerativeService.lower_layer_stats(m, x[n:n + 1], [i])
                    noyaux.append(g[0])
                    biais.append(g[1])
                par_image += [np.stack(noyaux), np.stack(biais)]
                axes += [(2, 3), ()]
            return GenerativeService._observed(par_image, axes)

        def mise_a_jour(m, instantanes, taux):
            position = 0
            poids, biais = m.weights, m.biases
            if top:
                poids = poids + taux[0] * instantanes[0].ascent
                biais = biais + taux[1] * instantanes[1].ascent
                position = 2
            pas = [None] * len(m.base.layers)
            for i in bas:
                pas[i] = LayerGradient(taux[position] * instantanes[position].ascent,
                                       taux[position + 1] * instantanes[position + 1].ascent)
                GenerativeService._check_finite(pas[i].kernels, pas[i].bias)
                position += 2
            GenerativeService._check_finite(poids, biais)
            if not bas:
                return m.with_weights(poids, biais)
            try:
                base = BankService.apply_gradients(m.base, pas, 1.0, set(bas))
            except GeometryError as e:
                raise DivergenceError(f"Poids de base non finis apres mise a jour : {e}") from e
            nouveau = m.with_base(base)
            return nouveau.with_weights(poids, biais)

        def attendu(m):
            return list(expectation(m))

        return LearnerService.learn(
            layer, observe, statistiques, mise_a_jour, config,
            None if expectation is None else attendu, on_iteration,
        )
