"""
Service du banc de filtres : propagation avant, gradients par
retropropagation (image et poids) et generation de bancs classiques.

Les tableaux internes sont au format (N, C, H, W). La correlation
accumule un produit par coefficient de noyau dans un ordre fixe :
chaque sortie est calculee par la meme suite d'operations quelle
que soit sa position.
"""

import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from deepframe.exceptions import GeometryError, UsageError
from deepframe.models.filter_bank import (
    Activation, ConvLayer, FilterBank, LayerGradient, LayerTrace, Padding,
)
from deepframe.models.image import FeatureStack, Image

logger = logging.getLogger(__name__)

# Parametres des filtres de Gabor : longueur d'onde 2*scale, enveloppe sigma = scale
GABOR_ASPECT = 0.5
# Rapport des ecarts types surround / centre des DoG
DOG_RATIO = 1.6


class BankService:
    """Evaluation et differentiation des bancs de filtres."""

    # ---- Briques de calcul ----

    @staticmethod
    def pad(x: np.ndarray, couche: ConvLayer) -> np.ndarray:
        if couche.padding is Padding.VALID:
            return x
        haut, bas, gauche, droite = couche.pads()
        mode = "wrap" if couche.padding is Padding.CIRCULAR else "constant"
        return np.pad(x, ((0, 0), (0, 0), (haut, bas), (gauche, droite)), mode=mode)

    @staticmethod
    def _window(xp: np.ndarray, c: int, a: int, b: int, stride: int, ho: int, wo: int):
        return xp[:, c, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride]

    @staticmethod
    def correlate(xp: np.ndarray, couche: ConvLayer, ho: int, wo: int) -> np.ndarray:
        k_out, k_in, h, w = couche.kernels.shape
        sortie = np.zeros((xp.shape[0], k_out, ho, wo))
        for c in range(k_in):
            for a in range(h):
                for b in range(w):
                    fenetre = BankService._window(xp, c, a, b, couche.stride, ho, wo)
                    sortie += couche.kernels[:, c, a, b][None, :, None, None] * fenetre[:, None]
        sortie += couche.bias[None, :, None, None]
        return sortie

    @staticmethod
    def _correlate_transpose(g: np.ndarray, couche: ConvLayer, padded_shape: tuple) -> np.ndarray:
        _, k_in, h, w = couche.kernels.shape
        ho, wo = g.shape[2], g.shape[3]
        gxp = np.zeros(padded_shape)
        s = couche.stride
        for c in range(k_in):
            for a in range(h):
                for b in range(w):
                    gxp[:, c, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s] += np.einsum(
                        "nohw,o->nhw", g, couche.kernels[:, c, a, b]
                    )
        return gxp

    @staticmethod
    def _unpad(gxp: np.ndarray, couche: ConvLayer, input_shape: tuple) -> np.ndarray:
        if couche.padding is Padding.VALID:
            return gxp
        haut, _, gauche, _ = couche.pads()
        n, c, h, w = input_shape
        if couche.padding is Padding.ZERO:
            return np.ascontiguousarray(gxp[:, :, haut:haut + h, gauche:gauche + w])
        # circulaire : on replie les bords sur les positions enroulees
        lignes = (np.arange(gxp.shape[2]) - haut) % h
        colonnes = (np.arange(gxp.shape[3]) - gauche) % w
        partiel = np.zeros((n, c, h, gxp.shape[3]))
        np.add.at(partiel, (slice(None), slice(None), lignes), gxp)
        gx = np.zeros(input_shape)
        np.add.at(gx, (slice(None), slice(None), slice(None), colonnes), partiel)
        return gx

    @staticmethod
    def _activate(pre: np.ndarray, activation: Activation) -> np.ndarray:
        if activation is Activation.RELU:
            return np.maximum(pre, 0.0)
        if activation is Activation.ABS:
            return np.abs(pre)
        return pre

    @staticmethod
    def _activation_backward(g: np.ndarray, pre: np.ndarray, activation: Activation) -> np.ndarray:
        # h'(0) = 0 pour relu et abs
        if activation is Activation.RELU:
            return g * (pre > 0)
        if activation is Activation.ABS:
            return g * np.sign(pre)
        return g

    @staticmethod
    def _max_pool(a: np.ndarray, fenetre: int, pas: int) -> tuple:
        n, k = a.shape[0], a.shape[1]
        vues = sliding_window_view(a, (fenetre, fenetre), axis=(2, 3))[:, :, ::pas, ::pas]
        hp, wp = vues.shape[2], vues.shape[3]
        plat = vues.reshape(n, k, hp, wp, fenetre * fenetre)
        # premier maximum dans l'ordre ligne par ligne
        index = plat.argmax(axis=-1)
        sortie = np.take_along_axis(plat, index[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(sortie), index

    @staticmethod
    def _unpool(g: np.ndarray, index: np.ndarray, shape: tuple, fenetre: int, pas: int):
        n, k, hp, wp = g.shape
        lignes = np.arange(hp)[:, None] * pas + index // fenetre
        colonnes = np.arange(wp)[None, :] * pas + index % fenetre
        ga = np.zeros(shape)
        np.add.at(
            ga,
            (np.arange(n)[:, None, None, None], np.arange(k)[None, :, None, None],
             lignes, colonnes),
            g,
        )
        return ga

    # ---- Propagation ----

    @staticmethod
    def _check_input(bank: FilterBank, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != bank.input_channels:
            raise GeometryError(
                f"Entree {x.shape}, le banc attend {bank.input_channels} canaux"
            )
        bank.output_shape(x.shape[2], x.shape[3])

    @staticmethod
    def forward_batch(bank: FilterBank, x: np.ndarray, keep_trace: bool = False):
        """
        Propage un lot (N, C, H, W). Retourne les cartes (N, K, H', W'),
        et la trace par couche si keep_trace.
        """
        x = np.asarray(x, dtype=np.float64)
        BankService._check_input(bank, x)
        traces = []
        for couche in bank.layers:
            ho, wo = couche.conv_shape(x.shape[2], x.shape[3])
            xp = BankService.pad(x, couche)
            pre = BankService.correlate(xp, couche, ho, wo)
            act = BankService._activate(pre, couche.activation)
            index = None
            if couche.pooled:
                sortie, index = BankService._max_pool(act, couche.pool_window, couche.pool_stride)
            else:
                sortie = act
            if keep_trace:
                traces.append(LayerTrace(couche, x.shape, xp, pre, act, index))
            x = sortie
        return (x, traces) if keep_trace else x

    @staticmethod
    def forward(bank: FilterBank, img: Image) -> FeatureStack:
        """Reponses de la derniere couche pour une image."""
        cartes = BankService.forward_batch(bank, img.to_chw()[None])
        pas, decalage = bank.origin()
        return FeatureStack(cartes[0], bank.rectified, pas, decalage)

    @staticmethod
    def _backward(traces: list, g: np.ndarray, want_weights: bool, want_input: bool = True):
        gradients = [None] * len(traces)
        for i in reversed(range(len(traces))):
            trace = traces[i]
            couche = trace.layer
            if couche.pooled:
                g = BankService._unpool(
                    g, trace.pool_index, trace.activated.shape,
                    couche.pool_window, couche.pool_stride,
                )
            g = BankService._activation_backward(g, trace.pre, couche.activation)
            if want_weights:
                gradients[i] = BankService._weight_gradient(trace.padded, g, couche)
            if i == 0 and not want_input:
                break
            gxp = BankService._correlate_transpose(g, couche, trace.padded.shape)
            g = BankService._unpad(gxp, couche, trace.input_shape)
        return g, gradients

    @staticmethod
    def _weight_gradient(xp: np.ndarray, g: np.ndarray, couche: ConvLayer) -> LayerGradient:
        k_out, k_in, h, w = couche.kernels.shape
        ho, wo = g.shape[2], g.shape[3]
        noyaux = np.zeros(couche.kernels.shape)
        for c in range(k_in):
            for a in range(h):
                for b in range(w):
                    fenetre = BankService._window(xp, c, a, b, couche.stride, ho, wo)
                    noyaux[:, c, a, b] = np.einsum("nohw,nhw->o", g, fenetre)
        return LayerGradient(noyaux, g.sum(axis=(0, 2, 3)))

    @staticmethod
    def _check_cotangent(bank: FilterBank, x: np.ndarray, g: np.ndarray) -> None:
        attendu = (x.shape[0],) + bank.output_shape(x.shape[2], x.shape[3])
        if g.shape != attendu:
            raise GeometryError(f"Cotangente {g.shape}, sortie du banc {attendu}")

    @staticmethod
    def backward_image_batch(bank: FilterBank, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """d<g, forward(x)>/dx pour un lot."""
        x = np.asarray(x, dtype=np.float64)
        BankService._check_input(bank, x)
        BankService._check_cotangent(bank, x, g)
        _, traces = BankService.forward_batch(bank, x, keep_trace=True)
        gx, _ = BankService._backward(traces, np.asarray(g, dtype=np.float64), want_weights=False)
        return gx

    @staticmethod
    def backward_weights_batch(bank: FilterBank, x: np.ndarray, g: np.ndarray) -> list:
        """Gradients par couche de <g, forward(x)>, sommes sur le lot."""
        x = np.asarray(x, dtype=np.float64)
        BankService._check_input(bank, x)
        BankService._check_cotangent(bank, x, g)
        _, traces = BankService.forward_batch(bank, x, keep_trace=True)
        _, gradients = BankService._backward(
            traces, np.asarray(g, dtype=np.float64), want_weights=True, want_input=False
        )
        return gradients

    @staticmethod
    def backward_image(bank: FilterBank, img: Image, cotangent: FeatureStack) -> Image:
        """Gradient de <cotangent, forward(bank, img)> par rapport a l'image."""
        gx = BankService.backward_image_batch(bank, img.to_chw()[None], cotangent.maps[None])
        return Image.from_chw(gx[0], img.mean_offset)

    @staticmethod
    def backward_weights(bank: FilterBank, img: Image, cotangent: FeatureStack) -> list:
        """Gradients de <cotangent, forward(bank, img)> pour chaque couche."""
        return BankService.backward_weights_batch(bank, img.to_chw()[None], cotangent.maps[None])

    @staticmethod
    def apply_gradients(bank: FilterBank, gradients: list, rate: float, trainable=None) -> FilterBank:
        """Nouveau banc : couches entrainables deplacees de rate * gradient."""
        couches = []
        for i, couche in enumerate(bank.layers):
            if (trainable is None or i in trainable) and gradients[i] is not None:
                couche = couche.with_weights(
                    couche.kernels + rate * gradients[i].kernels,
                    couche.bias + rate * gradients[i].bias,
                )
            couches.append(couche)
        return bank.with_layers(couches)

    # ---- Generateurs de bancs ----

    @staticmethod
    def gabor_kernel(scale: float, theta: float, phase: str = "even") -> np.ndarray:
        """
        Noyau de Gabor centre, de norme L2 unite et de moyenne nulle.
        Longueur d'onde 2*scale, enveloppe sigma = scale, rapport d'aspect 0.5.
        La moyenne est retiree avant la normalisation : le cosinus sous
        l'enveloppe garde sinon une composante continue, et le filtre pair
        repondrait a la luminosite moyenne plutot qu'a la structure.
        """
        if scale <= 0:
            raise UsageError(f"Echelle de Gabor invalide : {scale}")
        sigma = float(scale)
        longueur_onde = 2.0 * sigma
        rayon = int(math.ceil(3.0 * sigma / GABOR_ASPECT))
        y, x = np.mgrid[-rayon:rayon + 1, -rayon:rayon + 1].astype(np.float64)
        xr = x * math.cos(theta) + y * math.sin(theta)
        yr = -x * math.sin(theta) + y * math.cos(theta)
        enveloppe = np.exp(-(xr ** 2 + (GABOR_ASPECT * yr) ** 2) / (2.0 * sigma ** 2))
        onde = np.cos if phase == "even" else np.sin
        noyau = enveloppe * onde(2.0 * math.pi * xr / longueur_onde)
        noyau = noyau - noyau.mean()
        return noyau / np.linalg.norm(noyau)

    @staticmethod
    def make_gabor_bank(scales, orientations: int, channels: int = 1,
                        padding: str = "zero") -> FilterBank:
        """
        Paires cosinus/sinus par (echelle, orientation), activation abs.
        Ordre : echelle, puis orientation, puis phase (paire, impaire).
        """
        scales = list(scales)
        if not scales or orientations < 1:
            raise UsageError("Il faut au moins une echelle et une orientation")
        rayon = int(math.ceil(3.0 * max(scales) / GABOR_ASPECT))
        taille = 2 * rayon + 1
        noyaux = []
        for s in scales:
            for o in range(orientations):
                theta = math.pi * o / orientations
                for phase in ("even", "odd"):
                    noyau = BankService.gabor_kernel(s, theta, phase)
                    noyaux.append(BankService._replicate(noyau, taille, channels))
        couche = ConvLayer(
            np.stack(noyaux), np.zeros(len(noyaux)), 1, Padding.parse(padding), Activation.ABS
        )
        logger.info(f"Banc de Gabor : {len(noyaux)} noyaux {taille}x{taille}")
        return FilterBank((couche,), channels)

    @staticmethod
    def dog_kernel(size: float) -> np.ndarray:
        """Centre-pourtour isotrope : G(size) - G(1.6 size), somme nulle, norme 1."""
        if size <= 0:
            raise UsageError(f"Taille de DoG invalide : {size}")
        centre, pourtour = float(size), DOG_RATIO * float(size)
        rayon = int(math.ceil(3.0 * pourtour))
        y, x = np.mgrid[-rayon:rayon + 1, -rayon:rayon + 1].astype(np.float64)
        r2 = x * x + y * y
        noyau = (np.exp(-r2 / (2 * centre ** 2)) / (2 * math.pi * centre ** 2)
                 - np.exp(-r2 / (2 * pourtour ** 2)) / (2 * math.pi * pourtour ** 2))
        noyau = noyau - noyau.mean()
        return noyau / np.linalg.norm(noyau)

    @staticmethod
    def make_dog_bank(sizes, channels: int = 1, padding: str = "zero") -> FilterBank:
        sizes = list(sizes)
        if not sizes:
            raise UsageError("Il faut au moins une taille de DoG")
        rayon = int(math.ceil(3.0 * DOG_RATIO * max(sizes)))
        taille = 2 * rayon + 1
        noyaux = [BankService._replicate(BankService.dog_kernel(s), taille, channels) for s in sizes]
        couche = ConvLayer(
            np.stack(noyaux), np.zeros(len(noyaux)), 1, Padding.parse(padding), Activation.ABS
        )
        logger.info(f"Banc DoG : {len(noyaux)} noyaux {taille}x{taille}")
        return FilterBank((couche,), channels)

    @staticmethod
    def _replicate(noyau: np.ndarray, taille: int, channels: int) -> np.ndarray:
        """Centre le noyau dans un carre taille x taille, copie sur les canaux, renormalise."""
        marge = (taille - noyau.shape[0]) // 2
        carre = np.pad(noyau, marge)
        bloc = np.repeat(carre[None], channels, axis=0)
        if channels > 1:
            bloc = bloc / math.sqrt(channels)
        return bloc

    @staticmethod
    def make_random_bank(filters, kernel_size: int = 3, input_channels: int = 1,
                         activation: str = "relu", padding: str = "circular",
                         stride: int = 1, pool_window: int = 0, pool_stride: int = 0,
                         seed: int = 0) -> FilterBank:
        """
        Banc aleatoire : noyaux N(0, 1/fan_in), biais N(0, 0.01).
        filters donne le nombre de filtres de chaque couche.
        """
        filters = list(filters)
        if not filters:
            raise UsageError("Il faut au moins une couche")
        rng = np.random.default_rng(seed)
        couches = []
        entree = input_channels
        for i, k in enumerate(filters):
            fan_in = entree * kernel_size * kernel_size
            noyaux = rng.standard_normal((k, entree, kernel_size, kernel_size)) / math.sqrt(fan_in)
            biais = 0.1 * rng.standard_normal(k)
            dernier = i == len(filters) - 1
            couches.append(ConvLayer(
                noyaux, biais, stride, Padding.parse(padding), Activation.parse(activation),
                pool_window if dernier else 0, pool_stride if dernier else 0,
            ))
            entree = k
        return FilterBank(tuple(couches), input_channels)

    # ---- Fichiers FBK1 ----

    @staticmethod
    def save_bank(bank: FilterBank, path) -> None:
        from deepframe.services.format_service import FormatService
        FormatService.save_bank(bank, path)

    @staticmethod
    def load_bank(path) -> FilterBank:
        from deepframe.services.format_service import FormatService
        return FormatService.load_bank(path)
