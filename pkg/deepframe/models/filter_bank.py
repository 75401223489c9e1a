"""
Modeles de donnees du banc de filtres : couches de convolution,
rectification et max-pooling empilees.
"""

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from deepframe.exceptions import ChannelChainError, GeometryError


class Padding(enum.Enum):
    """Traitement des bords. La valeur est le code du format FBK1."""

    VALID = 0
    ZERO = 1
    CIRCULAR = 2

    @classmethod
    def parse(cls, nom) -> "Padding":
        if isinstance(nom, cls):
            return nom
        return cls[str(nom).upper()]


class Activation(enum.Enum):
    """Fonction h() appliquee apres la convolution (code FBK1)."""

    IDENTITY = 0
    RELU = 1
    ABS = 2

    @classmethod
    def parse(cls, nom) -> "Activation":
        if isinstance(nom, cls):
            return nom
        return cls[str(nom).upper()]

    @property
    def rectifying(self) -> bool:
        return self is not Activation.IDENTITY


def _tableau(valeurs, ndim: int, nom: str) -> np.ndarray:
    tableau = np.array(valeurs, dtype=np.float64, copy=True)
    if tableau.ndim != ndim:
        raise GeometryError(f"{nom} de dimension {tableau.ndim}, attendu {ndim}")
    if not np.all(np.isfinite(tableau)):
        raise GeometryError(f"{nom} contient des valeurs non finies")
    tableau.flags.writeable = False
    return tableau


@dataclass(frozen=True)
class ConvLayer:
    """
    Couche : correlation [K_out][K_in][h][w] + biais, activation,
    puis max-pooling optionnel (fenetre pool_window, pas pool_stride).
    """

    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: Padding = Padding.VALID
    activation: Activation = Activation.IDENTITY
    pool_window: int = 0
    pool_stride: int = 0

    def __post_init__(self):
        kernels = _tableau(self.kernels, 4, "kernels")
        bias = _tableau(self.bias, 1, "bias")
        if bias.shape[0] != kernels.shape[0]:
            raise GeometryError(
                f"{bias.shape[0]} biais pour {kernels.shape[0]} noyaux"
            )
        if self.stride < 1:
            raise GeometryError(f"Pas de convolution invalide : {self.stride}")
        if kernels.shape[2] < 1 or kernels.shape[3] < 1:
            raise GeometryError("Noyau de taille nulle")
        if self.pool_window < 0 or (self.pool_window and self.pool_stride < 1):
            raise GeometryError("Specification de pooling invalide")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "padding", Padding.parse(self.padding))
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        if not self.pool_window:
            object.__setattr__(self, "pool_stride", 0)

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> tuple:
        return self.kernels.shape[2], self.kernels.shape[3]

    @property
    def pooled(self) -> bool:
        return self.pool_window > 0

    def pads(self) -> tuple:
        """(haut, bas, gauche, droite) ajoutes avant la correlation."""
        if self.padding is Padding.VALID:
            return 0, 0, 0, 0
        h, w = self.kernel_size
        return (h - 1) // 2, h // 2, (w - 1) // 2, w // 2

    def conv_shape(self, height: int, width: int) -> tuple:
        """Taille de la sortie de correlation (avant pooling)."""
        haut, bas, gauche, droite = self.pads()
        h, w = self.kernel_size
        hp, wp = height + haut + bas, width + gauche + droite
        if hp < h or wp < w:
            raise GeometryError(
                f"Image {height}x{width} plus petite que le champ {h}x{w}"
            )
        return (hp - h) // self.stride + 1, (wp - w) // self.stride + 1

    def output_shape(self, height: int, width: int) -> tuple:
        ho, wo = self.conv_shape(height, width)
        if not self.pooled:
            return ho, wo
        if ho < self.pool_window or wo < self.pool_window:
            raise GeometryError(
                f"Carte {ho}x{wo} plus petite que la fenetre de pooling {self.pool_window}"
            )
        return ((ho - self.pool_window) // self.pool_stride + 1,
                (wo - self.pool_window) // self.pool_stride + 1)

    def with_weights(self, kernels, bias) -> "ConvLayer":
        return replace(self, kernels=kernels, bias=bias)

    def to_dict(self) -> dict:
        return {
            "kernels": list(self.kernels.shape),
            "stride": self.stride,
            "padding": self.padding.name.lower(),
            "activation": self.activation.name.lower(),
            "pool": [self.pool_window, self.pool_stride] if self.pooled else None,
        }


@dataclass(frozen=True)
class FilterBank:
    """Pile ordonnee de couches ; layer 0 recoit input_channels canaux."""

    layers: tuple
    input_channels: int = 1

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise GeometryError("Banc de filtres sans couche")
        attendu = self.input_channels
        for i, couche in enumerate(layers):
            if couche.in_channels != attendu:
                raise ChannelChainError(
                    f"Couche {i} : {couche.in_channels} canaux d'entree, attendu {attendu}"
                )
            attendu = couche.out_channels
        object.__setattr__(self, "layers", layers)

    @property
    def n_filters(self) -> int:
        return self.layers[-1].out_channels

    @property
    def rectified(self) -> bool:
        return self.layers[-1].activation.rectifying

    def output_shape(self, height: int, width: int) -> tuple:
        """(K, H', W') produits pour une image height x width."""
        for couche in self.layers:
            height, width = couche.output_shape(height, width)
        return self.n_filters, height, width

    def origin(self) -> tuple:
        """
        (stride, offset) de la carte finale en coordonnees image : la position
        (i, j) correspond au coin haut-gauche offset + stride * (i, j) de son
        champ recepteur. Une fenetre de pooling commence a i * pool_stride,
        le pooling multiplie donc le pas sans decaler l'origine.
        """
        pas, decalage = 1, 0
        for couche in self.layers:
            decalage -= couche.pads()[0] * pas
            pas *= couche.stride
            if couche.pooled:
                pas *= couche.pool_stride
        return pas, decalage

    def with_layers(self, layers) -> "FilterBank":
        return FilterBank(tuple(layers), self.input_channels)

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "layers": [c.to_dict() for c in self.layers],
        }


@dataclass(frozen=True)
class LayerGradient:
    """Gradient par rapport aux noyaux et aux biais d'une couche."""

    kernels: np.ndarray
    bias: np.ndarray


@dataclass
class LayerTrace:
    """Valeurs intermediaires d'une couche, gardees pour la retropropagation."""

    layer: ConvLayer
    input_shape: tuple
    padded: np.ndarray
    pre: np.ndarray
    activated: np.ndarray
    pool_index: Optional[np.ndarray] = None
