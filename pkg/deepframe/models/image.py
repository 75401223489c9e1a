"""
Types valeur pour les images et les cartes de reponses.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from deepframe.exceptions import GeometryError


def _lecture_seule(tableau: np.ndarray) -> np.ndarray:
    copie = np.array(tableau, dtype=np.float64, copy=True)
    copie.flags.writeable = False
    return copie


@dataclass(frozen=True)
class Image:
    """
    Image reelle H x W x C (canal en dernier), precision 64 bits.
    mean_offset est la valeur soustraite au chargement, conservee
    pour l'ecriture. header garde l'entete PGM d'origine, reecrit tel quel.
    """

    data: np.ndarray
    mean_offset: float = 0.0
    header: Optional[bytes] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        data = _lecture_seule(self.data)
        if data.ndim == 2:
            data = data.reshape(data.shape + (1,))
        if data.ndim != 3:
            raise GeometryError(f"Image de dimension {data.ndim}, attendu H x W x C")
        h, w, c = data.shape
        if h < 1 or w < 1:
            raise GeometryError(f"Image vide ({h}x{w})")
        if c not in (1, 3):
            raise GeometryError(f"{c} canaux, attendu 1 ou 3")
        if not np.all(np.isfinite(data)):
            raise GeometryError("Image contenant des valeurs non finies")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mean_offset", float(self.mean_offset))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def to_chw(self) -> np.ndarray:
        """Copie au format canal en premier (C, H, W)."""
        return np.ascontiguousarray(np.transpose(self.data, (2, 0, 1)))

    @classmethod
    def from_chw(cls, tableau: np.ndarray, mean_offset: float = 0.0) -> "Image":
        return cls(np.transpose(np.asarray(tableau), (1, 2, 0)), mean_offset)

    def to_dict(self) -> dict:
        """Resume serialisable (journaux)."""
        return {
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "mean_offset": self.mean_offset,
        }


@dataclass(frozen=True)
class FeatureStack:
    """
    Cartes de reponses [K][H'][W'] du banc de filtres.
    stride/offset relient la position (i, j) de la carte a la
    coordonnee image offset + stride * (i, j).
    """

    maps: np.ndarray
    rectified: bool = False
    stride: int = 1
    offset: int = 0

    def __post_init__(self):
        maps = _lecture_seule(self.maps)
        if maps.ndim != 3:
            raise GeometryError(f"Cartes de dimension {maps.ndim}, attendu K x H' x W'")
        if self.rectified and maps.size and maps.min() < 0:
            raise GeometryError("Cartes rectifiees avec des valeurs negatives")
        object.__setattr__(self, "maps", maps)

    @property
    def shape(self) -> tuple:
        return self.maps.shape

    @property
    def n_filters(self) -> int:
        return self.maps.shape[0]

    @property
    def area(self) -> int:
        return self.maps.shape[1] * self.maps.shape[2]

    def to_dict(self) -> dict:
        return {
            "shape": list(self.maps.shape),
            "rectified": self.rectified,
            "stride": self.stride,
            "offset": self.offset,
        }
