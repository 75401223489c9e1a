"""
Etat des chaines de Langevin paralleles et calendrier de recuit.
"""

import math
from dataclasses import dataclass

import numpy as np

from deepframe.exceptions import GeometryError, UsageError
from deepframe.models.image import Image

# En dessous de cette fraction de T0, la temperature tombe au plancher
FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class ChainState:
    """
    Images synthetisees (M~, C, H, W) et un flux aleatoire Philox par
    chaine. Les flux ne sont jamais partages entre chaines.
    """

    images: np.ndarray
    streams: tuple
    steps_taken: int = 0
    mean_offset: float = 0.0

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64, copy=True)
        if images.ndim != 4 or images.shape[0] < 1:
            raise GeometryError(f"Etat de chaines {images.shape}, attendu (M, C, H, W)")
        if len(self.streams) != images.shape[0]:
            raise GeometryError(f"{len(self.streams)} flux pour {images.shape[0]} chaines")
        images.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "streams", tuple(self.streams))

    @property
    def n_chains(self) -> int:
        return self.images.shape[0]

    @property
    def geometry(self) -> tuple:
        """(H, W, C) commun a toutes les chaines."""
        _, c, h, w = self.images.shape
        return h, w, c

    def image(self, index: int) -> Image:
        return Image.from_chw(self.images[index], self.mean_offset)

    def as_images(self) -> list:
        return [self.image(i) for i in range(self.n_chains)]

    def to_dict(self) -> dict:
        return {
            "chains": self.n_chains,
            "geometry": list(self.geometry),
            "steps_taken": self.steps_taken,
        }


@dataclass(frozen=True)
class AnnealSchedule:
    """T(niveau) = T0 * decay^niveau, puis plancher ; steps_per_level pas par niveau."""

    t0: float = 1.0
    decay: float = 0.95
    floor: float = 0.0
    steps_per_level: int = 100

    def __post_init__(self):
        erreurs = []
        if not self.t0 > 0:
            erreurs.append("T0 doit etre > 0")
        if not 0 < self.decay < 1:
            erreurs.append("decay doit etre dans (0, 1)")
        if self.floor < 0:
            erreurs.append("floor doit etre >= 0")
        if self.steps_per_level < 1:
            erreurs.append("steps_per_level doit etre >= 1")
        if erreurs:
            raise UsageError(f"Calendrier de recuit invalide : {', '.join(erreurs)}")

    def floor_level(self) -> int:
        """Premier niveau ou la temperature vaut le plancher."""
        seuil = max(self.floor, FLOOR_FRACTION * self.t0)
        if seuil >= self.t0:
            return 0
        return math.floor(math.log(seuil / self.t0) / math.log(self.decay)) + 1

    def temperature(self, step: int) -> float:
        niveau = step // self.steps_per_level
        if niveau >= self.floor_level():
            return self.floor
        return self.t0 * self.decay ** niveau

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "decay": self.decay,
            "floor": self.floor,
            "steps_per_level": self.steps_per_level,
        }
