"""
Parametres d'apprentissage, statistiques observees/synthetisees
et journal des iterations.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from deepframe.exceptions import GeometryError, UsageError

SCHEDULES = ("constant", "one_over_t", "variance_scaled")
STARTS = ("warm", "cold")

# Plancher de variance pour le pas variance_scaled
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class LearnConfig:
    """Parametres de l'algorithme d'apprentissage et d'echantillonnage."""

    gamma0: float = 0.1
    schedule: str = "constant"
    t0: int = 100
    iterations: int = 100
    langevin_steps: int = 100
    n_chains: int = 16
    epsilon: float = 0.01
    start: str = "warm"
    master_seed: int = 0
    sigma_sq: float = 1.0
    tolerance: float = 0.0
    threads: int = 1
    snapshot_every: int = 0

    def __post_init__(self):
        erreurs = []
        if not (np.isfinite(self.gamma0) and self.gamma0 > 0):
            erreurs.append("gamma0 doit etre fini et > 0")
        if self.schedule not in SCHEDULES:
            erreurs.append(f"schedule '{self.schedule}' inconnu")
        if self.start not in STARTS:
            erreurs.append(f"start '{self.start}' inconnu")
        for nom in ("t0", "iterations", "n_chains", "threads"):
            if getattr(self, nom) < 1:
                erreurs.append(f"{nom} doit etre >= 1")
        if self.langevin_steps < 0:
            erreurs.append("langevin_steps doit etre >= 0")
        if self.epsilon < 0:
            erreurs.append("epsilon doit etre >= 0")
        if not self.sigma_sq > 0:
            erreurs.append("sigma_sq doit etre > 0")
        if self.snapshot_every < 0:
            erreurs.append("snapshot_every doit etre >= 0")
        if erreurs:
            raise UsageError(f"Configuration d'apprentissage invalide : {', '.join(erreurs)}")

    def base_rate(self, t: int) -> float:
        """gamma_t sans le facteur de variance."""
        if self.schedule == "constant":
            return self.gamma0
        return self.gamma0 / (1.0 + t / self.t0)

    def rate(self, t: int, variance: Optional[np.ndarray] = None):
        """Pas effectif a l'iteration t, par entree pour variance_scaled."""
        if self.schedule != "variance_scaled":
            return self.base_rate(t)
        if variance is None:
            raise UsageError("variance_scaled exige la variance observee")
        return self.gamma0 / (np.maximum(variance, VARIANCE_FLOOR) * (1.0 + t / self.t0))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class StatsSnapshot:
    """
    H_obs, H_syn et variance observee partagent la meme geometrie :
    [K][H'][W'] (objet), [K] (texture), [J][K][h][w] (couche generative).
    """

    h_obs: np.ndarray
    h_syn: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None

    def __post_init__(self):
        for nom in ("h_obs", "h_syn", "variance"):
            valeur = getattr(self, nom)
            if valeur is None:
                continue
            tableau = np.array(valeur, dtype=np.float64, copy=True)
            if tableau.shape != np.shape(self.h_obs):
                raise GeometryError(f"{nom} {tableau.shape} != H_obs {np.shape(self.h_obs)}")
            tableau.flags.writeable = False
            object.__setattr__(self, nom, tableau)

    @property
    def ascent(self) -> np.ndarray:
        """H_obs - H_syn : direction de montee de la vraisemblance."""
        return self.h_obs - self.h_syn

    @property
    def delta(self) -> np.ndarray:
        """H_syn - H_obs : ecart de Julesz."""
        return self.h_syn - self.h_obs

    def max_abs_diff(self) -> float:
        if self.h_syn is None:
            return float("nan")
        return float(np.max(np.abs(self.ascent), initial=0.0))

    def with_synthesized(self, h_syn) -> "StatsSnapshot":
        return StatsSnapshot(self.h_obs, h_syn, self.variance)


@dataclass(frozen=True)
class LearnRecord:
    """Une ligne du journal d'apprentissage."""

    iteration: int
    max_abs_diff: float
    mean_energy: float
    gamma_t: float

    def to_row(self) -> list:
        return [self.iteration, repr(self.max_abs_diff), repr(self.mean_energy), repr(self.gamma_t)]


LEARNING_LOG_HEADER = ["iteration", "max_abs_diff", "mean_energy", "gamma_t"]


@dataclass
class LearningLog:
    """Journal d'un apprentissage complet."""

    records: list = field(default_factory=list)
    converged: bool = False

    def append(self, record: LearnRecord) -> None:
        self.records.append(record)

    def rows(self) -> list:
        return [r.to_row() for r in self.records]

    def last(self) -> Optional[LearnRecord]:
        return self.records[-1] if self.records else None
