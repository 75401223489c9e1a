"""
Apprentissage par maximum de vraisemblance : statistiques observees,
mises a jour des poids et boucle commune (echantillonnage de Langevin,
statistiques synthetisees, montee de gradient).
"""

import logging
import math
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from deepframe.config import Config
from deepframe.exceptions import DivergenceError, GeometryError, UsageError
from deepframe.models.filter_bank import FilterBank
from deepframe.models.frame_model import NonStationaryFrame, StationaryFrame
from deepframe.models.learning import LearnConfig, LearningLog, LearnRecord, StatsSnapshot
from deepframe.services.bank_service import BankService
from deepframe.services.frame_service import FrameService
from deepframe.services.sampler_service import SamplerService

logger = logging.getLogger(__name__)


def stack_images(images) -> tuple:
    """Liste d'Image de meme geometrie -> (lot (M, C, H, W), geometrie (H, W, C), offset)."""
    images = list(images)
    if not images:
        raise UsageError("Aucune image d'apprentissage")
    formes = {tuple(img.shape) for img in images}
    if len(formes) > 1:
        raise GeometryError(f"Images de geometries differentes : {sorted(formes)}")
    return np.stack([img.to_chw() for img in images]), tuple(images[0].shape), images[0].mean_offset


class LearnerService:
    """Algorithmes d'apprentissage des modeles FRAME."""

    # ---- Statistiques observees ----

    @staticmethod
    def observed_stats_object(bank: FilterBank, images) -> StatsSnapshot:
        """H_obs[k, x] = (1/M) sum_m [F_k*I_m](x), variance par entree."""
        x, _, _ = stack_images(images)
        pile = BankService.forward_batch(bank, x)
        moyenne = pile.sum(axis=0) / pile.shape[0]
        variance = np.square(pile - moyenne).sum(axis=0) / pile.shape[0]
        return StatsSnapshot(moyenne, variance=variance)

    @staticmethod
    def pooled_mean(cartes: np.ndarray) -> np.ndarray:
        """(N, K, H', W') -> (K,) moyenne sur les images et les positions, sommation exacte."""
        n, k = cartes.shape[0], cartes.shape[1]
        aire = cartes.shape[2] * cartes.shape[3]
        return np.array([math.fsum(cartes[:, j].ravel()) / (n * aire) for j in range(k)])

    @staticmethod
    def observed_stats_texture(bank: FilterBank, images) -> StatsSnapshot:
        """H_obs[k] regroupe sur les positions ; variance regroupee par filtre."""
        x, _, _ = stack_images(images)
        cartes = BankService.forward_batch(bank, x)
        moyenne = LearnerService.pooled_mean(cartes)
        variance = LearnerService.pooled_mean(np.square(cartes - moyenne[None, :, None, None]))
        return StatsSnapshot(moyenne, variance=variance)

    # ---- Mises a jour ----

    @staticmethod
    def _ascend(model, snapshot: StatsSnapshot, gamma_t):
        if snapshot.h_syn is None:
            raise UsageError("Statistiques synthetisees manquantes")
        if np.shape(snapshot.h_obs) != model.stats_shape():
            raise GeometryError(f"Statistiques {np.shape(snapshot.h_obs)}, poids {model.stats_shape()}")
        nouveau = model.w + gamma_t * snapshot.ascent
        if not np.all(np.isfinite(nouveau)):
            raise DivergenceError("Poids non finis apres mise a jour", model)
        return model.with_weights(nouveau)

    @staticmethod
    def update_nonstationary(model: NonStationaryFrame, snapshot: StatsSnapshot, gamma_t):
        """w_{k,x} <- w_{k,x} + gamma (H_obs - H_syn)."""
        return LearnerService._ascend(model, snapshot, gamma_t)

    @staticmethod
    def update_stationary(model: StationaryFrame, snapshot: StatsSnapshot, gamma_t):
        """w_k <- w_k + gamma (H_obs_k - H_syn_k), statistiques regroupees."""
        return LearnerService._ascend(model, snapshot, gamma_t)

    # ---- Boucle commune ----

    @staticmethod
    def learn(model, observed, synthesize: Callable, update: Callable,
              config: LearnConfig, expectation: Optional[Callable] = None,
              on_iteration: Optional[Callable] = None) -> tuple:
        """
        Boucle de l'algorithme d'apprentissage.

        observed : liste de StatsSnapshot (H_obs et variance), ou observed(model)
            quand les statistiques observees dependent des parametres
        synthesize(model, lot) : liste des statistiques des chaines
        update(model, snapshots, rates) : nouveau modele
        expectation(model) : statistiques exactes remplacant les chaines
        on_iteration(t, model, state) : appele apres chaque mise a jour

        Retourne (modele, etat des chaines, journal).
        """
        h, w, c = model.image_shape
        geometrie = (h, w, c)
        etat = SamplerService.init_chains(
            "zero", config.n_chains, geometrie, config.master_seed, config.sigma_sq,
            mean_offset=model.mean_offset,
        )
        journal = LearningLog()
        progression = tqdm(range(config.iterations), desc="apprentissage",
                           disable=not Config.SHOW_PROGRESS, leave=False)

        for t in progression:
            if expectation is None:
                if config.start == "cold":
                    etat = SamplerService.init_chains(
                        "noise", config.n_chains, geometrie, config.master_seed,
                        config.sigma_sq, epoch=t + 1, mean_offset=model.mean_offset,
                    )
                try:
                    etat = SamplerService.run_chains(
                        etat, model, config.epsilon, config.langevin_steps, config.threads
                    )
                except DivergenceError as e:
                    logger.error(f"Iteration {t} : {e}")
                    raise DivergenceError(str(e), model, t) from e
                synthetiques = synthesize(model, etat.images)
                energies = FrameService.energy_batch(model, etat.images)
                energie = math.fsum(energies) / len(energies)
            else:
                synthetiques = expectation(model)
                energie = float("nan")

            courant = observed(model) if callable(observed) else observed
            instantanes = [o.with_synthesized(s) for o, s in zip(courant, synthetiques)]
            ecart = max(s.max_abs_diff() for s in instantanes)
            journal.append(LearnRecord(t, ecart, energie, config.base_rate(t)))
            progression.set_postfix(ecart=f"{ecart:.3g}")

            if not math.isfinite(ecart):
                logger.error(f"Iteration {t} : statistiques non finies")
                raise DivergenceError(f"Statistiques non finies a l'iteration {t}", model, t)
            if ecart < config.tolerance:
                journal.converged = True
                logger.info(f"Convergence a l'iteration {t} (ecart {ecart:.3g})")
                break

            taux = [config.rate(t, s.variance) for s in instantanes]
            try:
                model = update(model, instantanes, taux)
            except DivergenceError as e:
                logger.error(f"Iteration {t} : {e}")
                raise DivergenceError(str(e), model, t) from e
            if on_iteration is not None:
                on_iteration(t, model, etat)

        dernier = journal.last()
        if dernier is not None:
            logger.info(
                f"Apprentissage termine : {len(journal.records)} iterations, "
                f"ecart final {dernier.max_abs_diff:.4g}"
            )
        return model, etat, journal

    # ---- Modeles objet et texture ----

    @staticmethod
    def fit_object(bank: FilterBank, images, config: LearnConfig,
                   expectation: Optional[Callable] = None,
                   on_iteration: Optional[Callable] = None) -> tuple:
        """Modele non stationnaire appris sur des images alignees."""
        images = list(images)
        _, forme, offset = stack_images(images)
        model = NonStationaryFrame.zeros(bank, forme, config.sigma_sq, offset)
        observe = LearnerService.observed_stats_object(bank, images)
        logger.info(f"Apprentissage objet : {len(images)} image(s), poids {model.w.shape}")

        def synthese(m, lot):
            pile = BankService.forward_batch(bank, lot)
            return [pile.sum(axis=0) / pile.shape[0]]

        def mise_a_jour(m, instantanes, taux):
            return LearnerService.update_nonstationary(m, instantanes[0], taux[0])

        return LearnerService.learn(
            model, [observe], synthese, mise_a_jour, config,
            None if expectation is None else (lambda m: [expectation(m)]),
            on_iteration,
        )

    @staticmethod
    def fit_texture(bank: FilterBank, images, config: LearnConfig,
                    expectation: Optional[Callable] = None,
                    on_iteration: Optional[Callable] = None) -> tuple:
        """Modele stationnaire, en general a partir d'une seule image."""
        images = list(images)
        _, forme, offset = stack_images(images)
        model = StationaryFrame.zeros(bank, forme, config.sigma_sq, offset)
        observe = LearnerService.observed_stats_texture(bank, images)
        logger.info(f"Apprentissage texture : {len(images)} image(s), {bank.n_filters} filtres")

        def synthese(m, lot):
            return [LearnerService.pooled_mean(BankService.forward_batch(bank, lot))]

        def mise_a_jour(m, instantanes, taux):
            return LearnerService.update_stationary(m, instantanes[0], taux[0])

        return LearnerService.learn(
            model, [observe], synthese, mise_a_jour, config,
            None if expectation is None else (lambda m: [expectation(m)]),
            on_iteration,
        )
