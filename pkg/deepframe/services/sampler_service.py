"""
Dynamique de Langevin sur les images : chaines paralleles
persistantes et synthese par recuit des ensembles de Julesz.

Chaque chaine possede son propre flux Philox derive de
(master_seed, indice de chaine, epoque) : le resultat d'une chaine
ne depend ni des autres chaines ni du nombre de threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from tqdm import tqdm

from deepframe.config import Config
from deepframe.exceptions import DivergenceError, GeometryError, UsageError
from deepframe.models.chain_state import AnnealSchedule, ChainState
from deepframe.models.filter_bank import FilterBank
from deepframe.models.image import Image
from deepframe.services.bank_service import BankService
from deepframe.services.frame_service import FrameService

logger = logging.getLogger(__name__)

INIT_MODES = ("zero", "noise")
JULESZ_MODES = ("langevin", "descent")
ENSEMBLES = ("texture", "object")


@dataclass
class JuleszResult:
    """Images synthetisees, sum Delta^2 final et trajectoire (pas, T, sum Delta^2)."""

    images: list
    sum_delta_sq: float
    trajectory: list = field(default_factory=list)
    steps: int = 0

    def rows(self) -> list:
        return [[pas, repr(t), repr(s)] for pas, t, s in self.trajectory]


JULESZ_LOG_HEADER = ["step", "temperature", "sum_delta_sq"]


class SamplerService:
    """Echantillonnage par dynamique de Langevin."""

    # ---- Flux aleatoires ----

    @staticmethod
    def make_stream(master_seed: int, chain_index: int, epoch: int = 0) -> np.random.Generator:
        """Flux Philox dont la cle derive de (master_seed, chain_index, epoch)."""
        sequence = np.random.SeedSequence([int(master_seed), int(chain_index), int(epoch)])
        cle = sequence.generate_state(2, np.uint64)
        return np.random.Generator(np.random.Philox(key=cle))

    @staticmethod
    def clone_stream(stream: np.random.Generator) -> np.random.Generator:
        copie = np.random.Generator(np.random.Philox())
        copie.bit_generator.state = stream.bit_generator.state
        return copie

    # ---- Chaines ----

    @staticmethod
    def init_chains(mode: str, n_chains: int, geometry: tuple, master_seed: int,
                    sigma_sq: float = 1.0, epoch: int = 0, mean_offset: float = 0.0) -> ChainState:
        """
        Etat initial de n_chains chaines de geometrie (H, W, C) :
        images nulles (mode zero) ou bruit blanc N(0, sigma^2) (mode noise).
        """
        if mode not in INIT_MODES:
            raise UsageError(f"Mode d'initialisation '{mode}' inconnu")
        if n_chains < 1:
            raise UsageError("Il faut au moins une chaine")
        h, w, c = geometry
        flux = [SamplerService.make_stream(master_seed, i, epoch) for i in range(n_chains)]
        if mode == "zero":
            images = np.zeros((n_chains, c, h, w))
        else:
            ecart = math.sqrt(sigma_sq)
            images = np.stack([f.standard_normal((c, h, w)) * ecart for f in flux])
        return ChainState(images, tuple(flux), 0, mean_offset)

    @staticmethod
    def _langevin_batch(model, x: np.ndarray, flux: list, epsilon: float) -> np.ndarray:
        gradient = FrameService.grad_energy_image_batch(model, x)
        bruit = np.stack([f.standard_normal(x.shape[1:]) for f in flux])
        return x - (epsilon ** 2 / 2.0) * gradient + epsilon * bruit

    @staticmethod
    def langevin_step(img: Image, model, epsilon: float, noise: np.random.Generator) -> Image:
        """I' = I - (eps^2 / 2) U'(I, w) + eps Z, Z ~ N(0, 1) tire de noise."""
        if epsilon < 0:
            raise UsageError(f"Pas de Langevin negatif : {epsilon}")
        if tuple(img.shape) != tuple(model.image_shape):
            raise GeometryError(f"Image {img.shape}, le modele attend {model.image_shape}")
        if epsilon == 0:
            return img
        x = SamplerService._langevin_batch(model, img.to_chw()[None], [noise], epsilon)
        return Image.from_chw(x[0], img.mean_offset)

    @staticmethod
    def _groups(n: int, threads: int) -> list:
        threads = max(1, min(threads, n))
        return [list(g) for g in np.array_split(np.arange(n), threads)]

    @staticmethod
    def run_chains(state: ChainState, model, epsilon: float, steps: int,
                   threads: int = 1) -> ChainState:
        """
        Avance chaque chaine de steps pas. Les flux de state sont clones :
        l'etat d'entree reste reutilisable.
        """
        if steps < 0:
            raise UsageError(f"Nombre de pas negatif : {steps}")
        if epsilon < 0:
            raise UsageError(f"Pas de Langevin negatif : {epsilon}")
        h, w, c = model.image_shape
        if state.geometry != (h, w, c):
            raise GeometryError(f"Chaines {state.geometry}, le modele attend {model.image_shape}")
        flux = [SamplerService.clone_stream(f) for f in state.streams]
        if steps == 0 or epsilon == 0:
            return ChainState(state.images, tuple(flux), state.steps_taken + steps, state.mean_offset)

        def avancer(indices: list) -> np.ndarray:
            x = np.array(state.images[indices])
            sous_flux = [flux[i] for i in indices]
            for _ in range(steps):
                x = SamplerService._langevin_batch(model, x, sous_flux, epsilon)
            return x

        groupes = SamplerService._groups(state.n_chains, threads)
        if len(groupes) == 1:
            resultats = [avancer(groupes[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(groupes)) as executor:
                resultats = list(executor.map(avancer, groupes))

        images = np.empty_like(state.images)
        for indices, x in zip(groupes, resultats):
            images[indices] = x
        if not np.all(np.isfinite(images)):
            logger.error(f"Chaines divergentes (epsilon={epsilon})")
            raise DivergenceError(f"Valeurs non finies dans les chaines, epsilon={epsilon} trop grand ?")
        return ChainState(images, tuple(flux), state.steps_taken + steps, state.mean_offset)

    # ---- Ensembles de Julesz ----

    @staticmethod
    def _discrepancy(bank: FilterBank, x: np.ndarray, target: np.ndarray, ensemble: str,
                     norm_target: Optional[float]) -> tuple:
        """Retourne (sum Delta^2, gradient par rapport au lot)."""
        n = x.shape[0]
        cartes = BankService.forward_batch(bank, x)
        aire = cartes.shape[2] * cartes.shape[3]
        if ensemble == "texture":
            # moyenne sur les positions puis sur les images
            stats = np.array([
                math.fsum(cartes[:, k].ravel()) / (aire * n) for k in range(cartes.shape[1])
            ])
            delta = stats - target
            cot = np.broadcast_to(
                (2.0 * delta / (aire * n))[None, :, None, None], cartes.shape
            )
        else:
            delta = cartes.sum(axis=0) / n - target
            cot = np.broadcast_to((2.0 * delta / n)[None], cartes.shape)
        total = math.fsum(np.square(delta).ravel())
        gradient = BankService.backward_image_batch(bank, x, np.ascontiguousarray(cot))

        if norm_target is not None:
            pixels = x[0].size
            norme = math.fsum(np.square(x).ravel()) / (pixels * n)
            delta_norme = norme - norm_target
            total += delta_norme ** 2
            gradient = gradient + (4.0 * delta_norme / (pixels * n)) * x
        return total, gradient

    @staticmethod
    def julesz_synthesize(target, bank: FilterBank, geometry: tuple,
                          schedule: AnnealSchedule = None, epsilon: float = 0.01,
                          master_seed: int = 0, mode: str = "langevin",
                          ensemble: str = "texture", n_images: int = 1,
                          norm_target: Optional[float] = None, steps: Optional[int] = None,
                          tolerance: float = 0.0, initial=None,
                          mean_offset: float = 0.0) -> JuleszResult:
        """
        Minimise sum Delta^2 entre statistiques synthetisees et cible.
        Mode langevin : I <- I - (eps^2/2) grad + eps sqrt(T) Z avec T
        decroissant ; mode descent : T = 0. Arret des que sum Delta^2 <= tolerance.
        mean_offset : normalisation des images cibles, reportee sur les resultats.
        """
        if mode not in JULESZ_MODES:
            raise UsageError(f"Mode de Julesz '{mode}' inconnu")
        if ensemble not in ENSEMBLES:
            raise UsageError(f"Ensemble '{ensemble}' inconnu")
        schedule = schedule or AnnealSchedule()
        if steps is None:
            steps = (schedule.floor_level() + 1) * schedule.steps_per_level
        h, w, c = geometry
        k, hs, ws = bank.output_shape(h, w)
        cible = np.asarray(getattr(target, "h_obs", target), dtype=np.float64)
        attendu = (k,) if ensemble == "texture" else (k, hs, ws)
        if cible.shape != attendu:
            raise GeometryError(f"Cible {cible.shape}, attendu {attendu} pour l'ensemble {ensemble}")

        if initial is None:
            etat = SamplerService.init_chains("noise", n_images, geometry, master_seed)
            x, flux = np.array(etat.images), list(etat.streams)
        else:
            if isinstance(initial, Image):
                initial = [initial]
            x = np.stack([i.to_chw() for i in initial]) if isinstance(initial, list) else np.array(initial)
            if x.shape[1:] != (c, h, w):
                raise GeometryError(f"Images initiales {x.shape[1:]}, attendu {(c, h, w)}")
            flux = [SamplerService.make_stream(master_seed, i) for i in range(x.shape[0])]

        total, gradient = SamplerService._discrepancy(bank, x, cible, ensemble, norm_target)
        trajectoire = [(0, schedule.temperature(0) if mode == "langevin" else 0.0, total)]
        pas = 0
        progression = tqdm(total=steps, desc="julesz", disable=not Config.SHOW_PROGRESS, leave=False)
        while total > tolerance and pas < steps:
            temperature = schedule.temperature(pas) if mode == "langevin" else 0.0
            x = x - (epsilon ** 2 / 2.0) * gradient
            if temperature > 0:
                bruit = np.stack([f.standard_normal(x.shape[1:]) for f in flux])
                x = x + epsilon * math.sqrt(temperature) * bruit
            pas += 1
            total, gradient = SamplerService._discrepancy(bank, x, cible, ensemble, norm_target)
            if not (math.isfinite(total) and np.all(np.isfinite(x))):
                logger.error(f"Julesz : divergence au pas {pas} (epsilon={epsilon})")
                raise DivergenceError(
                    f"sum Delta^2 non fini au pas {pas} : epsilon={epsilon} trop grand", None, pas
                )
            trajectoire.append((pas, temperature, total))
            progression.update(1)
        progression.close()

        logger.info(f"Julesz ({ensemble}, {mode}) : {pas} pas, sum Delta^2 = {total:.6g}")
        images = [Image.from_chw(i, mean_offset) for i in x]
        return JuleszResult(images, total, trajectoire, pas)
