"""
Calculs exacts par enumeration sur de petites grilles quantifiees :
fonction de partition, esperances, covariance, log-vraisemblance,
echantillonnage categoriel, ajustement exact et divergence KL.

Les etats sont parcourus dans l'ordre d'un compteur kilometrique
(le dernier pixel varie le plus vite), par blocs de taille fixe.
La densite est p(I) = exp(score(I)) q(I) / Z, ou score est le terme
de caracteristiques du modele et q la reference restreinte a la grille.
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.special import logsumexp, rel_entr

from deepframe.exceptions import GeometryError, InfeasibleTargetError, UsageError
from deepframe.models.frame_model import NonStationaryFrame, StationaryFrame
from deepframe.models.generative_layer import GenerativeLayer
from deepframe.models.oracle_spec import OracleSpec
from deepframe.services.bank_service import BankService
from deepframe.services.frame_service import FrameService
from deepframe.services.generative_service import GenerativeService

logger = logging.getLogger(__name__)

CHUNK = 2 ** 15
# Au-dela de cette norme des poids, une cible non atteinte est declaree infaisable
DIVERGENCE_NORM = 1e3
ARMIJO = 1e-4
MAX_HALVINGS = 40


class OracleService:
    """Verite terrain par enumeration exhaustive."""

    # ---- Enumeration ----

    @staticmethod
    def _check(spec: OracleSpec, model) -> None:
        if tuple(model.image_shape) != spec.image_shape:
            raise GeometryError(f"Modele {model.image_shape}, grille {spec.image_shape}")

    @staticmethod
    def state_images(spec: OracleSpec, indices) -> np.ndarray:
        """Indices d'etats -> lot (n, 1, H, W)."""
        indices = np.asarray(indices, dtype=np.int64)
        niveaux = np.asarray(spec.levels)
        base = len(spec.levels)
        puissances = base ** np.arange(spec.n_pixels - 1, -1, -1, dtype=np.int64)
        chiffres = (indices[:, None] // puissances[None, :]) % base
        return niveaux[chiffres].reshape(-1, 1, spec.height, spec.width)

    @staticmethod
    def _chunks(spec: OracleSpec):
        for debut in range(0, spec.n_states, CHUNK):
            fin = min(spec.n_states, debut + CHUNK)
            yield OracleService.state_images(spec, np.arange(debut, fin, dtype=np.int64))

    @staticmethod
    def _gaussian_norm(spec: OracleSpec) -> float:
        parts = [logsumexp(-np.square(x).sum(axis=(1, 2, 3)) / (2.0 * spec.sigma_sq))
                 for x in OracleService._chunks(spec)]
        return float(logsumexp(parts))

    @staticmethod
    def log_reference(spec: OracleSpec, x: np.ndarray, log_norm: Optional[float] = None) -> np.ndarray:
        """log q(I) pour un lot d'etats de la grille."""
        if spec.reference == "uniform":
            return np.full(x.shape[0], -math.log(spec.n_states))
        if log_norm is None:
            log_norm = OracleService._gaussian_norm(spec)
        return -np.square(x).sum(axis=(1, 2, 3)) / (2.0 * spec.sigma_sq) - log_norm

    @staticmethod
    def _reference_norm(spec: OracleSpec) -> Optional[float]:
        return OracleService._gaussian_norm(spec) if spec.reference != "uniform" else None

    @staticmethod
    def _log_weights(spec, model, x, log_norm) -> np.ndarray:
        return FrameService.feature_terms_batch(model, x) + OracleService.log_reference(spec, x, log_norm)

    @staticmethod
    def exact_partition(spec: OracleSpec, model, _log_norm: Optional[float] = None) -> float:
        """log Z(w) = log sum_I exp(score(I)) q(I), somme decalee par le maximum."""
        OracleService._check(spec, model)
        if _log_norm is None:
            _log_norm = OracleService._reference_norm(spec)
        parts = [logsumexp(OracleService._log_weights(spec, model, x, _log_norm))
                 for x in OracleService._chunks(spec)]
        return float(logsumexp(parts))

    @staticmethod
    def _accumulate(spec: OracleSpec, model, fonction) -> list:
        """Somme sur les blocs de fonction(x, p) (liste de tableaux), p probabilites exactes."""
        norme = OracleService._reference_norm(spec)
        log_z = OracleService.exact_partition(spec, model, norme)
        totaux = None
        for x in OracleService._chunks(spec):
            p = np.exp(OracleService._log_weights(spec, model, x, norme) - log_z)
            parts = fonction(x, p)
            totaux = parts if totaux is None else [t + q for t, q in zip(totaux, parts)]
        return totaux

    # ---- Statistiques ----

    @staticmethod
    def statistic(model, x: np.ndarray) -> np.ndarray:
        """Statistique du modele pour chaque etat : cartes (objet) ou moyennes spatiales (texture)."""
        cartes = BankService.forward_batch(model.bank, x)
        if isinstance(model, StationaryFrame):
            return cartes.sum(axis=(2, 3)) / (cartes.shape[2] * cartes.shape[3])
        return cartes

    @staticmethod
    def exact_expectation(spec: OracleSpec, model, lower_layers=(), include_top: bool = True):
        """
        E_w[statistiques]. Pour une couche generative : liste
        [poids (J, K, h, w), biais (J,)] puis les couches de base demandees.
        """
        OracleService._check(spec, model)
        if isinstance(model, GenerativeLayer):
            bas = list(lower_layers)

            def fonction(x, p):
                haut = GenerativeService.gated_stats(model, x, p) if include_top else []
                return haut + GenerativeService.lower_layer_stats(model, x, bas, p)
            return OracleService._accumulate(spec, model, fonction)

        return OracleService._accumulate(
            spec, model, lambda x, p: [np.tensordot(p, OracleService.statistic(model, x), axes=1)]
        )[0]

    @staticmethod
    def exact_covariance(spec: OracleSpec, model) -> np.ndarray:
        """Covariance (d x d) de la statistique aplatie sous p(I; w)."""
        if isinstance(model, GenerativeLayer):
            raise UsageError("Covariance exacte definie pour les modeles FRAME lineaires")
        moyenne = np.ravel(OracleService.exact_expectation(spec, model))

        def fonction(x, p):
            centre = OracleService.statistic(model, x).reshape(x.shape[0], -1) - moyenne
            return [centre.T @ (p[:, None] * centre)]
        return OracleService._accumulate(spec, model, fonction)[0]

    @staticmethod
    def exact_log_likelihood(spec: OracleSpec, model, images) -> float:
        """(1/M) sum_m log p(I_m; w) pour des images de la grille."""
        OracleService._check(spec, model)
        x = OracleService._as_batch(images)
        norme = OracleService._reference_norm(spec)
        log_z = OracleService.exact_partition(spec, model, norme)
        valeurs = OracleService._log_weights(spec, model, x, norme) - log_z
        return math.fsum(valeurs) / len(valeurs)

    @staticmethod
    def _as_batch(images) -> np.ndarray:
        if isinstance(images, np.ndarray):
            return images if images.ndim == 4 else images[None]
        return np.stack([img.to_chw() for img in images])

    # ---- Tables ----

    @staticmethod
    def exact_table(spec: OracleSpec, model) -> np.ndarray:
        """p(I; w) pour tous les etats, dans l'ordre d'enumeration."""
        norme = OracleService._reference_norm(spec)
        log_z = OracleService.exact_partition(spec, model, norme)
        return np.concatenate([
            np.exp(OracleService._log_weights(spec, model, x, norme) - log_z)
            for x in OracleService._chunks(spec)
        ])

    @staticmethod
    def reference_table(spec: OracleSpec) -> np.ndarray:
        """q(I) restreinte a la grille et renormalisee."""
        if spec.reference == "uniform":
            return np.full(spec.n_states, 1.0 / spec.n_states)
        norme = OracleService._gaussian_norm(spec)
        return np.concatenate([
            np.exp(OracleService.log_reference(spec, x, norme)) for x in OracleService._chunks(spec)
        ])

    @staticmethod
    def exact_sample(spec: OracleSpec, model, n: int, seed: int = 0) -> tuple:
        """Tirage categoriel direct selon p : (indices, lot (n, 1, H, W))."""
        table = OracleService.exact_table(spec, model)
        rng = np.random.default_rng(seed)
        indices = rng.choice(spec.n_states, size=n, p=table / table.sum())
        return indices, OracleService.state_images(spec, indices)

    @staticmethod
    def random_feasible_table(spec: OracleSpec, model, rng: np.random.Generator) -> np.ndarray:
        """
        Distribution p de meme esperance des statistiques que p(.; w) :
        perturbation dans le noyau des contraintes, bornee pour rester >= 0.
        """
        centre = OracleService.exact_table(spec, model)
        stats = np.concatenate([
            OracleService.statistic(model, x).reshape(x.shape[0], -1) for x in OracleService._chunks(spec)
        ])
        contraintes = np.vstack([stats.T, np.ones(spec.n_states)])
        for _ in range(100):
            direction = rng.standard_normal(spec.n_states)
            coefficients = np.linalg.lstsq(contraintes.T, direction, rcond=None)[0]
            direction = direction - contraintes.T @ coefficients
            negatifs = direction < 0
            if not negatifs.any():
                continue
            limite = np.min(centre[negatifs] / -direction[negatifs])
            table = centre + rng.uniform(0.0, 1.0) * limite * direction
            if np.all(table >= 0):
                return table / table.sum()
        raise UsageError("Aucune perturbation admissible trouvee")

    @staticmethod
    def exact_kl(spec: OracleSpec, p_table, q_table) -> float:
        """KL(p || q) = sum p log(p / q), 0 log 0 = 0 ; +inf si q = 0 la ou p > 0."""
        p = np.asarray(p_table, dtype=np.float64)
        q = np.asarray(q_table, dtype=np.float64)
        if p.shape != (spec.n_states,) or q.shape != (spec.n_states,):
            raise GeometryError(f"Tables {p.shape}/{q.shape}, {spec.n_states} etats attendus")
        for nom, table in (("p", p), ("q", q)):
            if np.any(table < 0) or abs(math.fsum(table) - 1.0) > 1e-9:
                raise UsageError(f"Table {nom} non normalisee")
        if np.any((q == 0) & (p > 0)):
            return math.inf
        return math.fsum(rel_entr(p, q))

    # ---- Ajustement exact ----

    @staticmethod
    def exact_fit(spec: OracleSpec, bank, images=None, kind: str = "nonstationary",
                  target=None, tolerance: float = 1e-8, max_iter: int = 100) -> tuple:
        """
        Maximum de vraisemblance exact par Newton amorti :
        pas lstsq(Cov, T_obs - E_w[T]) puis recherche lineaire d'Armijo
        sur l(w) = <w, T_obs> - log Z(w). Retourne (modele, ecart final).
        """
        classes = {"nonstationary": NonStationaryFrame, "stationary": StationaryFrame}
        if kind not in classes:
            raise UsageError(f"Type de modele '{kind}' inconnu")
        model = classes[kind].zeros(bank, spec.image_shape, spec.sigma_sq)
        if target is None:
            if images is None:
                raise UsageError("Il faut des images observees ou une cible")
            x = OracleService._as_batch(images)
            pile = OracleService.statistic(model, x)
            target = pile.sum(axis=0) / pile.shape[0]
        cible = np.asarray(target, dtype=np.float64)
        if cible.shape != model.stats_shape():
            raise GeometryError(f"Cible {cible.shape}, statistiques {model.stats_shape()}")

        # statistique suffisante = echelle * statistique du modele
        if kind == "stationary":
            _, hs, ws = bank.output_shape(spec.height, spec.width)
            echelle = float(hs * ws)
        else:
            echelle = 1.0
        norme = OracleService._reference_norm(spec)

        def vraisemblance(m) -> float:
            return echelle * float(np.vdot(m.w, cible)) - OracleService.exact_partition(spec, m, norme)

        ecart = math.inf
        for iteration in range(max_iter + 1):
            moyenne = OracleService.exact_expectation(spec, model)
            ecart = float(np.max(np.abs(moyenne - cible), initial=0.0))
            if ecart <= tolerance:
                logger.info(f"Ajustement exact : convergence en {iteration} iterations (ecart {ecart:.3g})")
                return model, ecart
            if np.linalg.norm(model.w) > DIVERGENCE_NORM or iteration == max_iter:
                break
            gradient = echelle * (cible - moyenne).ravel()
            hessienne = echelle ** 2 * OracleService.exact_covariance(spec, model)
            direction = np.linalg.lstsq(hessienne, gradient, rcond=None)[0]
            if not np.any(direction):
                direction = gradient
            courant = vraisemblance(model)
            pente = float(np.dot(gradient, direction))
            pas = 1.0
            for _ in range(MAX_HALVINGS):
                poids = model.w + pas * direction.reshape(model.w.shape)
                if not np.all(np.isfinite(poids)):
                    pas /= 2.0
                    continue
                candidat = model.with_weights(poids)
                if vraisemblance(candidat) >= courant + ARMIJO * pas * pente:
                    break
                pas /= 2.0
            else:
                logger.warning(f"Ajustement exact : recherche lineaire bloquee a l'iteration {iteration}")
                break
            model = candidat

        norme_w = float(np.linalg.norm(model.w))
        if norme_w > DIVERGENCE_NORM or not math.isfinite(norme_w):
            logger.error(f"Cible infaisable : ecart {ecart:.3g}, ||w|| = {norme_w:.3g}")
            raise InfeasibleTargetError(
                f"Statistiques cibles hors de l'enveloppe atteignable (ecart {ecart:.3g}, ||w|| = {norme_w:.3g})",
                ecart,
            )
        logger.warning(f"Ajustement exact non converge : ecart {ecart:.3g}")
        return model, ecart
