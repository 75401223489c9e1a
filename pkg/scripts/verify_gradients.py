#!/usr/bin/env python3
"""
Verification des gradients analytiques du banc de filtres par
differences finies centrees, sur des bancs aleatoires couvrant
bords, activations et pooling, puis normalisation de l'oracle exact.
Lance apres l'installation pour valider la pile numerique.
"""

import itertools
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv
load_dotenv()

import numpy as np

from deepframe.models.frame_model import NonStationaryFrame
from deepframe.models.oracle_spec import OracleSpec
from deepframe.services.bank_service import BankService
from deepframe.services.oracle_service import OracleService

PAS = 1e-6
TOLERANCE = 1e-4
COUDE = 1e-4
CONFIGURATIONS = list(itertools.product(
    ("valid", "zero", "circular"), ("identity", "relu", "abs"), ((0, 0), (2, 2), (3, 1)),
))


def _loin_des_coudes(bank, x) -> bool:
    """Aucune pre-activation proche de 0 et aucun ex aequo dans les fenetres de pooling."""
    _, traces = BankService.forward_batch(bank, x, keep_trace=True)
    for trace in traces:
        if trace.layer.activation.rectifying and np.min(np.abs(trace.pre)) < COUDE:
            return False
        if trace.layer.pooled:
            valeurs = np.sort(trace.activated.ravel())
            if np.min(np.diff(valeurs)) < COUDE:
                return False
    return True


def verifier(padding: str, activation: str, pool: tuple, graine: int) -> float:
    """Erreur relative maximale entre gradient analytique et numerique."""
    rng = np.random.default_rng(graine)
    bank = BankService.make_random_bank(
        [3, 2], kernel_size=3, activation=activation, padding=padding,
        pool_window=pool[0], pool_stride=pool[1], seed=graine,
    )
    for _ in range(20):
        x = rng.standard_normal((1, 1, 9, 9))
        if _loin_des_coudes(bank, x):
            break
    else:
        return 0.0
    g = rng.standard_normal(BankService.forward_batch(bank, x).shape)
    analytique = BankService.backward_image_batch(bank, x, g)

    numerique = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, moins = x.copy(), x.copy()
        plus[index] += PAS
        moins[index] -= PAS
        numerique[index] = (np.sum(g * BankService.forward_batch(bank, plus))
                            - np.sum(g * BankService.forward_batch(bank, moins))) / (2 * PAS)
    echelle = max(1.0, float(np.max(np.abs(numerique))))
    return float(np.max(np.abs(analytique - numerique)) / echelle)


def verifier_oracle() -> float:
    """Ecart a 1 de la somme des probabilites exactes sur une grille 3x3 binaire."""
    bank = BankService.make_random_bank([2], kernel_size=2, padding="valid", seed=0)
    w = np.random.default_rng(0).standard_normal((2, 2, 2))
    table = OracleService.exact_table(OracleSpec(3, 3), NonStationaryFrame(bank, w, 1.0, (3, 3, 1)))
    return abs(float(np.sum(table)) - 1.0)


def verifier_tout() -> list:
    print("=" * 55)
    print("  Verification des gradients (differences finies)")
    print("=" * 55)

    erreurs = []
    for graine, (padding, activation, pool) in enumerate(CONFIGURATIONS):
        nom = f"{padding:<9} {activation:<8} pool={pool[0]}/{pool[1]}"
        try:
            ecart = verifier(padding, activation, pool, graine)
        except Exception as e:
            print(f"  {nom} : ERREUR - {e}")
            erreurs.append(nom)
            continue
        etat = "OK" if ecart <= TOLERANCE else "ECHEC"
        print(f"  {nom} : {etat} ({ecart:.2e})")
        if ecart > TOLERANCE:
            erreurs.append(nom)

    ecart = verifier_oracle()
    etat = "OK" if ecart <= 1e-12 else "ECHEC"
    print(f"  {'normalisation oracle':<28} : {etat} ({ecart:.2e})")
    if ecart > 1e-12:
        erreurs.append("oracle")

    print("=" * 55)
    if erreurs:
        print(f"  ECHECS : {len(erreurs)} configuration(s)")
    else:
        print("  Tous les gradients sont coherents.")
    print("=" * 55)
    return erreurs


if __name__ == "__main__":
    erreurs = verifier_tout()
    sys.exit(1 if erreurs else 0)
