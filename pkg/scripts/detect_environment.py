#!/usr/bin/env python3
"""
Detection automatique de la machine.
Genere le fichier .env de deepframe pour l'environnement courant.
"""

import sys

import psutil


def detect_threads() -> int:
    """Coeurs physiques si connus, sinon logiques."""
    return psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True) or 1


def detect_memory_gb() -> float:
    return psutil.virtual_memory().total / 1024 ** 3


def default_chains(memoire_gb: float) -> int:
    """Nombre de chaines par defaut, reduit sur les petites machines."""
    return 16 if memoire_gb >= 4 else 8


def generate_env_file(chemin: str = ".env") -> None:
    """Genere le fichier .env avec les valeurs detectees."""
    print("Detection de l'environnement en cours...")

    threads = detect_threads()
    print(f"  Threads            : {threads}")

    memoire = detect_memory_gb()
    print(f"  Memoire            : {memoire:.1f} Go")

    chaines = default_chains(memoire)
    print(f"  Chaines par defaut : {chaines}")

    contenu = f"""# ============================================================
# Configuration generee automatiquement par detect_environment.py
# ============================================================

# Execution ('auto' : nombre de coeurs detectes)
DEEPFRAME_THREADS={threads}
DEEPFRAME_PROGRESS=1

# Echantillonnage par defaut
DEEPFRAME_EPSILON=0.01
DEEPFRAME_SIGMA_SQ=1.0
DEEPFRAME_CHAINS={chaines}
DEEPFRAME_LANGEVIN_STEPS=100
DEEPFRAME_SEED=0

# Logs
DEEPFRAME_LOG_LEVEL=INFO
DEEPFRAME_LOG_FILE=logs/deepframe.log
"""

    with open(chemin, "w") as f:
        f.write(contenu)

    print(f"\nFichier {chemin} genere avec succes.")


if __name__ == "__main__":
    chemin_env = sys.argv[1] if len(sys.argv) > 1 else ".env"
    generate_env_file(chemin_env)
