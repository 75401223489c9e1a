"""
Point d'entree de deepframe.
Lance la ligne de commande (apprentissage, echantillonnage, bancs de filtres).
"""

import sys
import os

# Ajout du repertoire racine au PYTHONPATH
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from deepframe.app import main

if __name__ == "__main__":
    sys.exit(main())
