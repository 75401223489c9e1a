"""
Sous-commande bank : generation de bancs FBK1 (gabor, dog, random).
"""

import logging

from deepframe.config import parse_float_list, parse_int_list
from deepframe.exceptions import UsageError
from deepframe.services.bank_service import BankService
from deepframe.services.format_service import FormatService

logger = logging.getLogger(__name__)

PADDINGS = ("valid", "zero", "circular")
ACTIVATIONS = ("identity", "relu", "abs")


def _liste(convertir, texte: str, nom: str) -> list:
    try:
        valeurs = convertir(texte)
    except ValueError as e:
        raise UsageError(f"--{nom} : {e}")
    if not valeurs:
        raise UsageError(f"--{nom} ne doit pas etre vide")
    return valeurs


def register(subparsers) -> None:
    parser = subparsers.add_parser("bank", help="generer un banc de filtres FBK1")
    types = parser.add_subparsers(dest="bank_type", metavar="{gabor,dog,random}")
    types.required = True

    gabor = types.add_parser("gabor", help="paires de Gabor cosinus/sinus")
    gabor.add_argument("--scales", required=True, help="echelles, ex. 1,2")
    gabor.add_argument("--orientations", type=int, required=True)
    dog = types.add_parser("dog", help="differences de gaussiennes isotropes")
    dog.add_argument("--sizes", required=True, help="tailles du centre, ex. 1,2")
    aleatoire = types.add_parser("random", help="banc aleatoire multi-couches")
    aleatoire.add_argument("--filters", required=True, help="filtres par couche, ex. 4,8")
    aleatoire.add_argument("--kernel-size", type=int, default=3)
    aleatoire.add_argument("--activation", choices=ACTIVATIONS, default="relu")
    aleatoire.add_argument("--stride", type=int, default=1)
    aleatoire.add_argument("--pool-window", type=int, default=0)
    aleatoire.add_argument("--pool-stride", type=int, default=0)
    aleatoire.add_argument("--seed", type=int, default=0)

    for sous, padding in ((gabor, "zero"), (dog, "zero"), (aleatoire, "circular")):
        sous.add_argument("--channels", type=int, default=1, choices=(1, 3))
        sous.add_argument("--padding", choices=PADDINGS, default=padding)
        sous.add_argument("--out", required=True, help="fichier FBK1 a ecrire")
        sous.set_defaults(handler=run_bank)


def run_bank(args) -> int:
    """Construit le banc demande et l'ecrit au format FBK1."""
    if args.bank_type == "gabor":
        bank = BankService.make_gabor_bank(
            _liste(parse_float_list, args.scales, "scales"), args.orientations,
            args.channels, args.padding,
        )
    elif args.bank_type == "dog":
        bank = BankService.make_dog_bank(
            _liste(parse_float_list, args.sizes, "sizes"), args.channels, args.padding
        )
    else:
        bank = BankService.make_random_bank(
            _liste(parse_int_list, args.filters, "filters"), args.kernel_size, args.channels,
            args.activation, args.padding, args.stride, args.pool_window, args.pool_stride,
            args.seed,
        )
    FormatService.save_bank(bank, args.out)
    print(f"{args.out} : {len(bank.layers)} couche(s), {bank.n_filters} filtres")
    return 0
