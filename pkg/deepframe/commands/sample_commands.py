"""
Sous-commandes sample (chaines de Langevin depuis un modele FRM1)
et julesz (synthese par appariement de statistiques).
"""

import logging

import numpy as np

from deepframe.commands.common import (
    OptionSpec, add_options, choice, prepare_out, resolve, sampling_options, thread_count,
)
from deepframe.config import parse_bool
from deepframe.models.chain_state import AnnealSchedule
from deepframe.services.format_service import FormatService
from deepframe.services.image_service import NORMALIZE_POLICIES, ImageService
from deepframe.services.learner_service import LearnerService
from deepframe.services.sampler_service import (
    ENSEMBLES, INIT_MODES, JULESZ_LOG_HEADER, JULESZ_MODES, SamplerService,
)
from deepframe.services.storage_service import StorageService

logger = logging.getLogger(__name__)


def sample_options() -> list:
    return [
        OptionSpec("model", str, required=True, help="modele FRM1"),
        OptionSpec("out", str, required=True, help="repertoire de sortie"),
        OptionSpec("init", choice(*INIT_MODES), "noise", help="initialisation des chaines"),
        OptionSpec("columns", int, "4", help="colonnes de la mosaique"),
    ] + sampling_options()


def julesz_options() -> list:
    return [
        OptionSpec("target", str, required=True, help="image(s) cible"),
        OptionSpec("filters", str, required=True, help="banc FBK1"),
        OptionSpec("out", str, required=True, help="repertoire de sortie"),
        OptionSpec("mode", choice(*JULESZ_MODES), "langevin", help="recuit ou descente"),
        OptionSpec("ensemble", choice(*ENSEMBLES), "texture", help="statistiques regroupees ou par position"),
        OptionSpec("images", int, "1", help="nombre d'images synthetisees"),
        OptionSpec("step-size", float, "0.01", help="pas epsilon"),
        OptionSpec("temperature", float, "1.0", help="temperature initiale T0"),
        OptionSpec("decay", float, "0.95", help="facteur de decroissance par niveau"),
        OptionSpec("floor", float, "0.0", help="temperature plancher"),
        OptionSpec("steps-per-level", int, "100", help="pas par niveau de temperature"),
        OptionSpec("steps", int, "0", help="nombre maximal de pas (0 : jusqu'au plancher)"),
        OptionSpec("tolerance", float, "0.0", help="arret des que sum Delta^2 <= tolerance"),
        OptionSpec("match-norm", parse_bool, "0", help="ajoute ||I||^2/|D| aux statistiques"),
        OptionSpec("seed", int, "0", help="graine maitresse"),
        OptionSpec("normalize", choice(*NORMALIZE_POLICIES), "default", help="normalisation des pixels"),
    ]


def register(subparsers) -> None:
    sample = subparsers.add_parser("sample", help="echantillonner un modele FRM1")
    options = sample_options()
    add_options(sample, options)
    sample.set_defaults(handler=run_sample, options=options)

    julesz = subparsers.add_parser("julesz", help="synthese par ensemble de Julesz")
    options = julesz_options()
    add_options(julesz, options)
    julesz.set_defaults(handler=run_julesz, options=options)


def run_sample(args) -> int:
    valeurs = resolve(args, args.options)
    sortie = prepare_out(valeurs)
    model = FormatService.load_model(valeurs["model"])
    etat = SamplerService.init_chains(
        valeurs["init"], valeurs["chains"], model.image_shape, valeurs["seed"], model.sigma_sq,
        mean_offset=model.mean_offset,
    )
    etat = SamplerService.run_chains(
        etat, model, valeurs["step-size"], valeurs["langevin-steps"], thread_count(valeurs["threads"])
    )
    chemin = sortie / "samples.png"
    ImageService.save_grid(etat.as_images(), chemin, valeurs["columns"])
    print(f"{chemin} : {etat.n_chains} chaines, {etat.steps_taken} pas")
    return 0


def run_julesz(args) -> int:
    valeurs = resolve(args, args.options)
    sortie = prepare_out(valeurs)
    bank = FormatService.load_bank(valeurs["filters"])
    cibles = ImageService.load_images(
        ImageService.list_image_files(valeurs["target"]), valeurs["normalize"]
    )
    if valeurs["ensemble"] == "texture":
        observe = LearnerService.observed_stats_texture(bank, cibles)
    else:
        observe = LearnerService.observed_stats_object(bank, cibles)
    norme = None
    if valeurs["match-norm"]:
        x = np.stack([img.to_chw() for img in cibles])
        norme = float(np.square(x).sum() / x.size)

    calendrier = AnnealSchedule(
        valeurs["temperature"], valeurs["decay"], valeurs["floor"], valeurs["steps-per-level"]
    )
    resultat = SamplerService.julesz_synthesize(
        observe, bank, cibles[0].shape, calendrier, valeurs["step-size"], valeurs["seed"],
        valeurs["mode"], valeurs["ensemble"], valeurs["images"], norme,
        valeurs["steps"] or None, valeurs["tolerance"], mean_offset=cibles[0].mean_offset,
    )
    ImageService.save_grid(resultat.images, sortie / "synthesized.png")
    StorageService.write_csv(sortie / "julesz.csv", JULESZ_LOG_HEADER, resultat.rows())
    print(f"{sortie / 'synthesized.png'} : {resultat.steps} pas, sum Delta^2 = {resultat.sum_delta_sq:.6g}")
    return 0
