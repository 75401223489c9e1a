import numpy as np
import pytest

from conftest import stripes
from deepframe.app import main, version_text
from deepframe.services.format_service import FormatService
from deepframe.services.image_service import ImageService


@pytest.fixture
def textures(tmp_path):
    dossier = tmp_path / "textures"
    dossier.mkdir()
    ImageService.save_image(stripes(8, 8), dossier / "a.png")
    return dossier


@pytest.fixture
def banc(tmp_path):
    chemin = tmp_path / "banc.fbk"
    assert main(["bank", "random", "--filters", "2", "--kernel-size", "3", "--seed", "1",
                 "--out", str(chemin)]) == 0
    return chemin


def _apprendre(textures, banc, sortie, *extra):
    return main([
        "learn-texture", "--images", str(textures), "--filters", str(banc), "--out", str(sortie),
        "--iters", "3", "--langevin-steps", "5", "--chains", "2", "--step-size", "0.05",
        "--threads", "1", "--seed", "7", *extra,
    ])


def test_sans_argument(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "FBK1" in version_text()
    assert version_text() in capsys.readouterr().out


def test_option_invalide():
    assert main(["learn-texture", "--pas-une-option", "1"]) == 1
    assert main(["bank"]) == 1


def test_banc_gabor(tmp_path, capsys):
    chemin = tmp_path / "g.fbk"
    assert main(["bank", "gabor", "--scales", "1,2", "--orientations", "4", "--out", str(chemin)]) == 0
    assert FormatService.load_bank(chemin).n_filters == 16
    assert "16 filtres" in capsys.readouterr().out


def test_banc_echelles_vides(tmp_path):
    assert main(["bank", "dog", "--sizes", "", "--out", str(tmp_path / "d.fbk")]) == 1


def test_apprentissage_reproductible(tmp_path, textures, banc):
    assert _apprendre(textures, banc, tmp_path / "a") == 0
    assert _apprendre(textures, banc, tmp_path / "b") == 0
    for nom in ("model.frm", "learning.csv", "samples.png"):
        assert (tmp_path / "a" / nom).read_bytes() == (tmp_path / "b" / nom).read_bytes()
    lignes = (tmp_path / "a" / "learning.csv").read_text().splitlines()
    assert len(lignes) == 4


def test_configuration_resolue_reutilisable(tmp_path, textures, banc):
    assert _apprendre(textures, banc, tmp_path / "a") == 0
    resolu = tmp_path / "a" / "resolved.cfg"
    assert main(["learn-texture", "--config", str(resolu), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "model.frm").read_bytes() == (tmp_path / "c" / "model.frm").read_bytes()


def test_cle_inconnue_dans_la_configuration(tmp_path, textures, banc):
    fichier = tmp_path / "run.cfg"
    fichier.write_text(f"images={textures}\nfilters={banc}\nout={tmp_path / 'x'}\nvitesse=2\n")
    assert main(["learn-texture", "--config", str(fichier)]) == 1


def test_donnees_invalides(tmp_path, textures, capsys):
    faux = tmp_path / "faux.fbk"
    faux.write_bytes(b"XXXX" + bytes(16))
    assert main(["learn-texture", "--images", str(textures), "--filters", str(faux),
                 "--out", str(tmp_path / "o")]) == 2
    assert "erreur" in capsys.readouterr().err


def test_divergence_sauvegarde_le_dernier_modele(tmp_path, textures, banc):
    sortie = tmp_path / "div"
    code = _apprendre(textures, banc, sortie, "--sigma", "1e-6", "--step-size", "1.0",
                      "--langevin-steps", "100")
    assert code == 3
    modele = FormatService.load_model(sortie / "checkpoint.frm")
    assert np.all(modele.w == 0.0)


def test_echantillonnage(tmp_path, textures, banc):
    assert _apprendre(textures, banc, tmp_path / "a") == 0
    assert main(["sample", "--model", str(tmp_path / "a" / "model.frm"), "--chains", "3",
                 "--langevin-steps", "4", "--out", str(tmp_path / "s")]) == 0
    assert ImageService.load_image(tmp_path / "s" / "samples.png").shape[2] == 1


def test_echantillonnage_meme_rendu_que_l_apprentissage(tmp_path, textures, banc):
    assert _apprendre(textures, banc, tmp_path / "a", "--langevin-steps", "0") == 0
    modele = FormatService.load_model(tmp_path / "a" / "model.frm")
    assert modele.mean_offset == 0.5
    assert main(["sample", "--model", str(tmp_path / "a" / "model.frm"), "--chains", "2",
                 "--init", "zero", "--langevin-steps", "0", "--out", str(tmp_path / "s")]) == 0
    appris = (tmp_path / "a" / "samples.png").read_bytes()
    assert (tmp_path / "s" / "samples.png").read_bytes() == appris
    x = ImageService.load_image(tmp_path / "s" / "samples.png", "raw")
    assert np.any(np.isclose(x.data, 128 / 255))


def test_julesz_descente(tmp_path, textures, banc):
    assert main(["julesz", "--target", str(textures), "--filters", str(banc), "--out", str(tmp_path / "j"),
                 "--mode", "descent", "--steps", "20", "--step-size", "0.1"]) == 0
    lignes = (tmp_path / "j" / "julesz.csv").read_text().splitlines()
    assert len(lignes) >= 2
    assert (tmp_path / "j" / "synthesized.png").exists()


def test_couche_generative(tmp_path, textures, banc):
    sortie = tmp_path / "l"
    assert main(["learn-layer", "--images", str(textures), "--filters", str(banc), "--out", str(sortie),
                 "--experts", "2", "--window", "3", "--iters", "2", "--refine-iters", "1",
                 "--langevin-steps", "3", "--chains", "2", "--step-size", "0.05"]) == 0
    layer = FormatService.load_model(sortie / "model.frm")
    assert layer.weights.shape == (2, 2, 3, 3)
    assert len((sortie / "learning.csv").read_text().splitlines()) == 4


def test_oracle_cache(tmp_path, capsys):
    banc = tmp_path / "petit.fbk"
    assert main(["bank", "random", "--filters", "1", "--kernel-size", "2", "--padding", "valid",
                 "--out", str(banc)]) == 0
    capsys.readouterr()
    assert main(["oracle", "--height", "2", "--width", "2", "--filters", str(banc),
                 "--out", str(tmp_path / "o")]) == 0
    sortie = capsys.readouterr().out
    assert "states=16" in sortie
    assert "log_z=" in sortie
    assert (tmp_path / "o" / "oracle.txt").read_text() == sortie
