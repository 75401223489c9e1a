# Package deepframe

__version__ = "1.0.0"

# Versions des conteneurs binaires (affichees par --version)
FORMAT_VERSIONS = {"FBK1": 1, "FRM1": 1}
