import os
import shutil
import subprocess

# Configuration file for the Sphinx documentation builder.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------
# https://www.sphinx-doc.org/en/master/usage/configuration.html#project-information

project = "World_Sim"
copyright = "2026, World_Sim developers"
author = "World_Sim developers"
release = "0.3.0"

# -- General configuration ---------------------------------------------------
# https://www.sphinx-doc.org/en/master/usage/configuration.html#general-configuration

extensions = ["sphinx.ext.autodoc"]

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]


# -- Options for HTML output -------------------------------------------------
# https://www.sphinx-doc.org/en/master/usage/configuration.html#options-for-html-output

html_theme = "alabaster"
html_static_path = ["_static"]

# Class diagrams of the three model modules
os.makedirs("./_readthedocs/html/_static/", exist_ok=True)
class_diagram_files = {
    "vq_tokenizer": "tokenizer/vq_tokenizer.py",
    "world_model": "world_model/model.py",
    "video_decoder": "video_decoder/unet.py",
}
for name, source in class_diagram_files.items():
    subprocess.call(
        [
            "pyreverse",
            "-A",
            "-S",
            "-o",
            "html",
            "-p",
            name,
            "./src/WorldSim/" + source,
        ]
    )
    shutil.move(
        "classes_" + name + ".html", "_readthedocs/html/_static/" + name + ".html"
    )  # Moving the class diagrams so that sphinx can find them
