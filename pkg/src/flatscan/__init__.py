"""Thin-layer material maps from flatbed-style scans.

Material model, scanner rendering, inverse-rendering fitter, evaluation
metrics and a procedural dataset generator.
"""

from importlib import resources

from .fit import FitConfig, Observation, delight, fit_material
from .losses import LossWeights, cycle_loss, full_loss, image_loss
from .material import MaterialMaps, TextureMap, normal_decode, normal_encode
from .metrics import MetricReport, direction_set, evaluate, l_bsdf, l_brdf, l_btdf
from .shading import IlluminationModel, render, scanner_pair

__version__ = "0.1.0"


def sample_material_path():
    """Directory of the small specular-free bundle shipped with the package."""
    return resources.files(__name__) / "data" / "sample_material"


__all__ = [
    "FitConfig", "IlluminationModel", "LossWeights", "MaterialMaps", "MetricReport",
    "Observation", "TextureMap", "cycle_loss", "delight", "direction_set", "evaluate",
    "fit_material", "full_loss", "image_loss", "l_brdf", "l_bsdf", "l_btdf",
    "normal_decode", "normal_encode", "render", "sample_material_path", "scanner_pair",
]
