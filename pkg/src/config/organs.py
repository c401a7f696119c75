"""Organ recipe catalog for head-and-neck phantoms.

Background intensity is 0.3, so the chiasm and optic nerves sit within 0.1
of it while the mandible is at least 0.5 brighter.
"""

from typing import Dict, List

from src.config.run_config import OrganRecipe
from src.errors import ConfigurationError

# Painting order matters: later organs never overwrite earlier ones.
HEAD_AND_NECK: List[OrganRecipe] = [
    OrganRecipe(name="brain_stem", family="ellipse", intensity=(0.55, 0.62), area=(0.02, 0.05), center=(0.35, 0.5)),
    OrganRecipe(name="chiasm", family="ellipse", intensity=(0.36, 0.39), area=(0.004, 0.015), center=(0.17, 0.5), aspect=(1.5, 2.5)),
    OrganRecipe(name="mandible", family="ring", intensity=(0.85, 0.95), area=(0.05, 0.12), center=(0.5, 0.5), jitter=0.02),
    OrganRecipe(name="spinal_cord", family="strip", intensity=(0.5, 0.58), area=(0.01, 0.03), center=(0.65, 0.5), aspect=(3.0, 5.0)),
    OrganRecipe(name="optic_nerve_l", family="ellipse", intensity=(0.34, 0.38), area=(0.003, 0.012), center=(0.15, 0.35), aspect=(0.3, 0.6), jitter=0.02),
    OrganRecipe(name="optic_nerve_r", family="ellipse", intensity=(0.34, 0.38), area=(0.003, 0.012), center=(0.15, 0.65), aspect=(0.3, 0.6), jitter=0.02),
    OrganRecipe(name="submandibular_l", family="ellipse", intensity=(0.45, 0.52), area=(0.008, 0.025), center=(0.72, 0.3)),
    OrganRecipe(name="submandibular_r", family="ellipse", intensity=(0.45, 0.52), area=(0.008, 0.025), center=(0.72, 0.7)),
    OrganRecipe(name="parotid_l", family="ellipse", intensity=(0.62, 0.7), area=(0.015, 0.04), center=(0.42, 0.16)),
    OrganRecipe(name="parotid_r", family="ellipse", intensity=(0.62, 0.7), area=(0.015, 0.04), center=(0.42, 0.84)),
]

DESK: List[OrganRecipe] = [
    OrganRecipe(name="mandible", family="ring", intensity=(0.85, 0.95), area=(0.06, 0.14), center=(0.45, 0.5), jitter=0.02, thickness=0.09),
    OrganRecipe(name="brain_stem", family="ellipse", intensity=(0.55, 0.65), area=(0.03, 0.07), center=(0.35, 0.5)),
    OrganRecipe(name="parotid", family="paired", intensity=(0.62, 0.72), area=(0.03, 0.08), center=(0.38, 0.2)),
    OrganRecipe(name="chiasm", family="ellipse", intensity=(0.36, 0.39), area=(0.006, 0.02), center=(0.15, 0.5), aspect=(1.5, 2.5), jitter=0.02),
]

_CATALOGS: Dict[int, List[OrganRecipe]] = {4: DESK, 10: HEAD_AND_NECK}


def default_recipes(num_organs: int) -> List[OrganRecipe]:
    """The desk set for 4 organs, otherwise the first ``num_organs`` of the full set."""
    if num_organs in _CATALOGS:
        return list(_CATALOGS[num_organs])
    if not 1 <= num_organs <= len(HEAD_AND_NECK):
        raise ConfigurationError(f"no default recipes for {num_organs} organs")
    return HEAD_AND_NECK[:num_organs]


def class_names(num_organs: int) -> List[str]:
    return ["background"] + [recipe.name for recipe in default_recipes(num_organs)]
