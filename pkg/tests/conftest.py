import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dslf import core, synth


@pytest.fixture(scope="session")
def glossy_sphere_scene():
    """Small glossy sphere lit by two point lights; shared across tests."""
    cfg = {
        "primitive": {"icosphere": {"level": 2}},
        "materials": [{"kd": [0.35, 0.25, 0.15], "ks": [0.55, 0.55, 0.55],
                       "shininess": 32.0}],
        "lights": [{"position": [2.5, 2.0, 3.0], "intensity": [8.0, 8.0, 8.0]},
                   {"position": [-3.0, 1.0, 1.5], "intensity": [4.0, 4.5, 5.0]}],
        "ambient": [0.06, 0.06, 0.06],
    }
    return synth.make_scene(cfg)


@pytest.fixture(scope="session")
def ring_rig():
    return synth.ring_cameras(12, 3.0, height=0.6, width=200, height_px=200)


@pytest.fixture(scope="session")
def captured(glossy_sphere_scene, ring_rig):
    return synth.capture_dataset(glossy_sphere_scene, ring_rig)


def stacked_quads():
    """Two parallel quads 0.5 apart; everything on the lower one is occluded
    from straight above."""
    base = synth.plane(2, 2)
    pos = np.concatenate([base.positions, base.positions + [0.0, 0.0, 0.5]])
    normals = np.concatenate([base.normals, base.normals])
    uvs = np.concatenate([base.uvs, base.uvs])
    faces = np.concatenate([base.faces, base.faces + base.vertex_count])
    return core.Mesh.create(pos, normals, uvs, faces), base.vertex_count
