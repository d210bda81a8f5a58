"""Surface light field compression and free-viewpoint rendering toolkit.

The package is organized around a small pipeline:

- ``core``: domain types (meshes, cameras, ray sample sets) and file I/O.
- ``synth``: analytic scene generator used as ground truth for everything else.
- ``preprocess``: diffuse/specular separation and direction inversion.
- ``network``: the fully-connected residual predictor, training and storage.
- ``registration``: two-view bootstrap, PnP, bundle adjustment.
- ``remesh``: texture-aware superpixel remeshing.
- ``renderer``: CPU rasterizer and the per-vertex inference render path.
- ``metrics``: masked PSNR/SSIM, compression rate, evaluation harness.
- ``cli`` / ``pipeline``: subcommands and reproducible end-to-end runs.
"""

__version__ = "0.1.0"
