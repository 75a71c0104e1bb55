"""Local-frequency RGB-thermal feature alignment and fusion.

Typical use::

    from lfbnet import Config, init_params, run
    result = run(rgb, thermal, init_params())
"""
from .pipeline import Config, FusionResult, export, init_params, load_config, run

__version__ = "0.1.0"

__all__ = ["Config", "FusionResult", "export", "init_params", "load_config", "run", "__version__"]
