"""Spectral-safety toolkit for selective state-space recurrences.

Subpackages map one-to-one onto the pipeline stages: linalg kernels, the toy
selective SSM, spectral analysis and certificates, the gradient attack, the
online guard, and the experiment drivers behind the CLI.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
