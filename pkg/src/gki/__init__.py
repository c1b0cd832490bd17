"""Self-supervised kernel-view pretraining for patient event graphs.

Library layout mirrors the pipeline: records -> graphs -> encoder ->
kernel feature maps -> contrastive objective -> trainer -> evaluation,
plus a theory module that stress-tests the geometric claims and a CLI
that chains the stages and renders report figures.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CheckpointError,
    DataError,
    GkiError,
    NumericError,
    ShapeError,
)
