"""Joint country-level and province-level text identification.

A compact, dependency-light engine: dense tensors with reverse-mode
automatic differentiation, a small trainable transformer encoder, one
attention-pooling layer per task, and two classifiers trained against a
summed cross-entropy objective. Ships with a TSV data pipeline, a
synthetic hierarchical corpus generator, and a command-line interface.
"""

__version__ = "0.1.0"
