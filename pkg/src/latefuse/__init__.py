"""Multi-view session learning from typing event streams.

Each session is a bundle of aligned views (alphanumeric keypress
dynamics, special-key one-hots, accelerometer readings). A bidirectional
gated recurrent encoder summarizes every view, and a fusion head
(fully-connected, factorized second-order, or multi-view product)
maps the per-view summaries to a classification or regression output.
Everything trains end to end with hand-derived gradients and RMSProp.

This package intentionally keeps its top-level namespace import-free so
the CLI can configure thread environment variables before numpy loads;
import the submodules (latefuse.model, latefuse.training, ...) directly.
"""

__version__ = "0.1.0"
