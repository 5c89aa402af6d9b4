"""slim-extractor: turns audio clips into SLEM subspace embedding files.

Feeds the detection engine through its file formats only: per clip, the
hidden states of a style encoder (layers 0-10) and a linguistics encoder
(layers 14-21) are written as two SLEM files, plus a dataset manifest.
"""

__version__ = "0.1.0"
