"""Tooling for multispectral (color + thermal) pedestrian detection pipelines.

Covers annotation I/O, anchor design, proposal post-processing and score
fusion, loss evaluation, the KAIST miss-rate protocol and annotation
sanitization. Nothing here runs a network or reads pixels.
"""

__version__ = "0.1.0"
FORMAT_VERSION = 1
