"""kbmine: mine a knowledge base of ranked topic cards from plain-text
documents — NER with valid-path BIO decoding, GBDT topic ranking,
definition mining, and embedding-based card building."""

__version__ = "0.1.0"
