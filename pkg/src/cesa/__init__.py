"""Scene-aware text-to-motion synthesis co-trained with an interaction analyzer."""

__version__ = "0.1.0"
