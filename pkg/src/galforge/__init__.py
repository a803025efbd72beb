"""galforge: generative active learning with optimized generator conditions, on synthetic worlds."""

__version__ = "0.1.0"
