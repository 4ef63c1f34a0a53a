"""
UCIP restoration package
Dynamic prompt generation, prompt-guided token mixing and the tooling
around them: degradation, training, evaluation and offset analysis
"""

__version__ = "0.1.0"
