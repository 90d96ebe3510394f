"""Proto Adapt - source-free domain adaptation with an EMA teacher and class prototypes."""

__version__ = "0.1.0"
