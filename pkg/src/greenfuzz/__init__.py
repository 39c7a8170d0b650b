"""Energy-aware coverage-guided greybox fuzzing."""

__version__ = "0.1.0"
