"""Movement-segment tokenization and masked-reconstruction pretraining."""

__version__ = "0.1.0"
