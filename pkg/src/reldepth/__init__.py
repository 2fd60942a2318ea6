"""reldepth: ordinal depth from stereo, ranking pretraining, and log-binned
depth classification at desk scale."""

__version__ = "0.1.0"
