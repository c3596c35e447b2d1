"""PPO on Pendulum with rewards composed from a learned hierarchy of signals."""

__version__ = "0.1.0"
