"""Monte-Carlo and closed-form models of subcarrier-multiplexed BB84 QKD."""

__version__ = "0.1.0"
