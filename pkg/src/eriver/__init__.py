"""Mean-field equilibrium of electric ride-hailing routing and charging."""

__version__ = "0.1.0"
