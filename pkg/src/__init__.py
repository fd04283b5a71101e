"""Alpha-scaling interventions on event histories: simulation, truth curves, targeted estimation."""

__version__ = "0.1.0"
