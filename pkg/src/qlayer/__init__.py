"""Ground states of Dirichlet Laplacians on layers built over surfaces."""

__version__ = "0.1.0"
