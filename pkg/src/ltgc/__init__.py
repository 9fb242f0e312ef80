"""Low-thrust Earth to Venus optimal guidance with learned controllers."""

__version__ = "0.1.0"
