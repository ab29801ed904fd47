"""Near-field microwave hyperthermia beamforming on dispersive 2D phantoms."""

__version__ = "0.1.0"
