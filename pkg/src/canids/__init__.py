"""Signal-level CAN bus intrusion detection with a GRU recurrent autoencoder."""

__version__ = "0.1.0"
