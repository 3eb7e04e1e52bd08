"""Joint beamforming-feedback and positioning laboratory on synthetic Wi-Fi CSI."""

__version__ = "0.1.0"
