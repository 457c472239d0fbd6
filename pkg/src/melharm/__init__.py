"""Music-emotion toolkit: mel spectrograms, pitch-class harmonics blinders,
a small from-scratch CNN over valence-arousal quadrants, Grad-CAM heatmaps,
and JS-distance matching for ad insertion."""

__version__ = "0.1.0"

QUADRANTS = ("Q1", "Q2", "Q3", "Q4")
