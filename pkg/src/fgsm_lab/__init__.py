"""Desk-scale FGSM adversarial-attack laboratory.

Trains a small convolutional classifier from scratch in numpy and attacks it
with targeted and untargeted fast-gradient-sign perturbations.
"""

__version__ = "0.1.0"
