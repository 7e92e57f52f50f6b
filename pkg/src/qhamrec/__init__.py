"""Hybrid recommender: rating autoencoder, polar archetypes and a simulated quantum Hopfield memory."""

__version__ = "0.1.0"
