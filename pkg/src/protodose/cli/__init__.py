"""Experiment runner and command-line front end."""
