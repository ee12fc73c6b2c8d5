"""Numerical laboratory for Ricci-DeTurck flow on flat tori."""
