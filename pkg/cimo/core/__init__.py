# cimo/core/__init__.py
"""Pipeline stages: graph → diffusion → response → estimand → selection, plus synth."""
