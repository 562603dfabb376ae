"""Differentiable blown-wing aerodynamics with hybrid physics/ML surrogates.

Subpackage map:
  autodiff  -- reverse-mode tape on numpy arrays
  geometry  -- aircraft configuration, panel mesh, control kinematics
  vlm       -- vortex lattice solver (AIC, circulations, forces, coefficients)
  bem       -- blade-element-momentum propeller solver and slipstream model
  nn        -- multilayer perceptron, Adam optimizer, feature scaling
  piml      -- the four comparable models (low-fidelity, hybrid A/B, pure ANN)
  training  -- training loop, evaluation metrics, correction reports
  data      -- Latin hypercube sampling, synthetic high-fidelity oracle, datasets
  cli       -- command-line entry point
"""

__version__ = "0.1.0"
