"""Periodic homogenization toolkit for nonlinear dielectric elastomer
composites: cell problems, effective tensors, fine-scale and homogenized
solves, and corrector convergence studies."""

__version__ = "0.1.0"
