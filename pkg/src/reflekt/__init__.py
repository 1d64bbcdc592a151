"""Finite-instance verification of reflected jump-process heat kernel estimates.

Modules, in pipeline order: ``space`` (metric measure spaces and domains),
``kernel`` (jump kernels and Dirichlet forms), ``whitney`` (exterior ball
covers), ``partition`` (capacity cutoffs, partition of unity, mass
functions), ``extension`` (the extension operator and its probe bounds),
``heat`` (semigroups and heat-kernel ratio bands), ``csj`` (cutoff Sobolev
inequalities) and ``experiment``/``cli`` (configuration-driven runs).
"""
from . import csj, errors, experiment, extension, generators, heat, kernel, partition, space, whitney
from .experiment import ExperimentConfig, ReportBundle, emit_plot_data, emit_reports, run_experiment
from .generators import generate_example
from .kernel import ScaleFunction, build_jump_kernel, reflected_form
from .space import DomainSpec, MetricMeasureSpace, build_space, make_domain

__version__ = "0.1.0"

__all__ = [
    "csj", "errors", "experiment", "extension", "generators", "heat", "kernel", "partition", "space", "whitney",
    "ExperimentConfig", "ReportBundle", "run_experiment", "emit_reports", "emit_plot_data", "generate_example",
    "ScaleFunction", "build_jump_kernel", "reflected_form", "DomainSpec", "MetricMeasureSpace", "build_space",
    "make_domain",
]
