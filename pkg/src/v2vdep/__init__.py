"""Delay dependence between V2V links sharing a Poisson interferer field.

Modules: :mod:`scenario` (configuration), :mod:`analytic` (closed-form CDFs
and Blomqvist's beta), :mod:`montecarlo` (simulation ground truth),
:mod:`optimizer` (beta-maximising power allocation) and :mod:`harness`
(experiment runners behind the ``v2vdep`` command).
"""

__version__ = "0.1.0"
