"""Learning asymmetric (Motsch-Tadmor) interaction kernels from trajectory data.

Pipeline: simulate (``dynamics``, ``data``) -> implicit-form regression matrix
(``assembly``) -> sparse Bayesian fit per pinned candidate (``sbl``) ->
criterion-based model selection, normalization and error metrics
(``selection``). ``cli`` wires the steps together for experiments.
"""

__version__ = "0.1.0"
