from .qp import QPProblem, QPSolution, solve_qp, clamp_controls
from .ddp import OCProblem, ProximalTerm, DDPSolution, ddp_solve

__all__ = ["QPProblem", "QPSolution", "solve_qp", "clamp_controls",
           "OCProblem", "ProximalTerm", "DDPSolution", "ddp_solve"]
