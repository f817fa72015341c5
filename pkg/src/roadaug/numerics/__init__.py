from .autodiff import Tensor, Tape, grad, value_and_grad, detach
from .optim import (AdamState, CgResult, LbfgsResult, LbfgsState, adam_step, cg_solve,
                    lbfgs_minimize)

__all__ = ["Tensor", "Tape", "grad", "value_and_grad", "detach", "AdamState", "adam_step",
           "LbfgsState", "LbfgsResult", "lbfgs_minimize", "CgResult", "cg_solve"]
