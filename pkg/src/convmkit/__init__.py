"""convmkit: compact three-branch CNN with exact parameter auditing and
MMD-based unsupervised domain adaptation, on a from-scratch autodiff core."""

from .tensor import Tensor, set_checked
from .layers import ConvM, ConvMConfig, receptive_field, dilation_rate_for, build_conv_m
from .network import (NetworkSpec, Network, build_network, reference_spec,
                      tiny_spec, attach_da_heads, attach_decoders, propagate_shapes)
# note: the audit/gradcheck submodules each define a function of the same
# name; re-export those under distinct names so convmkit.audit and
# convmkit.gradcheck stay bound to the modules
from .audit import (ParamReport, count_network, count_branch1,
                    count_branch2, count_branch3, solve_groups,
                    REFERENCE_COUNTS, REFERENCE_TOTAL)
from .audit import audit as audit_params
from .mmd import gaussian_kernel, median_bandwidth, mmd_loss
from .da import (DAConfig, SolverConfig, DADatasets, DomainBatch, sampling_ratio,
                 make_batch, da_loss, train_da, train_supervised, evaluate)
from .optim import SGDMomentum, poly_lr
from .gradcheck import run_default_suite
from .gradcheck import gradcheck as check_gradients

__version__ = "0.1.0"
