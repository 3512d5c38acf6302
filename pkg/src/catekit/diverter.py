"""Parameter-free gating that splits a shared representation into two flows.

Given a shared representation f (batch x width) and a per-record treatment
scalar t broadcast across the width, the split produces

    control flow:    f_c = max(1 - sigmoid(max(0, f + t)), 0)
    treatment flow:  f_t = sigmoid(max(0, f + t - 1))

so every entry of f_c lies in [0, 0.5] and every entry of f_t in [0.5, 1).
Raising t shifts mass from the control flow to the treatment flow, and both
maps are 0.25-Lipschitz in t. t is not restricted to {0, 1}; any finite real
(e.g. a dose) is accepted. After each branch transforms its flow, the two
branch outputs are merged by elementwise addition.

The outer max(., 0) in the control flow is inert (1 - sigmoid is already
nonnegative) but kept so the computation graph applies both clamps.
"""

import numpy as np

from .graph import _stable_sigmoid
from .tensor import ShapeMismatchError, Tensor, as_array


def diverter_split(f, t):
    """Apply both gate formulas elementwise; returns (f_c, f_t) Tensors.

    f is (batch, width) (or any shape); t is a per-record scalar, broadcast
    across the remaining axes.
    """
    fa = as_array(f)
    ta = as_array(t)
    if ta.ndim == 0:
        shifted = fa + float(ta)
    elif fa.ndim >= 1 and ta.shape == (fa.shape[0],):
        shifted = fa + ta.reshape((-1,) + (1,) * (fa.ndim - 1))
    else:
        raise ShapeMismatchError(f"treatment scalars {ta.shape} do not broadcast over {fa.shape}")
    f_c = np.maximum(1.0 - _stable_sigmoid(np.maximum(shifted, 0.0)), 0.0)
    f_t = _stable_sigmoid(np.maximum(shifted - 1.0, 0.0))
    return Tensor(f_c), Tensor(f_t)


def diverter_merge(branch_c, branch_t):
    """Merge the processed flows by elementwise addition."""
    a = as_array(branch_c)
    b = as_array(branch_t)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot merge flows of shape {a.shape} and {b.shape}")
    return Tensor(a + b)


def add_diverter(graph, f_node, t_ref):
    """Append the split to a NetworkGraph; returns the (control, treatment) node names.

    t_ref is a placeholder or node holding one scalar per record.
    """
    shifted = graph.add_scalar(f_node, t_ref, name=f"{f_node}.shift")
    f_c = graph.relu(
        graph.affine(
            graph.sigmoid(graph.relu(shifted, name=f"{f_node}.c_clamp"), name=f"{f_node}.c_sig"),
            -1.0,
            1.0,
            name=f"{f_node}.c_flip",
        ),
        name=f"{f_node}.control",
    )
    f_t = graph.sigmoid(
        graph.relu(
            graph.affine(shifted, 1.0, -1.0, name=f"{f_node}.t_shift"),
            name=f"{f_node}.t_clamp",
        ),
        name=f"{f_node}.treatment",
    )
    return f_c, f_t
