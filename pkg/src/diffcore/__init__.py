from src.diffcore.tensor import (
    NORM_EPS,
    Tensor,
    add,
    backward,
    cosine_similarity_matrix,
    gather_rows,
    l2_normalize_rows,
    masked_mean,
    matmul,
    mean,
    mul,
    pick,
    relu,
    row_masked_logsumexp,
    row_softmax_log,
    scale,
    sub,
    sum,
    tensor,
    transpose,
)

__all__ = [
    "NORM_EPS",
    "Tensor",
    "add",
    "backward",
    "cosine_similarity_matrix",
    "gather_rows",
    "l2_normalize_rows",
    "masked_mean",
    "matmul",
    "mean",
    "mul",
    "pick",
    "relu",
    "row_masked_logsumexp",
    "row_softmax_log",
    "scale",
    "sub",
    "sum",
    "tensor",
    "transpose",
]
