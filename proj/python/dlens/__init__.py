"""dlens: desk-scale distillation laboratory (C++ core bindings)."""

from dlens._core import (
    __version__,
    confidence,
    forward_kl,
    jd_perclass_g,
    jeffreys,
    jsd,
    jsd_perclass_g,
    lcs_length,
    logit_lens,
    mixture,
    reverse_kl,
    rouge_l,
    select_student_layers,
    softmax,
    uniform_map,
)

__all__ = [
    "__version__",
    "confidence",
    "forward_kl",
    "jd_perclass_g",
    "jeffreys",
    "jsd",
    "jsd_perclass_g",
    "lcs_length",
    "logit_lens",
    "mixture",
    "reverse_kl",
    "rouge_l",
    "select_student_layers",
    "softmax",
    "uniform_map",
]
