"""Static feedback equivalence of control-affine systems to triangular forms."""

from ._core import (
    FlatcheckError,
    Model,
    check,
    crane_model,
    generate_tf,
    load_model,
    parse_model,
    scramble,
    simulate,
    state_count,
    template_states,
    verify_output,
    verify_transformation,
)

__all__ = [
    "FlatcheckError",
    "Model",
    "check",
    "crane_model",
    "generate_tf",
    "load_model",
    "parse_model",
    "scramble",
    "simulate",
    "state_count",
    "template_states",
    "verify_output",
    "verify_transformation",
]
