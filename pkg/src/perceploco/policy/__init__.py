"""Cross-modal recurrent policy network with analytic gradients."""

from .container import decode_params, encode_params, load_params, save_params
from .gates import GateRecord, gate_statistics, parse_records
from .gradcheck import BLOCKS, BlockResult, check_block, run_gradcheck
from .network import (
    ForwardTrace,
    Gradients,
    PolicyDims,
    PolicyParams,
    PolicyState,
    StepOutput,
    assemble_proprio,
    attention_forward,
    backward,
    forward,
    grf_forward,
    head_forward,
    highway_forward,
    init_params,
    param_shapes,
    proprio_forward,
    recurrent_forward,
    rollout_forward,
    tokenize_forward,
    velocity_forward,
    velocity_loss,
)

__all__ = [
    "BLOCKS", "BlockResult", "ForwardTrace", "GateRecord", "Gradients", "PolicyDims", "PolicyParams",
    "PolicyState", "StepOutput", "assemble_proprio", "attention_forward", "backward", "check_block",
    "decode_params", "encode_params", "forward", "gate_statistics", "grf_forward", "head_forward",
    "highway_forward", "init_params", "load_params", "param_shapes", "parse_records", "proprio_forward",
    "recurrent_forward", "rollout_forward", "run_gradcheck", "save_params", "tokenize_forward",
    "velocity_forward", "velocity_loss",
]
