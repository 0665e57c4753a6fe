from .handle import ModelHandle
from .protocol import SeqCounter, WireMessage, decode_message, encode_message
from .runner import ArraySource, JsonlSink, ListSink, LoopConfig, Pipeline, SimSource, TrialLog, run_loop

__all__ = [
    "ArraySource",
    "JsonlSink",
    "ListSink",
    "LoopConfig",
    "ModelHandle",
    "Pipeline",
    "SeqCounter",
    "SimSource",
    "TrialLog",
    "WireMessage",
    "decode_message",
    "encode_message",
    "run_loop",
]
