from collections import namedtuple

Layer = namedtuple("Layer", ["weight", "bias"])

ForwardTrace = namedtuple(
    "ForwardTrace", ["pre_activations", "activations", "logits", "probabilities"]
)

# the only value a client ever sends to the server
StandinMessage = namedtuple("StandinMessage", ["client_id", "sample_count", "payload"])

RunHistory = namedtuple("RunHistory", ["records", "params"])

ImagePair = namedtuple(
    "ImagePair", ["reference", "candidate", "value_range"], defaults=[1.0]
)

Quality = namedtuple("Quality", ["mse", "psnr", "ssim"])

AttackReport = namedtuple(
    "AttackReport", ["reconstruction", "label", "objective_trace", "metrics"]
)

GradientDump = namedtuple(
    "GradientDump",
    ["spec_hash", "round", "client_id", "transform", "tensors", "kind"],
    defaults=["gradient"],
)
