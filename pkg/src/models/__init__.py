"""Encoder F, pair head G, classification block and autoencoder baseline."""

from .encoder import Encoder, EncoderConfig, encoder_parameter_count
from .layers import Module
from .networks import (
    AutoencoderModel,
    ClassifierModel,
    Embedding,
    SiameseModel,
    build_model,
    classify,
    classify_batch,
    encode,
    encode_batch,
    predict_interval,
    predict_pairs,
    reconstruct,
    transfer_encoder,
)

__all__ = [
    "AutoencoderModel",
    "ClassifierModel",
    "Embedding",
    "Encoder",
    "EncoderConfig",
    "Module",
    "SiameseModel",
    "build_model",
    "classify",
    "classify_batch",
    "encode",
    "encode_batch",
    "encoder_parameter_count",
    "predict_interval",
    "predict_pairs",
    "reconstruct",
    "transfer_encoder",
]
