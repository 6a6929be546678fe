"""The triple-branch segmentation network.

One hybrid encoder feeds a CNN decoder, a transformer decoder and the
activation-map branch. With the transformer branch disabled the model
degenerates to a single-branch conv pyramid: the transformer prediction
aliases the CNN prediction so the loss stack keeps working unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .acam import AcamBranch
from .decoders import CNNDecoder, TransformerDecoder, predict_mask, softmax_probs
from .encoder import EncoderConfig, EncoderState, HybridEncoder
from .errors import ConfigError


@dataclass
class ModelOutput:
    logits_cnn: torch.Tensor
    logits_trans: torch.Tensor
    acams: list[torch.Tensor] = field(default_factory=list)
    state: EncoderState | None = None


class ScribFormer(nn.Module):
    def __init__(
        self,
        num_classes: int,
        encoder_config: EncoderConfig | None = None,
        use_transformer: bool = True,
    ):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        self.encoder_config = encoder_config or EncoderConfig()
        self.use_transformer = use_transformer
        self.encoder = HybridEncoder(self.encoder_config, use_transformer=use_transformer)
        self.cnn_decoder = CNNDecoder(self.encoder_config.channels, num_classes)
        if use_transformer:
            self.trans_decoder = TransformerDecoder(self.encoder_config.token_dim, num_classes)
        self.acam_branch = AcamBranch(self.encoder_config.channels, num_classes)

    def forward(self, img: torch.Tensor, with_acam: bool = True) -> ModelOutput:
        state = self.encoder(img)
        logits_cnn = self.cnn_decoder(state)
        logits_trans = self.trans_decoder(state) if self.use_transformer else logits_cnn
        acams = self.acam_branch(state.conv_features) if with_acam else []
        return ModelOutput(logits_cnn, logits_trans, acams, state)

    @torch.no_grad()
    def predict_probs(self, img: torch.Tensor, branch: str = "mean") -> torch.Tensor:
        """Inference-time class probabilities from one or both branches."""
        out = self.forward(img, with_acam=False)
        if branch == "cnn" or not self.use_transformer:
            return softmax_probs(out.logits_cnn)
        if branch == "trans":
            return softmax_probs(out.logits_trans)
        if branch == "mean":
            return (softmax_probs(out.logits_cnn) + softmax_probs(out.logits_trans)) / 2
        raise ConfigError(f"unknown branch {branch!r}; expected cnn, trans or mean")

    @torch.no_grad()
    def predict(self, img: torch.Tensor, branch: str = "mean") -> torch.Tensor:
        return predict_mask(self.predict_probs(img, branch))
