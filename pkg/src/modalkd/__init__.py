"""Multimodal knowledge distillation with a modality-relation loss, on a numpy autodiff core."""
