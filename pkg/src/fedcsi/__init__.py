"""Desk-scale downlink CSI acquisition: window-attention autoencoder with a
learnable pilot, variational channel-sample generation for pre-training, and
communication-efficient federated fine-tuning with over-the-air aggregation."""

__version__ = "0.1.0"
