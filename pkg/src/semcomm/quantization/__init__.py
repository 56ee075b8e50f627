"""Post-training INT8 quantization."""
