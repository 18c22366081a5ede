"""Offline ONNX to model-JSON converter for the verification engine."""

__version__ = "0.1.0"

from .converter import ConversionError, ConversionReport, convert

__all__ = ["ConversionError", "ConversionReport", "convert"]
