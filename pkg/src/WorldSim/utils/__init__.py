from .seeding import derive_seed, numpy_generator, torch_generator
from .tensor_io import TensorFormatError, read_tensor, write_tensor
from .text import detokenize_caption, tokenize_caption

__all__ = [
    "derive_seed",
    "numpy_generator",
    "torch_generator",
    "TensorFormatError",
    "read_tensor",
    "write_tensor",
    "tokenize_caption",
    "detokenize_caption",
]
