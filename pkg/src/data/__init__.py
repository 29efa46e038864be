from src.data.dataset import Dataset, Sample, read_dataset, stratified_split, write_dataset
from src.data.synthgen import attach_synthetic_text, generate

__all__ = [
    "Dataset",
    "Sample",
    "attach_synthetic_text",
    "generate",
    "read_dataset",
    "stratified_split",
    "write_dataset",
]
