"""vplab: visual-prompting segmentation workbench with ensemble PEFT fine-tuning."""

__version__ = "0.1.0"
