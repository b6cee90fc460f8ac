"""Regenerate the bundled sample corpus (20 training + 6 validation images)."""

from ailsr.samples import generate_corpus, sample_dir

if __name__ == "__main__":
    generate_corpus(sample_dir("train"), 20, size=64, seed=2024, prefix="train")
    generate_corpus(sample_dir("val"), 6, size=64, seed=7, prefix="val")
