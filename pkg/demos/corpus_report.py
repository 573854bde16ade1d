"""
Corpus statistics for a synthetic dataset
=========================================

Renders a small corpus, splits it 9:1 and writes the report files
(report.json, report.csv and three SVG charts).

    python demos/corpus_report.py [out_dir]
"""
import os
import sys
import tempfile

from crnnkit import datastats, synth
from crnnkit.charset import read_annotations

out_dir = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="crnnkit-stats-")
data_dir = os.path.join(out_dir, "data")
synth.make_corpus(data_dir, n=300, vocab=60, seed=2, min_len=1, max_len=12)
samples = read_annotations(os.path.join(data_dir, "labels.tsv"))

train, val = datastats.split_train_val(samples, 0.9, seed=42)
print(f"{len(samples)} samples -> {len(train)} train / {len(val)} val")

report = datastats.corpus_report({"train": train, "val": val})
fb = datastats.char_frequency_report(train)
print("distinct characters:", report.distinct_chars)
print("frequency buckets (1001+ ... 1):", fb.as_tuple())
print("longest label:", report.max_length)
print("height fractions:", {k: round(v, 3) for k, v in report.height_fractions.items()})

for path in datastats.write_report(report, os.path.join(out_dir, "report")):
    print("wrote", path)
