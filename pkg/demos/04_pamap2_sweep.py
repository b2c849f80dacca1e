"""
Full configuration x architecture sweep on PAMAP2
=================================================

Point ``PAMAP2_DIR`` at the ``Protocol`` folder of the PAMAP2 release
(``subject101.dat`` ... ``subject109.dat``). The windows are prepared
once, then every (configuration, model) cell is trained and evaluated;
completed cells are skipped when the script is re-run. The whole grid
takes hours on a single core; narrow ``models`` to try it out.
"""

import os
import sys

from alc.cli import RunConfig, sweep

raw = os.environ.get("PAMAP2_DIR")
if not raw:
    sys.exit("set PAMAP2_DIR to the PAMAP2 Protocol directory")

rc = RunConfig(dataset=raw, models=["cnn_lstm"], output_dir="runs/pamap2", workers=1)
computed, skipped = sweep(rc)
print(f"computed {len(computed)} cells, skipped {len(skipped)}")
print(open("runs/pamap2/table_accuracy.csv").read())
print(open("runs/pamap2/comparison_cnn_lstm.csv").read())
