"""From fired proposal columns to line boxes, and the x/w-only refit.

Run: python3 demos/line_assembly_and_refit.py
"""

import numpy as np

from slicedet.proposals import VerticalProposal
from slicedet.textlines import connect_proposals, decode_xw, encode_xw, line_bbox

# three adjacent columns with agreeing heights, then a far-away stray:
# the first three merge into one line, the stray stays a singleton
proposals = [
    VerticalProposal(col=2, y_center=40.0, height=30.0, score=0.95),
    VerticalProposal(col=3, y_center=41.0, height=31.0, score=0.90),
    VerticalProposal(col=4, y_center=40.5, height=30.0, score=0.88),
    VerticalProposal(col=12, y_center=44.0, height=28.0, score=0.80),
]
lines = connect_proposals(proposals)
for i, line in enumerate(lines):
    cols = [p.col for p in line.members]
    print("line %d: cols %-10s bbox %s  score %.3f"
          % (i, cols, tuple(round(v, 1) for v in line.bbox), line.score))

# a line box is a union of 16 px columns, so it usually over-covers the
# word by a sliver on each side; the refit head predicts a horizontal
# center shift and a log-width ratio to shave that off
line_box = lines[0].bbox
word_box = (37.0, 26.0, 77.0, 55.0)
t = encode_xw(line_box, word_box)
print("line %s vs word %s" % (line_box, word_box))
print("encoded (t_x, t_w) = (%.4f, %.4f)" % t)

refit = decode_xw(line_box, t)
print("decoded box %s" % (tuple(round(v, 2) for v in refit),))
print("x recovered: %s, y untouched: %s"
      % (np.allclose(refit[::2], word_box[::2]),
         (refit[1], refit[3]) == (line_box[1], line_box[3])))
