"""Ground truth for the proposal head: slices, space boxes, anchor labels.

Two words on one line, sliced into 16 px columns. The gap between them
becomes a space box (a negative sample with word-like height), and every
anchor on the feature grid gets a label plus, for positives, regression
targets toward its slice.

Run: python3 demos/slices_spaces_anchors.py
"""

import numpy as np

from slicedet.proposals import (AnchorConfig, Label, assign_labels, derive_space_boxes,
                                sample_minibatch, slice_words)

words = [(10.0, 20.0, 88.0, 52.0), (120.0, 22.0, 180.0, 50.0)]
slices = slice_words(words)
print("word boxes: %s" % (words,))
for s in slices:
    print("  slice cell %2d  status %-8s  y %5.1f..%5.1f"
          % (s.cell, s.status.value, s.box[1], s.box[3]))

spaces = derive_space_boxes(words)
for sp in spaces:
    print("space box between words %d and %d: x %5.1f..%5.1f"
          % (sp.left_word, sp.right_word, sp.box[0], sp.box[2]))

config = AnchorConfig(heights=(11, 16, 23, 33, 47))
extent = (5, 13)  # feature cells covering an 80 x 208 image
assignment = assign_labels(extent, slices, spaces, config)
labels = assignment.labels
counts = {lab: int((labels == lab).sum()) for lab in
          (Label.POSITIVE, Label.NEGATIVE, Label.SPACE_NEGATIVE, Label.IGNORE)}
print("anchor labels over %d anchors: %s"
      % (labels.size, {k.name.lower(): v for k, v in counts.items()}))

batch = sample_minibatch(assignment, batch_size=32, seed=1)
drawn = labels[batch]
print("minibatch of %d: %d positive, %d space-negative, %d plain negative"
      % (len(batch), (drawn == Label.POSITIVE).sum(), (drawn == Label.SPACE_NEGATIVE).sum(),
         (drawn == Label.NEGATIVE).sum()))

# positives carry (dy, dh) targets toward their slice; others carry NaN
targets = assignment.targets[batch]
pos_rows = targets[~np.isnan(targets[:, 0])]
print("regression targets on the positives:\n%s" % np.round(pos_rows, 3))
