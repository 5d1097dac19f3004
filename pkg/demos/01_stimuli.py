"""Rasterize the five stimulus shapes and print them as ASCII art."""
from eegshape.eeg import CLASSES
from eegshape.stimuli import canonical_shapes

shapes = canonical_shapes()
print("canonical stimuli: [-1, 1], 40x56, white shape on black\n")
for name, img in zip(CLASSES, shapes):
    print(name, f"(filled fraction {(img > 0).mean():.3f})")
    for row in img[::4]:
        print("  " + "".join("#" if v > 0 else "." for v in row[::2]))
    print()
