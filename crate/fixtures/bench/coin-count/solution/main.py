import numpy as np
from PIL import Image
from scipy import ndimage

a = np.asarray(Image.open("coins.png").convert("L")).astype(float)
hist = np.bincount(a.astype(int).ravel(), minlength=256)
best, t = -1.0, 0
for i in range(1, 256):
    w0, w1 = hist[:i].sum(), hist[i:].sum()
    if w0 == 0 or w1 == 0:
        continue
    m0 = (hist[:i] * np.arange(i)).sum() / w0
    m1 = (hist[i:] * np.arange(i, 256)).sum() / w1
    between = w0 * w1 * (m0 - m1) ** 2
    if between > best:
        best, t = between, i
labels, n = ndimage.label(a >= t)
sizes = ndimage.sum(np.ones_like(a), labels, range(1, n + 1))
with open("coins.txt", "w") as f:
    f.write(f"{int((sizes >= 20).sum())}\n")
