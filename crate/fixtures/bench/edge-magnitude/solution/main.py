import numpy as np
from PIL import Image

a = np.asarray(Image.open("shapes.png").convert("L")).astype(np.int64)
p = np.pad(a, 1, mode="edge")
gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
mag = np.clip(np.rint(np.sqrt(gx * gx + gy * gy)), 0, 255).astype(np.uint8)
Image.fromarray(mag, "L").save("edges.png")
