import numpy as np
from PIL import Image
from scipy import ndimage

a = np.asarray(Image.open("blobs.png").convert("L"))
mask = a > 128
Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save("mask.png")
_, n = ndimage.label(mask)
with open("count.txt", "w") as f:
    f.write(f"{n}\n")
