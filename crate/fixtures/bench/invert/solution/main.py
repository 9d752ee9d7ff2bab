import numpy as np
from PIL import Image

a = np.asarray(Image.open("gradient.png").convert("L"), dtype=np.uint8)
Image.fromarray((255 - a).astype(np.uint8), "L").save("inverted.png")
