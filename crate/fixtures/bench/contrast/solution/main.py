from PIL import Image, ImageOps

ImageOps.equalize(Image.open("dim.png").convert("L")).save("enhanced.png")
