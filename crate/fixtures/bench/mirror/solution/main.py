from PIL import Image, ImageOps

ImageOps.mirror(Image.open("stripes.png").convert("RGB")).save("flipped.png")
