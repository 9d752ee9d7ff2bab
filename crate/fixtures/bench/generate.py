"""Regenerates the benchmark fixtures next to this file: inputs, sample solutions, expected outputs and scripted sessions."""
import os, shutil, subprocess, sys, tempfile, textwrap
import numpy as np
from PIL import Image

ROOT = os.path.dirname(os.path.abspath(__file__))
rng = np.random.default_rng(7)


def d(s):
    return textwrap.dedent(s).strip("\n")


def save_gray(path, a):
    Image.fromarray(a.astype(np.uint8), "L").save(path)


def save_rgb(path, a):
    Image.fromarray(a.astype(np.uint8), "RGB").save(path)


# ---------- inputs ----------

def gradient():
    y, x = np.mgrid[0:48, 0:64]
    a = (x * 4).astype(np.int32)
    a[12:30, 20:40] = 30
    return np.clip(a, 0, 255)


def stripes():
    a = np.zeros((30, 40, 3), np.int32)
    for i in range(40):
        a[:, i] = ((i * 6) % 256, (255 - i * 5) % 256, (i * 37) % 256)
    a[5:10, 2:8] = (250, 10, 10)
    return a


def blobs():
    a = rng.integers(0, 60, (60, 80))
    yy, xx = np.mgrid[0:60, 0:80]
    for cy, cx, r in [(10, 10, 5), (15, 50, 7), (40, 20, 6), (45, 60, 8), (30, 38, 4)]:
        a[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 220
    return a


def shapes():
    a = np.full((48, 48), 40)
    a[8:24, 8:30] = 200
    yy, xx = np.mgrid[0:48, 0:48]
    a[(yy - 33) ** 2 + (xx - 32) ** 2 <= 81] = 140
    return a


def coins():
    yy, xx = np.mgrid[0:64, 0:96]
    a = 50 + 20 * np.sin(xx / 5.0) + rng.integers(0, 15, (64, 96))
    for cy, cx, r in [(12, 12, 7), (14, 40, 9), (12, 75, 6), (40, 15, 8), (45, 45, 6), (42, 78, 9), (28, 60, 5)]:
        a[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 190 + rng.integers(0, 40)
    return a


def dim():
    y, x = np.mgrid[0:40, 0:60]
    a = 90 + (x // 6) * 3 + (y // 8) * 2
    a[10:20, 15:35] = 70
    a[25:35, 40:55] = 125
    return a


# ---------- shared code snippets ----------

LOAD_GRAY = d('''
    import numpy as np
    from PIL import Image


    def load_gray(image_path: str) -> np.ndarray:
        return np.asarray(Image.open(image_path).convert("L"), dtype=np.uint8).copy()
''')

LOAD_GRAY_TEST = d('''
    import numpy as np
    from PIL import Image
    from load_gray import load_gray

    Image.fromarray(np.array([[0, 128], [255, 7]], np.uint8), "L").save("tiny.png")
    img = load_gray("tiny.png")
    assert img.dtype == np.uint8 and img.shape == (2, 2)
    assert img.tolist() == [[0, 128], [255, 7]], img.tolist()
    print("load_gray ok")
''')

LOAD_GRAY_FN = ("load_gray", "Read an image file as an 8-bit grayscale array.",
                "image_path: str", "image: numpy.ndarray (H x W, uint8)",
                "def load_gray(image_path: str) -> np.ndarray:",
                "Opens the file with Pillow, converts it to mode L and returns an H x W uint8 array.",
                LOAD_GRAY, LOAD_GRAY_TEST)

COMPONENTS = d('''
    from collections import deque

    import numpy as np


    def count_components(mask: np.ndarray) -> int:
        seen = np.zeros(mask.shape, bool)
        h, w = mask.shape
        count = 0
        for y in range(h):
            for x in range(w):
                if mask[y, x] and not seen[y, x]:
                    count += 1
                    seen[y, x] = True
                    queue = deque([(y, x)])
                    while queue:
                        cy, cx = queue.popleft()
                        for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                queue.append((ny, nx))
        return count
''')

COMPONENTS_TEST = d('''
    import numpy as np
    from count_components import count_components

    m = np.zeros((5, 6), bool)
    m[0, 0] = True
    m[2:4, 2:4] = True
    m[4, 5] = True
    m[1, 1] = True
    assert count_components(m) == 4, count_components(m)
    assert count_components(np.zeros((3, 3), bool)) == 0
    print("count_components ok")
''')

WRITE_COUNT = lambda name: d(f'''
    def write_count(count: int) -> str:
        with open("{name}", "w") as f:
            f.write(f"{{count}}\\n")
        return "{name}"
''')

WRITE_COUNT_TEST = lambda name: d(f'''
    from write_count import write_count

    assert write_count(12) == "{name}"
    assert open("{name}").read() == "12\\n"
    print("write_count ok")
''')

# ---------- fixtures ----------
# module: (name, description, [function tuples], module test)
# function tuple: (name, description, inputs, outputs, signature, docstring, code, test)

FIXTURES = []

FIXTURES.append(dict(
    id="invert", difficulty="simple",
    description="Read the grayscale image gradient.png, invert every pixel (255 minus the value) and save the result as inverted.png in the working directory.",
    inputs={"gradient.png": ("gray", gradient())},
    solution=d('''
        import numpy as np
        from PIL import Image

        a = np.asarray(Image.open("gradient.png").convert("L"), dtype=np.uint8)
        Image.fromarray((255 - a).astype(np.uint8), "L").save("inverted.png")
    '''),
    modules=[("Inverter", "Reads image_path, inverts the grayscale image and writes inverted.png, returning out_path.", [
        LOAD_GRAY_FN,
        ("invert_and_save", "Invert the image and save it as inverted.png.",
         "image: numpy.ndarray (H x W, uint8)", "out_path: str",
         "def invert_and_save(image: np.ndarray) -> str:",
         "Writes 255 - image to inverted.png as an 8-bit grayscale PNG and returns the file name.",
         d('''
            import numpy as np
            from PIL import Image


            def invert_and_save(image: np.ndarray) -> str:
                Image.fromarray((255 - image).astype(np.uint8), "L").save("inverted.png")
                return "inverted.png"
         '''),
         d('''
            import numpy as np
            from PIL import Image
            from invert_and_save import invert_and_save

            out = invert_and_save(np.array([[0, 200]], np.uint8))
            assert out == "inverted.png"
            assert np.asarray(Image.open(out)).tolist() == [[255, 55]]
            print("invert_and_save ok")
         ''')),
    ], d('''
        import numpy as np
        from PIL import Image
        from inverter import run_inverter

        Image.fromarray(np.array([[10, 20], [30, 250]], np.uint8), "L").save("in.png")
        assert run_inverter("in.png") == "inverted.png"
        assert np.asarray(Image.open("inverted.png")).tolist() == [[245, 235], [225, 5]]
        print("inverter ok")
    '''))],
))

FIXTURES.append(dict(
    id="mirror", difficulty="simple",
    description="Read the colour image stripes.png, mirror it left to right and save the result as flipped.png in the working directory.",
    inputs={"stripes.png": ("rgb", stripes())},
    solution=d('''
        from PIL import Image, ImageOps

        ImageOps.mirror(Image.open("stripes.png").convert("RGB")).save("flipped.png")
    '''),
    modules=[("Mirror", "Reads image_path, mirrors the colour image horizontally and writes flipped.png, returning out_path.", [
        ("load_rgb", "Read an image file as an RGB array.", "image_path: str", "image: numpy.ndarray (H x W x 3, uint8)",
         "def load_rgb(image_path: str) -> np.ndarray:",
         "Opens the file with Pillow, converts it to RGB and returns an H x W x 3 uint8 array.",
         d('''
            import numpy as np
            from PIL import Image


            def load_rgb(image_path: str) -> np.ndarray:
                return np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8).copy()
         '''),
         d('''
            import numpy as np
            from PIL import Image
            from load_rgb import load_rgb

            Image.fromarray(np.zeros((2, 3, 3), np.uint8), "RGB").save("c.png")
            img = load_rgb("c.png")
            assert img.shape == (2, 3, 3) and img.dtype == np.uint8
            print("load_rgb ok")
         ''')),
        ("save_mirrored", "Mirror the image left to right and save it as flipped.png.",
         "image: numpy.ndarray (H x W x 3, uint8)", "out_path: str",
         "def save_mirrored(image: np.ndarray) -> str:",
         "Reverses the column order, writes the result to flipped.png as RGB and returns the file name.",
         d('''
            import numpy as np
            from PIL import Image


            def save_mirrored(image: np.ndarray) -> str:
                Image.fromarray(np.ascontiguousarray(image[:, ::-1]), "RGB").save("flipped.png")
                return "flipped.png"
         '''),
         d('''
            import numpy as np
            from PIL import Image
            from save_mirrored import save_mirrored

            img = np.zeros((1, 2, 3), np.uint8)
            img[0, 0] = (255, 0, 0)
            assert save_mirrored(img) == "flipped.png"
            out = np.asarray(Image.open("flipped.png"))
            assert out[0, 1].tolist() == [255, 0, 0] and out[0, 0].tolist() == [0, 0, 0]
            print("save_mirrored ok")
         ''')),
    ], d('''
        import numpy as np
        from PIL import Image
        from mirror import run_mirror

        img = np.zeros((2, 3, 3), np.uint8)
        img[:, 0] = 200
        Image.fromarray(img, "RGB").save("in.png")
        assert run_mirror("in.png") == "flipped.png"
        out = np.asarray(Image.open("flipped.png"))
        assert (out[:, 2] == 200).all() and (out[:, 0] == 0).all()
        print("mirror ok")
    '''))],
))

FIXTURES.append(dict(
    id="blob-count", difficulty="medium",
    description="Threshold the grayscale image blobs.png at 128 (pixels above 128 are foreground), save the foreground mask as mask.png (255 foreground, 0 background) and write the number of 4-connected foreground regions to count.txt.",
    inputs={"blobs.png": ("gray", blobs())},
    solution=d('''
        import numpy as np
        from PIL import Image
        from scipy import ndimage

        a = np.asarray(Image.open("blobs.png").convert("L"))
        mask = a > 128
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save("mask.png")
        _, n = ndimage.label(mask)
        with open("count.txt", "w") as f:
            f.write(f"{n}\\n")
    '''),
    modules=[
        ("Segmentation", "Reads image_path and produces mask, the boolean foreground above 128, also saved as mask.png.", [
            LOAD_GRAY_FN,
            ("threshold_mask", "Foreground mask above 128, saved as mask.png.",
             "image: numpy.ndarray (H x W, uint8)", "mask: numpy.ndarray (H x W, bool)",
             "def threshold_mask(image: np.ndarray) -> np.ndarray:",
             "Returns image > 128 and writes it to mask.png as 255/0 grayscale.",
             d('''
                import numpy as np
                from PIL import Image


                def threshold_mask(image: np.ndarray) -> np.ndarray:
                    mask = image > 128
                    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save("mask.png")
                    return mask
             '''),
             d('''
                import numpy as np
                from PIL import Image
                from threshold_mask import threshold_mask

                m = threshold_mask(np.array([[128, 129], [0, 255]], np.uint8))
                assert m.tolist() == [[False, True], [False, True]]
                assert np.asarray(Image.open("mask.png")).tolist() == [[0, 255], [0, 255]]
                print("threshold_mask ok")
             ''')),
        ], d('''
            import numpy as np
            from PIL import Image
            from segmentation import run_segmentation

            Image.fromarray(np.array([[0, 200], [200, 0]], np.uint8), "L").save("in.png")
            mask = run_segmentation("in.png")
            assert mask.tolist() == [[False, True], [True, False]]
            print("segmentation ok")
        ''')),
        ("Counting", "Takes mask, counts its 4-connected foreground regions as count and writes count.txt, returning out_path.", [
            ("count_components", "Count 4-connected foreground regions.",
             "mask: numpy.ndarray (H x W, bool)", "count: int",
             "def count_components(mask: np.ndarray) -> int:",
             "Breadth-first flood fill over 4-neighbours; returns the number of regions.",
             COMPONENTS, COMPONENTS_TEST),
            ("write_count", "Write the count to count.txt.", "count: int", "out_path: str",
             "def write_count(count: int) -> str:",
             "Writes the decimal count and a newline to count.txt and returns the file name.",
             WRITE_COUNT("count.txt"), WRITE_COUNT_TEST("count.txt")),
        ], d('''
            import numpy as np
            from counting import run_counting

            m = np.zeros((4, 4), bool)
            m[0, 0] = m[3, 3] = True
            assert run_counting(m) == "count.txt"
            assert open("count.txt").read() == "2\\n"
            print("counting ok")
        ''')),
    ],
))

FIXTURES.append(dict(
    id="edge-magnitude", difficulty="medium",
    description="Compute the Sobel gradient magnitude of the grayscale image shapes.png (3x3 Sobel kernels, borders replicated), clip it to 0-255 and save it as edges.png.",
    inputs={"shapes.png": ("gray", shapes())},
    solution=d('''
        import numpy as np
        from PIL import Image

        a = np.asarray(Image.open("shapes.png").convert("L")).astype(np.int64)
        p = np.pad(a, 1, mode="edge")
        gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
        gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
        mag = np.clip(np.rint(np.sqrt(gx * gx + gy * gy)), 0, 255).astype(np.uint8)
        Image.fromarray(mag, "L").save("edges.png")
    '''),
    modules=[
        ("Gradients", "Reads image_path and produces gx and gy, the horizontal and vertical Sobel responses.", [
            LOAD_GRAY_FN,
            ("sobel_gradients", "Horizontal and vertical 3x3 Sobel responses with replicated borders.",
             "image: numpy.ndarray (H x W, uint8)", "gx: numpy.ndarray (H x W, float32); gy: numpy.ndarray (H x W, float32)",
             "def sobel_gradients(image: np.ndarray) -> tuple:",
             "Pads by edge replication and returns (gx, gy) as float32 arrays of the input shape.",
             d('''
                import numpy as np


                def sobel_gradients(image: np.ndarray) -> tuple:
                    p = np.pad(image.astype(np.float32), 1, mode="edge")
                    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
                    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
                    return gx, gy
             '''),
             d('''
                import numpy as np
                from sobel_gradients import sobel_gradients

                img = np.zeros((3, 3), np.uint8)
                img[:, 2] = 10
                gx, gy = sobel_gradients(img)
                assert gx.shape == (3, 3) and gx[1, 1] == 40, gx
                assert np.all(gy == 0)
                print("sobel_gradients ok")
             ''')),
        ], d('''
            import numpy as np
            from PIL import Image
            from gradients import run_gradients

            Image.fromarray(np.full((4, 4), 9, np.uint8), "L").save("flat.png")
            gx, gy = run_gradients("flat.png")
            assert np.all(gx == 0) and np.all(gy == 0)
            print("gradients ok")
        ''')),
        ("Magnitude", "Takes gx and gy, produces mag, the clipped gradient magnitude, and writes edges.png, returning out_path.", [
            ("magnitude", "Gradient magnitude clipped to 0-255.",
             "gx: numpy.ndarray (float32); gy: numpy.ndarray (float32)", "mag: numpy.ndarray (H x W, uint8)",
             "def magnitude(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:",
             "Returns hypot(gx, gy) clipped to 0-255 as uint8.",
             d('''
                import numpy as np


                def magnitude(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
                    return np.clip(np.hypot(gx, gy), 0, 255).astype(np.uint8)
             '''),
             d('''
                import numpy as np
                from magnitude import magnitude

                m = magnitude(np.array([[3.0, 400.0]], np.float32), np.array([[4.0, 0.0]], np.float32))
                assert m.dtype == np.uint8 and m.tolist() == [[5, 255]]
                print("magnitude ok")
             ''')),
            ("save_edges", "Save the magnitude as edges.png.", "mag: numpy.ndarray (H x W, uint8)", "out_path: str",
             "def save_edges(mag: np.ndarray) -> str:",
             "Writes mag to edges.png as 8-bit grayscale and returns the file name.",
             d('''
                import numpy as np
                from PIL import Image


                def save_edges(mag: np.ndarray) -> str:
                    Image.fromarray(mag, "L").save("edges.png")
                    return "edges.png"
             '''),
             d('''
                import numpy as np
                from PIL import Image
                from save_edges import save_edges

                assert save_edges(np.array([[1, 2]], np.uint8)) == "edges.png"
                assert np.asarray(Image.open("edges.png")).tolist() == [[1, 2]]
                print("save_edges ok")
             ''')),
        ], d('''
            import numpy as np
            from PIL import Image
            from magnitude import run_magnitude

            assert run_magnitude(np.zeros((2, 2), np.float32), np.full((2, 2), 6, np.float32)) == "edges.png"
            assert np.asarray(Image.open("edges.png")).tolist() == [[6, 6], [6, 6]]
            print("magnitude module ok")
        ''')),
    ],
))

FIXTURES.append(dict(
    id="coin-count", difficulty="hard",
    description="Count the coins in the photo coins.png and write the number to coins.txt.",
    inputs={"coins.png": ("gray", coins())},
    compare_script=d('''
        def read(path):
            with open(path) as f:
                return int(f.read().strip())


        got, want = read("generated/coins.txt"), read("expected/coins.txt")
        print(f"generated {got}, expected {want}")
        raise SystemExit(0 if got == want else 1)
    '''),
    solution=d('''
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
            f.write(f"{int((sizes >= 20).sum())}\\n")
    '''),
    modules=[
        ("CoinSegmentation", "Reads image_path and produces mask, the bright coin pixels.", [
            LOAD_GRAY_FN,
            ("coin_mask", "Bright pixels belonging to coins.", "image: numpy.ndarray (H x W, uint8)",
             "mask: numpy.ndarray (H x W, bool)",
             "def coin_mask(image: np.ndarray) -> np.ndarray:",
             "Returns image > 140; coins are much brighter than the textured background.",
             d('''
                import numpy as np


                def coin_mask(image: np.ndarray) -> np.ndarray:
                    return image > 140
             '''),
             d('''
                import numpy as np
                from coin_mask import coin_mask

                assert coin_mask(np.array([[90, 200]], np.uint8)).tolist() == [[False, True]]
                print("coin_mask ok")
             ''')),
        ], d('''
            import numpy as np
            from PIL import Image
            from coin_segmentation import run_coin_segmentation

            Image.fromarray(np.array([[60, 220]], np.uint8), "L").save("in.png")
            assert run_coin_segmentation("in.png").tolist() == [[False, True]]
            print("coin_segmentation ok")
        ''')),
        ("CoinCounting", "Takes mask, counts its connected regions as count and writes coins.txt, returning out_path.", [
            ("count_components", "Count 4-connected foreground regions.",
             "mask: numpy.ndarray (H x W, bool)", "count: int",
             "def count_components(mask: np.ndarray) -> int:",
             "Breadth-first flood fill over 4-neighbours; returns the number of regions.",
             COMPONENTS, COMPONENTS_TEST),
            ("write_count", "Write the count to coins.txt.", "count: int", "out_path: str",
             "def write_count(count: int) -> str:",
             "Writes the decimal count and a newline to coins.txt and returns the file name.",
             WRITE_COUNT("coins.txt"), WRITE_COUNT_TEST("coins.txt")),
        ], d('''
            import numpy as np
            from coin_counting import run_coin_counting

            m = np.zeros((3, 3), bool)
            m[1, 1] = True
            assert run_coin_counting(m) == "coins.txt"
            assert open("coins.txt").read() == "1\\n"
            print("coin_counting ok")
        ''')),
    ],
))

FIXTURES.append(dict(
    id="contrast", difficulty="hard",
    description="The photo dim.png is too dull. Improve its contrast and save the result as enhanced.png.",
    inputs={"dim.png": ("gray", dim())},
    solution=d('''
        from PIL import Image, ImageOps

        ImageOps.equalize(Image.open("dim.png").convert("L")).save("enhanced.png")
    '''),
    modules=[("ContrastEnhancement", "Reads image_path, stretches its intensity range and writes enhanced.png, returning out_path.", [
        LOAD_GRAY_FN,
        ("stretch_and_save", "Linearly stretch intensities to 0-255 and save as enhanced.png.",
         "image: numpy.ndarray (H x W, uint8)", "out_path: str",
         "def stretch_and_save(image: np.ndarray) -> str:",
         "Maps the minimum to 0 and the maximum to 255 linearly, writes enhanced.png and returns the file name.",
         d('''
            import numpy as np
            from PIL import Image


            def stretch_and_save(image: np.ndarray) -> str:
                lo, hi = int(image.min()), int(image.max())
                scale = 255.0 / max(hi - lo, 1)
                out = np.rint((image.astype(np.float64) - lo) * scale).astype(np.uint8)
                Image.fromarray(out, "L").save("enhanced.png")
                return "enhanced.png"
         '''),
         d('''
            import numpy as np
            from PIL import Image
            from stretch_and_save import stretch_and_save

            assert stretch_and_save(np.array([[100, 140, 200]], np.uint8)) == "enhanced.png"
            assert np.asarray(Image.open("enhanced.png")).tolist() == [[0, 102, 255]]
            print("stretch_and_save ok")
         ''')),
    ], d('''
        import numpy as np
        from PIL import Image
        from contrast_enhancement import run_contrast_enhancement

        Image.fromarray(np.array([[50, 60]], np.uint8), "L").save("in.png")
        assert run_contrast_enhancement("in.png") == "enhanced.png"
        assert np.asarray(Image.open("enhanced.png")).tolist() == [[0, 255]]
        print("contrast_enhancement ok")
    '''))],
))


def fence(code):
    return "```python\n" + code + "\n```\n"


def snake(name):
    out = ""
    for i, c in enumerate(name):
        if c.isupper() and i > 0:
            out += "_"
        out += c.lower()
    return out


def script(fx):
    s = [f"# Scripted session for the {fx['id']} fixture.\n"]
    plan = ["<<<BEGIN team_leader>>>", "ENVIRONMENT: python-imaging"]
    for name, desc, _, _ in fx["modules"]:
        plan += ["---", f"MODULE_NAME: {name}", f"MODULE_DESCRIPTION: {desc}"]
    plan.append("<<<END team_leader>>>")
    s.append("=== team_leader plan /\n" + "\n".join(plan) + "\n")
    for mi, (name, desc, funcs, mtest) in enumerate(fx["modules"]):
        blocks = []
        for f in funcs:
            blocks.append(f"FUNCTION_NAME: {f[0]}\nDESCRIPTION: {f[1]}\nINPUTS: {f[2]}\nOUTPUTS: {f[3]}")
        s.append(f"=== module_leader split_functions /{mi}\n<<<BEGIN module_leader>>>\n" + "\n---\n".join(blocks) + "\n<<<END module_leader>>>\n")
        blocks = [f"FUNCTION_NAME: {f[0]}\nSIGNATURE: {f[4]}\nDOCSTRING: {f[5]}" for f in funcs]
        s.append(f"=== function_coordinator refine /{mi}\n<<<BEGIN function_coordinator>>>\n" + "\n---\n".join(blocks) + "\n<<<END function_coordinator>>>\n")
        for fi, f in enumerate(funcs):
            a = f"/{mi}/{fi}"
            s.append(f"=== coder draft_function {a}\n" + fence(f[6]))
            s.append(f"=== tester draft_tests {a}\n" + fence(f[7]))
            s.append(f"=== coder review_tests {a}\n<<<BEGIN coder_review>>>\nVERDICT: no_changes\n<<<END coder_review>>>\n")
        s.append(f"=== module_leader module_tests /{mi}\n" + fence(mtest))
    return "\n".join(s)


def main():
    for fx in FIXTURES:
        root = os.path.join(ROOT, fx["id"])
        if os.path.exists(root):
            shutil.rmtree(root)
        os.makedirs(os.path.join(root, "inputs"))
        os.makedirs(os.path.join(root, "solution"))
        os.makedirs(os.path.join(root, "scripted"))
        env = "python-imaging-science" if "scipy" in fx["solution"] else "python-imaging"
        header = f"id: {fx['id']}\ndifficulty: {fx['difficulty']}\nenvironment: {env}\n"
        with open(os.path.join(root, "manifest.txt"), "w") as f:
            f.write(header + "\n" + textwrap.fill(fx["description"], 76) + "\n")
        for name, (kind, arr) in fx["inputs"].items():
            (save_gray if kind == "gray" else save_rgb)(os.path.join(root, "inputs", name), arr)
        with open(os.path.join(root, "solution", "main.py"), "w") as f:
            f.write(fx["solution"] + "\n")
        with open(os.path.join(root, "scripted", "session.script"), "w") as f:
            f.write(script(fx))
        with tempfile.TemporaryDirectory() as tmp:
            for name in fx["inputs"]:
                shutil.copy(os.path.join(root, "inputs", name), tmp)
            before = set(os.listdir(tmp))
            subprocess.run([sys.executable, os.path.join(root, "solution", "main.py")], cwd=tmp, check=True)
            produced = sorted(set(os.listdir(tmp)) - before)
            if "compare_script" in fx:
                os.makedirs(os.path.join(root, "test"))
                with open(os.path.join(root, "test", "compare.py"), "w") as f:
                    f.write(fx["compare_script"] + "\n")
                print(fx["id"], "solution output:", {p: open(os.path.join(tmp, p)).read().strip() for p in produced})
            else:
                os.makedirs(os.path.join(root, "expected"))
                for p in produced:
                    shutil.copy(os.path.join(tmp, p), os.path.join(root, "expected", p))
                print(fx["id"], "expected:", produced)


main()
