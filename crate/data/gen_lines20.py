"""Regenerates data/lines20: 20 synthetic inspection frames with YOLO labels.

Box sizes are drawn on a nominal 1920x1080 frame and stored normalized; the
PNGs are rendered at quarter resolution. Run from the repository root.
"""
import os
import random

from PIL import Image, ImageDraw

OUT = "data/lines20"
CLASSES = ["screw", "pole", "insulator", "tower", "vehicle"]
NOMINAL = (1920, 1080)
RENDER = (480, 270)
COLORS = [(200, 200, 40), (120, 80, 40), (60, 160, 220), (150, 150, 150), (220, 60, 60)]

# class id, nominal (w, h), scale range, how many per frame. Small parts
# come in tight families of distinct aspect ratio; towers and vehicles keep
# their aspect but vary widely in size.
FAMILIES = [
    (0, (15, 15), (1.0, 1.0), (3, 4)),
    (2, (72, 24), (1.0, 1.0), (2, 2)),
    (2, (24, 72), (1.0, 1.0), (2, 2)),
    (2, (120, 14), (1.0, 1.0), (1, 1)),
    (1, (10, 150), (1.0, 1.0), (1, 1)),
    (1, (18, 300), (1.0, 1.0), (1, 1)),
    (3, (100, 300), (1.0, 3.4), (1, 2)),
    (4, (160, 90), (1.0, 3.0), (1, 1)),
]


def main():
    rng = random.Random(41)
    os.makedirs(OUT, exist_ok=True)
    manifest = []
    for i in range(20):
        name = f"frame_{i:03d}"
        img = Image.new("RGB", RENDER, (90, 130, 170))
        draw = ImageDraw.Draw(img)
        lines = []
        for cls, (w0, h0), (smin, smax), (lo, hi) in FAMILIES:
            for _ in range(rng.randint(lo, hi)):
                scale = rng.uniform(smin, smax)
                w = w0 * scale * rng.uniform(0.95, 1.05)
                h = h0 * scale * rng.uniform(0.95, 1.05)
                cx = rng.uniform(w / 2, NOMINAL[0] - w / 2)
                cy = rng.uniform(h / 2, NOMINAL[1] - h / 2)
                lines.append(
                    f"{cls} {cx / NOMINAL[0]:.6f} {cy / NOMINAL[1]:.6f} "
                    f"{w / NOMINAL[0]:.6f} {h / NOMINAL[1]:.6f}"
                )
                sx, sy = RENDER[0] / NOMINAL[0], RENDER[1] / NOMINAL[1]
                draw.rectangle(
                    [(cx - w / 2) * sx, (cy - h / 2) * sy, (cx + w / 2) * sx, (cy + h / 2) * sy],
                    fill=COLORS[cls],
                )
        img.save(os.path.join(OUT, name + ".png"), optimize=True)
        with open(os.path.join(OUT, name + ".txt"), "w") as f:
            f.write("\n".join(lines) + "\n")
        manifest.append(f"{name}.png {RENDER[0]} {RENDER[1]}")
    with open(os.path.join(OUT, "manifest.txt"), "w") as f:
        f.write("\n".join(manifest) + "\n")
    with open(os.path.join(OUT, "classes.txt"), "w") as f:
        f.write("\n".join(CLASSES) + "\n")


if __name__ == "__main__":
    main()
