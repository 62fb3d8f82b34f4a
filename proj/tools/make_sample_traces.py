#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the sample pen traces under data/traces/.

Each expression is drawn with a small polyline font, then jittered and
slanted a little so the strokes look hand-drawn. Output is deterministic.
"""

import json
import math
import pathlib
import random

# Glyphs in a 0.6 x 1.0 cell, y down. Each glyph is a list of strokes.
GLYPHS = {
    "0": [[(0.3, 0), (0.05, 0.2), (0.05, 0.8), (0.3, 1), (0.55, 0.8), (0.55, 0.2), (0.3, 0)]],
    "1": [[(0.15, 0.2), (0.35, 0), (0.35, 1)]],
    "2": [[(0.05, 0.2), (0.3, 0), (0.55, 0.2), (0.55, 0.4), (0.05, 1), (0.55, 1)]],
    "3": [[(0.05, 0.1), (0.3, 0), (0.55, 0.2), (0.3, 0.5), (0.55, 0.8), (0.3, 1), (0.05, 0.9)]],
    "4": [[(0.45, 1), (0.45, 0), (0.05, 0.65), (0.6, 0.65)]],
    "5": [[(0.55, 0), (0.1, 0), (0.05, 0.45), (0.4, 0.45), (0.55, 0.7), (0.4, 1), (0.05, 0.9)]],
    "6": [[(0.5, 0), (0.1, 0.4), (0.05, 0.8), (0.3, 1), (0.55, 0.8), (0.45, 0.55), (0.1, 0.6)]],
    "7": [[(0.05, 0), (0.55, 0), (0.2, 1)]],
    "8": [[(0.3, 0.5), (0.05, 0.25), (0.3, 0), (0.55, 0.25), (0.3, 0.5), (0.05, 0.75), (0.3, 1), (0.55, 0.75), (0.3, 0.5)]],
    "9": [[(0.55, 0.4), (0.3, 0.5), (0.05, 0.25), (0.3, 0), (0.55, 0.2), (0.5, 1)]],
    "x": [[(0.05, 0.4), (0.55, 1)], [(0.55, 0.4), (0.05, 1)]],
    "y": [[(0.05, 0.4), (0.3, 0.75)], [(0.55, 0.4), (0.15, 1.25)]],
    "a": [[(0.5, 0.5), (0.25, 0.4), (0.05, 0.7), (0.25, 1), (0.5, 0.8)], [(0.5, 0.4), (0.5, 1)]],
    "b": [[(0.1, 0), (0.1, 1), (0.4, 0.95), (0.5, 0.7), (0.35, 0.45), (0.1, 0.55)]],
    "+": [[(0.05, 0.55), (0.55, 0.55)], [(0.3, 0.3), (0.3, 0.8)]],
    "-": [[(0.05, 0.55), (0.55, 0.55)]],
    "=": [[(0.05, 0.45), (0.55, 0.45)], [(0.05, 0.7), (0.55, 0.7)]],
    "(": [[(0.45, -0.05), (0.2, 0.3), (0.2, 0.75), (0.45, 1.1)]],
    ")": [[(0.15, -0.05), (0.4, 0.3), (0.4, 0.75), (0.15, 1.1)]],
}

EXPRESSIONS = [
    "2x+5=13",
    "2x=8",
    "x=4",
    "3(x-2)=9",
    "x-2=3",
    "a+b=10",
    "y=2x+1",
    "7-4=3",
    "x=5",
    "12=3x",
    "(a+b)=(b+a)",
    "9-x=6",
]


def trace_for(text, rng):
    slant = rng.uniform(-0.15, 0.15)
    strokes = []
    cursor = 0.0
    for ch in text:
        for stroke in GLYPHS[ch]:
            pts = []
            for x, y in stroke:
                jx = rng.gauss(0, 0.02)
                jy = rng.gauss(0, 0.02)
                px = cursor + x + slant * (1 - y) + jx
                pts.append([round(px * 100, 2), round((y + jy) * 100, 2)])
            strokes.append(pts)
        cursor += 0.7 + rng.uniform(-0.05, 0.05)
    return strokes


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "traces"
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240611)
    for i, text in enumerate(EXPRESSIONS):
        doc = {"id": f"expr-{i:03d}", "text": text, "strokes": trace_for(text, rng)}
        (out / f"expr-{i:03d}.json").write_text(json.dumps(doc) + "\n")


if __name__ == "__main__":
    main()
