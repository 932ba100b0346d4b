#!/usr/bin/env python3
"""Minimal stand-in for opj_compress / opj_decompress built on Pillow.

Accepts the subset of flags used by cscodec:

    opj_pillow.py compress   -i in.pgm -o out.j2k -r <ratio>
    opj_pillow.py decompress -i in.j2k -o out.pgm

Point the codec at it with
    CSCODEC_J2K_ENCODER="python3 tools/opj_pillow.py compress"
    CSCODEC_J2K_DECODER="python3 tools/opj_pillow.py decompress"
"""

import argparse
import sys

from PIL import Image


def main(argv):
    parser = argparse.ArgumentParser()
    parser.add_argument("mode", choices=["compress", "decompress"])
    parser.add_argument("-i", dest="input", required=True)
    parser.add_argument("-o", dest="output", required=True)
    parser.add_argument("-r", dest="ratio", type=float, default=None)
    args = parser.parse_args(argv)

    img = Image.open(args.input)
    if args.mode == "compress":
        opts = {"irreversible": True, "no_jp2": args.output.endswith(".j2k")}
        if args.ratio is not None and args.ratio > 1:
            opts["quality_mode"] = "rates"
            opts["quality_layers"] = [args.ratio]
        img.convert("L").save(args.output, format="JPEG2000", **opts)
    else:
        img.convert("L").save(args.output, format="PPM")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
