#!/usr/bin/env python3
"""Regenerates src/unicode_tables.inc from Python's unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main(path):
    punct = ranges(lambda cp: unicodedata.category(chr(cp)).startswith("P"))
    space = ranges(lambda cp: chr(cp).isspace())
    lower = []
    for cp in range(0x110000):
        ch = chr(cp)
        lo = ch.lower()
        if len(lo) == 1 and lo != ch:
            lower.append((cp, ord(lo)))
    with open(path, "w") as f:
        f.write("// Generated by scripts/gen_unicode_tables.py (Unicode %s). Do not edit.\n"
                % unicodedata.unidata_version)
        f.write("constexpr CodepointRange kPunctuation[] = {\n")
        for a, b in punct:
            f.write("    {0x%X, 0x%X},\n" % (a, b))
        f.write("};\n\nconstexpr CodepointRange kWhitespace[] = {\n")
        for a, b in space:
            f.write("    {0x%X, 0x%X},\n" % (a, b))
        f.write("};\n\nconstexpr CaseMapping kLowercase[] = {\n")
        for a, b in lower:
            f.write("    {0x%X, 0x%X},\n" % (a, b))
        f.write("};\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc")
