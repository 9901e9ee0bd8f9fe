"""Writes the golden cache fixtures with an encoder independent of the Rust code."""
import struct

def header(vocab, scheme, param, n):
    return b"SKDC" + struct.pack("<HIBIQ", 1, vocab, scheme, param, n)

def record(tok, payload):
    v = tok | (payload << 17)
    return bytes([v & 0xFF, (v >> 8) & 0xFF, (v >> 16) & 0xFF])

# scheme 3: numerators over N = 50, records by descending count, ties by id
counts = [[(7, 30), (2, 12), (99, 8)], [(1000, 50)], [(5, 25), (6, 25)]]
out = header(131072, 3, 50, len(counts))
for pos in counts:
    out += bytes([len(pos)]) + b"".join(record(t, c) for t, c in pos)
open("golden_rs_counts.skdc", "wb").write(out)

# scheme 2: anchor 31457 (0.48), payloads 127, 63, 64 on tokens 0, 3, 2
out = header(5, 2, 3, 1) + bytes([3]) + struct.pack("<H", 31457)
out += record(0, 127) + record(3, 63) + record(2, 64)
open("golden_topk_ratio.skdc", "wb").write(out)

# scheme 1: payloads 96, 32 on tokens 4, 1
out = header(8, 1, 2, 1) + bytes([2]) + record(4, 96) + record(1, 32)
open("golden_topk_linear.skdc", "wb").write(out)
