"""Independent prefix-tree root computation (hashlib only).

Prints the root hash for records user-0..user-{n-1} with keys pk0..pk{n-1}.
Usage: tree_root.py N SEED EPOCH
"""
import hashlib
import struct
import sys


def H(tag, data):
    return hashlib.sha256(bytes([tag]) + data).digest()


def u64(v):
    return struct.pack(">Q", v)


def var(b):
    return struct.pack(">I", len(b)) + b


def bit(d, i):
    return (d[i // 8] >> (7 - i % 8)) & 1


def prefix_enc(bits):
    packed = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            packed[i // 8] |= 0x80 >> (i % 8)
    return u64(len(bits)) + var(bytes(packed))


def ctx(tag, seed, bits, epoch):
    return H(tag, u64(seed) + prefix_enc(bits) + u64(epoch))


def main():
    n, seed, epoch = (int(x) for x in sys.argv[1:4])
    recs = []
    for i in range(n):
        cid = f"user-{i}".encode()
        recs.append({"id": cid, "pk": f"pk{i}".encode(), "index": H(0x02, var(cid))})
    for r in recs:
        ell = 0
        for o in recs:
            if o is r:
                continue
            lcp = 0
            while lcp < 256 and bit(r["index"], lcp) == bit(o["index"], lcp):
                lcp += 1
            ell = max(ell, lcp + 1)
        draw = H(0x0a, u64(seed) + r["index"] + u64(epoch))
        extra = 1 + int.from_bytes(draw[:8], "big") % max(ell, 1)
        r["depth"] = min(ell + extra, 256)

    def node(bits, members):
        d = len(bits)
        if not members:
            return ctx(0x06, seed, bits, epoch)
        if len(members) == 1 and members[0]["depth"] == d:
            r = members[0]
            binding = H(0x03, var(r["id"]) + var(r["pk"]))
            return H(0x04, ctx(0x00, seed, bits, epoch) + r["index"] + u64(d) + binding)
        left = node(bits + [0], [m for m in members if bit(m["index"], d) == 0])
        right = node(bits + [1], [m for m in members if bit(m["index"], d) == 1])
        return H(0x05, ctx(0x01, seed, bits, epoch) + left + right + prefix_enc(bits) + u64(d))

    print(node([], recs).hex())


if __name__ == "__main__":
    main()
