"""Standalone FTNS / FADP reader. Prints a JSON summary of the file."""
import json, struct, sys

def ftns(buf, pos):
    assert buf[pos:pos + 4] == b"FTNS", "bad magic"
    version, rank = struct.unpack_from("<II", buf, pos + 4)
    assert version == 1, version
    dims = list(struct.unpack_from(f"<{rank}I", buf, pos + 12))
    pos += 12 + 4 * rank
    count = 1
    for d in dims:
        count *= d
    values = struct.unpack_from(f"<{count}f", buf, pos)
    return {"dims": dims, "sum": sum(values), "first": values[:4]}, pos + 4 * count

def fadp(buf):
    assert buf[:4] == b"FADP", "bad magic"
    version, hlen = struct.unpack_from("<II", buf, 4)
    assert version == 1, version
    header = json.loads(buf[12:12 + hlen].decode())
    pos, tensors = 12 + hlen, []
    for entry in header["tensors"]:
        (nlen,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4:pos + 4 + nlen].decode()
        t, pos = ftns(buf, pos + 4 + nlen)
        assert name == entry["name"] and t["dims"] == entry["dims"]
        tensors.append(dict(t, name=name))
    assert pos == len(buf), "trailing bytes"
    return {"config": header["config"], "n_tokens": header["n_tokens"], "tensors": tensors}

buf = open(sys.argv[1], "rb").read()
if buf[:4] == b"FADP":
    out = fadp(buf)
else:
    out, end = ftns(buf, 0)
    assert end == len(buf), "trailing bytes"
print(json.dumps(out))
