"""Write an FTNS tensor whose element i holds (i % 97) / 97."""
import struct, sys

path, dims = sys.argv[1], [int(d) for d in sys.argv[2:]]
count = 1
for d in dims:
    count *= d
with open(path, "wb") as f:
    f.write(b"FTNS" + struct.pack("<II", 1, len(dims)) + struct.pack(f"<{len(dims)}I", *dims))
    f.write(struct.pack(f"<{count}f", *[(i % 97) / 97 for i in range(count)]))
