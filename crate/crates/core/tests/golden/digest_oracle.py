"""Independent FNV-1a-64 over the canonical SMECKPT1 bytes of {w: [1.0]} with empty meta."""
import struct

header = b'{"version":1,"tensors":{"w":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}},"meta":{}}'
buf = b"SMECKPT1" + struct.pack("<Q", len(header)) + header
buf += b"\0" * (-len(buf) % 8)
buf += struct.pack("<f", 1.0)

h = 0xCBF29CE484222325
for byte in buf:
    h ^= byte
    h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
print(f"{h:016x}")
