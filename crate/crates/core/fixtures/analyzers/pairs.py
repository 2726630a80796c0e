# Toy analyzer: tokens of two characters each.
import sys

for line in sys.stdin:
    text = line.rstrip("\n")
    print("␟".join(text[i:i + 2] for i in range(0, len(text), 2)), flush=True)
