# Drops the last character of every line.
import sys

for line in sys.stdin:
    text = line.rstrip("\n")
    print("␟".join(text[:-1]), flush=True)
