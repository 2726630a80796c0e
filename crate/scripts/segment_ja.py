#!/usr/bin/env python3
"""Word segmentation adapter for `mtle --segmenter external`.

Reads one sentence per line on stdin and writes its tokens, joined by U+241F,
one line per input line. Uses fugashi (MeCab) when installed, otherwise
SudachiPy. Surface forms are emitted unchanged so the output stays lossless.

    mtle mask data.csv --segmenter external --analyzer "python3 scripts/segment_ja.py"
"""
import sys

SEP = "␟"


def load():
    try:
        import fugashi

        tagger = fugashi.Tagger()

        def seg(text):
            out, pos = [], 0
            for w in tagger(text):
                # MeCab drops whitespace; keep it attached so nothing is lost.
                start = text.index(w.surface, pos)
                if start > pos:
                    out.append(text[pos:start])
                out.append(w.surface)
                pos = start + len(w.surface)
            if pos < len(text):
                out.append(text[pos:])
            return out

        return seg
    except ImportError:
        pass
    from sudachipy import dictionary, tokenizer

    tok = dictionary.Dictionary().create()
    mode = tokenizer.Tokenizer.SplitMode.C
    return lambda text: [m.surface() for m in tok.tokenize(text, mode)]


def main():
    seg = load()
    for line in sys.stdin:
        text = line.rstrip("\r\n")
        print(SEP.join(seg(text)) if text else "", flush=True)


if __name__ == "__main__":
    main()
