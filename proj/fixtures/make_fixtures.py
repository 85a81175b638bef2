#!/usr/bin/env python3
"""Regenerates the synthetic fixture corpora in this directory.

The corpora are random but seeded; rerunning produces identical files.
"""
import json
import os
import random
import struct

HERE = os.path.dirname(os.path.abspath(__file__))
rng = random.Random(20240611)

NOUNS = ["dog", "cat", "bank", "river", "loan", "teacher", "car", "city", "song", "idea", "tree", "letter"]
VERBS = ["saw", "likes", "took", "found", "sold", "wrote", "heard", "built"]
DETS = ["the", "a", "every", "this"]
ADJS = ["old", "red", "quiet", "big", "new"]
PREPS = ["near", "with", "under", "after"]


def noun_phrase():
    words = [(rng.choice(DETS), "DT", "DET")]
    if rng.random() < 0.4:
        words.append((rng.choice(ADJS), "JJ", "ADJ"))
    words.append((rng.choice(NOUNS), "NN", "NOUN"))
    return words


def sentence():
    """Returns tokens as (form, xpos, upos, head, deprel) with a well-formed tree."""
    subj = noun_phrase()
    verb = (rng.choice(VERBS), "VBD", "VERB")
    obj = noun_phrase()
    pp = None
    if rng.random() < 0.5:
        pp = [(rng.choice(PREPS), "IN", "ADP")] + noun_phrase()
    toks = subj + [verb] + obj + (pp or [])
    n_subj, v = len(subj), len(subj) + 1  # 1-based verb id
    rows = []
    for i, (f, x, u) in enumerate(subj, 1):
        rows.append((f, x, u, n_subj if i < n_subj else v, "det" if x == "DT" else ("amod" if x == "JJ" else "nsubj")))
    rows.append((verb[0], verb[1], verb[2], 0, "root"))
    o0 = v + 1
    o_head = v + len(obj)
    for i, (f, x, u) in enumerate(obj):
        tid = o0 + i
        rows.append((f, x, u, o_head if tid != o_head else v, "obj" if tid == o_head else ("det" if x == "DT" else "amod")))
    if pp:
        p0 = o_head + 1
        p_head = p0 + len(pp) - 1
        for i, (f, x, u) in enumerate(pp):
            tid = p0 + i
            if tid == p_head:
                rows.append((f, x, u, v, "obl"))
            elif x == "IN":
                rows.append((f, x, u, p_head, "case"))
            else:
                rows.append((f, x, u, p_head, "det" if x == "DT" else "amod"))
    assert len(rows) == len(toks)
    return rows


def write_conllu(path, n):
    with open(path, "w") as f:
        for s in range(n):
            rows = sentence()
            f.write("# sent_id = %d\n" % (s + 1))
            f.write("# text = %s\n" % " ".join(r[0] for r in rows))
            for i, (form, xpos, upos, head, rel) in enumerate(rows, 1):
                f.write("%d\t%s\t%s\t%s\t%s\t_\t%d\t%s\t_\t_\n" % (i, form, form, upos, xpos, head, rel))
            f.write("\n")


def write_ptb(path, n):
    with open(path, "w") as f:
        for _ in range(n):
            rows = sentence()
            def leaf(r):
                return "(%s %s)" % (r[1], r[0])
            # Group by the same shapes sentence() produced: NP VBD NP [PP]
            i = 0
            np1 = []
            while rows[i][1] != "VBD":
                np1.append(leaf(rows[i]))
                i += 1
            verb = leaf(rows[i])
            i += 1
            np2 = []
            while i < len(rows) and rows[i][1] != "IN":
                np2.append(leaf(rows[i]))
                i += 1
            vp = "(VP %s (NP %s)" % (verb, " ".join(np2))
            if i < len(rows):
                prep = leaf(rows[i])
                np3 = " ".join(leaf(r) for r in rows[i + 1:])
                vp += " (PP %s (NP %s))" % (prep, np3)
            vp += ")"
            f.write("( (S (NP %s) %s) )\n" % (" ".join(np1), vp))


def write_chunks(path, n):
    with open(path, "w") as f:
        f.write("-DOCSTART- -X- -X- O\n\n")
        for _ in range(n):
            rows = sentence()
            prev = None
            for form, xpos, _, _, _ in rows:
                chunk = {"DT": "NP", "JJ": "NP", "NN": "NP", "VBD": "VP", "IN": "PP"}[xpos]
                tag = ("I-" if prev == chunk and chunk == "NP" and xpos != "DT" else "B-") + chunk
                prev = chunk
                f.write("%s %s %s\n" % (form, xpos, tag))
            f.write("\n")


def write_sdp(path, n):
    with open(path, "w") as f:
        f.write("#SDP 2015\n")
        for s in range(n):
            rows = sentence()
            T = len(rows)
            preds = sorted(rng.sample(range(T), rng.randint(0, min(3, T))))
            f.write("#2%05d\n" % s)
            for i, (form, xpos, _, _, _) in enumerate(rows):
                cells = []
                for p in preds:
                    cells.append(rng.choice(["ARG1", "ARG2", "BV"]) if p != i and rng.random() < 0.3 else "_")
                top = "+" if xpos == "VBD" else "-"
                pred = "+" if i in preds else "-"
                f.write("\t".join([str(i + 1), form, form, xpos, top, pred, "_"] + cells) + "\n")
            f.write("\n")


def write_coref(path, n):
    with open(path, "w") as f:
        for _ in range(n):
            toks = []
            for _ in range(rng.randint(2, 3)):
                toks += [r[0] for r in sentence()]
            T = len(toks)
            idx = list(range(T))
            rng.shuffle(idx)
            clusters = []
            pos = 0
            for _ in range(rng.randint(1, 3)):
                size = rng.randint(2, 3)
                members = sorted(idx[pos:pos + size])
                pos += size
                cl = []
                for m in members:
                    if m > 0 and rng.random() < 0.3:
                        cl.append([m - 1, m])
                    else:
                        cl.append(m)
                clusters.append(cl)
            f.write(json.dumps({"tokens": toks, "clusters": clusters}) + "\n")


def write_text(path, n):
    with open(path, "w") as f:
        for _ in range(n):
            f.write(" ".join(r[0] for r in sentence()) + "\n")


def cwrs_value(s, l, t, k):
    return float(s * 1000 + l * 100 + t * 10 + k) / 4.0


def write_cwrs_set(d):
    """A valid store plus one malformed variant per error class."""
    os.makedirs(d, exist_ok=True)
    lengths = [3, 1, 0, 2]
    L, D = 2, 3

    def build(header):
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        out = b"CWRSTOR1" + struct.pack("<I", len(hb)) + hb
        for s, T in enumerate(lengths):
            out += struct.pack("<I", T)
            for l in range(L):
                for t in range(T):
                    out += struct.pack("<%df" % D, *[cwrs_value(s, l, t, k) for k in range(D)])
        return out

    base = {"version": 1, "model_name": "fixture", "num_layers": L, "dim": D,
            "num_sentences": len(lengths), "dtype": "f32", "byte_order": "LE"}
    good = build(base)
    files = {
        "valid.cwrs": good,
        "bad_magic.cwrs": b"CWRSTOR2" + good[8:],
        "truncated.cwrs": good[:-5],
        "trailing.cwrs": good + b"\x00\x00\x00\x00",
        "unsupported_version.cwrs": build(dict(base, version=2)),
        "unsupported_dtype.cwrs": build(dict(base, dtype="f16")),
    }
    broken = b"{not json"
    files["bad_header.cwrs"] = b"CWRSTOR1" + struct.pack("<I", len(broken)) + broken
    for name, data in files.items():
        with open(os.path.join(d, name), "wb") as f:
            f.write(data)


if __name__ == "__main__":
    write_conllu(os.path.join(HERE, "ud_sample.conllu"), 50)
    write_ptb(os.path.join(HERE, "ptb_sample.mrg"), 30)
    write_chunks(os.path.join(HERE, "chunk_sample.txt"), 40)
    write_sdp(os.path.join(HERE, "sdp_sample.sdp"), 20)
    write_coref(os.path.join(HERE, "coref_sample.jsonl"), 20)
    write_text(os.path.join(HERE, "lm_sample.txt"), 60)
    write_cwrs_set(os.path.join(HERE, "cwrs"))
