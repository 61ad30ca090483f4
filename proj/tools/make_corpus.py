#!/usr/bin/env python3
"""Builds the bundled text corpus from docstrings of the Python standard library.

Each docstring paragraph of plain prose becomes one document line. Modules are
visited in sorted order so the output depends only on the Python version.
"""
import argparse
import ast
import pathlib
import re
import sysconfig

SKIP_DIRS = {"test", "tests", "idlelib", "lib2to3", "site-packages", "dist-packages", "turtledemo"}


def paragraphs(doc):
    for block in re.split(r"\n\s*\n", doc):
        lines = [l.strip() for l in block.splitlines()]
        if any(l.startswith((">>>", "...", "$", "%")) for l in lines):
            continue
        text = " ".join(l for l in lines if l)
        if len(text) < 60 or not text.isascii():
            continue
        letters = sum(c.isalpha() or c == " " for c in text)
        if letters / len(text) < 0.85:
            continue
        yield text


def docstrings(path):
    try:
        tree = ast.parse(path.read_text(encoding="utf-8"))
    except (SyntaxError, UnicodeDecodeError, ValueError):
        return
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
            doc = ast.get_docstring(node)
            if doc:
                yield doc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/corpus")
    ap.add_argument("--bytes", type=int, default=1_150_000)
    ap.add_argument("--valid-every", type=int, default=10)
    args = ap.parse_args()

    root = pathlib.Path(sysconfig.get_paths()["stdlib"])
    files = sorted(p for p in root.rglob("*.py") if not SKIP_DIRS & set(p.relative_to(root).parts))
    seen, docs, size = set(), [], 0
    for f in files:
        for doc in docstrings(f):
            for p in paragraphs(doc):
                if p in seen:
                    continue
                seen.add(p)
                docs.append(p)
                size += len(p) + 1
                if size >= args.bytes:
                    break
            if size >= args.bytes:
                break
        if size >= args.bytes:
            break

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = [d for i, d in enumerate(docs) if i % args.valid_every != args.valid_every - 1]
    valid = [d for i, d in enumerate(docs) if i % args.valid_every == args.valid_every - 1]
    (out / "train.txt").write_text("\n".join(train) + "\n", encoding="utf-8")
    (out / "valid.txt").write_text("\n".join(valid) + "\n", encoding="utf-8")
    print(f"{len(train)} train / {len(valid)} valid documents, {size} bytes")


if __name__ == "__main__":
    main()
