"""Build the frozen test corpus from Python stdlib documentation text.

Renders pydoc pages for a fixed module list, strips non-ASCII bytes, and
truncates to a fixed size so the checked-in file is reproducible across
machines with the same Python minor version. Run once; the output at
tests/data/corpus.txt is frozen and committed.
"""

import pydoc
import re
import sys
from pathlib import Path

MODULES = [
    "os", "os.path", "io", "re", "json", "csv", "math", "cmath", "random",
    "statistics", "itertools", "functools", "collections", "heapq", "bisect",
    "array", "struct", "enum", "types", "copy", "pickle", "hashlib", "hmac",
    "base64", "binascii", "zlib", "gzip", "bz2", "lzma", "pathlib", "glob",
    "fnmatch", "tempfile", "shutil", "stat", "time", "datetime", "calendar",
    "argparse", "getopt", "logging", "string", "textwrap", "unicodedata",
    "difflib", "socket", "selectors", "signal", "threading", "queue",
    "subprocess", "sched", "email", "html", "http", "urllib", "uuid",
    "xml", "webbrowser", "typing", "pprint", "reprlib", "abc", "contextlib",
    "dataclasses", "operator", "keyword", "token", "ast", "dis", "inspect",
    "traceback", "warnings", "gc", "site", "sysconfig", "platform", "errno",
    "ctypes", "mmap", "codecs", "locale", "gettext", "numbers", "decimal",
    "fractions", "secrets", "zipfile", "tarfile", "configparser", "netrc",
    "plistlib", "sqlite3", "doctest", "unittest", "pdb", "timeit", "trace",
]

# sized so a 90% training split still clears 1 MB
TARGET_BYTES = 1_250_000


def render(module_name: str) -> str:
    try:
        obj = pydoc.locate(module_name, forceload=0)
    except Exception:
        return ""
    if obj is None:
        return ""
    text = pydoc.render_doc(obj, renderer=pydoc.plaintext)
    # strip the volatile FILE footer (absolute install paths)
    text = re.sub(r"\nFILE\n.*?(\n\n|\Z)", "\n", text, flags=re.S)
    return text


def main() -> int:
    out = Path(__file__).resolve().parent.parent / "tests" / "data" / "corpus.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    parts = []
    size = 0
    for name in MODULES:
        text = render(name)
        if not text:
            continue
        data = text.encode("ascii", errors="ignore")
        parts.append(data)
        size += len(data)
        if size >= TARGET_BYTES:
            break
    blob = b"\n\n".join(parts)[:TARGET_BYTES]
    out.write_bytes(blob)
    print(f"wrote {out} ({len(blob)} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
