"""Regenerate golden traces from the current engine: python -m subjektiv.patterns.regen

Goldens are frozen artifacts; rerun this only when a deliberate semantic
change is reviewed, then eyeball the diff.
"""

from __future__ import annotations

import pathlib
import sys

from .. import trace
from . import corpus


def main() -> int:
    corpus_dir = pathlib.Path(__file__).parent / "corpus"
    for c in corpus():
        for variant in (None, *[v.name for v in c.variants]):
            run = c.run(variant)
            out = corpus_dir / c.golden_file(variant)
            out.write_text(trace.dump_trace(run.trace), encoding="utf-8")
            suffix = f" [{variant}]" if variant else ""
            print(f"wrote {out.name}{suffix}: {len(run.trace)} records, statuses {run.statuses}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
