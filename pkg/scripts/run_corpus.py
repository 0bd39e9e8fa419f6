"""Run every CLI command over the bundled corpus and tabulate exit codes.

    python3 scripts/run_corpus.py [--out DIR]
"""
import argparse
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from tgmetric import cli
from tgmetric.scenario import corpus_dir


@dataclass
class CorpusRun:
    out: Path | None = None
    commands: tuple = ("check", "quotient", "loops")
    extra: dict = field(default_factory=lambda: {"loops": ["--N", "64,128,256"]})


def main(cfg: CorpusRun):
    if cfg.out:
        cfg.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for scn in sorted(corpus_dir().glob("*.scn")):
        codes = []
        for cmd in cfg.commands:
            argv = [cmd, str(scn), "--quiet", *cfg.extra.get(cmd, [])]
            if cfg.out:
                argv += ["--json", str(cfg.out / f"{scn.stem}.{cmd}.json")]
            codes.append(cli.run(argv, stdout=io.StringIO(), stderr=io.StringIO()))
        rows.append((scn.stem, codes))
    width = max(len(r[0]) for r in rows)
    print(f"{'scenario':<{width}}  " + "  ".join(f"{c:>8}" for c in cfg.commands))
    for name, codes in rows:
        print(f"{name:<{width}}  " + "  ".join(f"{c:>8}" for c in codes))
    if cfg.out:
        (cfg.out / "summary.json").write_text(json.dumps(dict(rows), indent=2) + "\n")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None, help="directory for JSON reports")
    main(CorpusRun(out=ap.parse_args().out))
