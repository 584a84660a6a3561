"""Session-based recommendation with global item graphs (B-GNN, SRGI-FM, SRGI-CM).

The heavy lifting happens in the C++ core. Pipeline steps mirror the ``srgi``
command-line tool; keyword arguments map to its keys with ``_`` for ``-``.
"""

from ._core import (
    DataError,
    NumericError,
    Recommender,
    contrastive_loss,
    corpus_stats,
    global_graph,
    run_cli,
    target_rank,
)

__all__ = [
    "CliError",
    "DataError",
    "NumericError",
    "Recommender",
    "build_graph",
    "contrastive_loss",
    "corpus_stats",
    "evaluate",
    "global_graph",
    "parse_metrics",
    "preprocess",
    "recommend",
    "run",
    "run_cli",
    "target_rank",
    "train",
]


class CliError(RuntimeError):
    def __init__(self, code, stderr):
        super().__init__(f"srgi exited with {code}: {stderr.strip().splitlines()[-1] if stderr.strip() else ''}")
        self.code = code
        self.stderr = stderr


def _flags(options):
    args = []
    for key, value in options.items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        args += ["--" + key.replace("_", "-"), str(value)]
    return args


def run(command, stdin="", **options):
    """Run one subcommand; returns its stdout or raises CliError."""
    code, out, err = run_cli([command] + _flags(options), stdin)
    if code != 0:
        raise CliError(code, err)
    return out


def parse_metrics(text):
    """{"P@20": 51.2, "MRR@20": 17.9, "count": 1234} from metrics lines."""
    result = {}
    for line in text.splitlines():
        parts = line.split("\t")
        if len(parts) != 3:
            continue
        kind, n, value = parts
        if kind == "count":
            result["count"] = int(value)
        elif kind in ("P", "MRR") and n.isdigit():
            result[f"{kind}@{n}"] = float(value)
    return result


def preprocess(input, output, **options):
    return run("preprocess", **{"in": input, "out": output}, **options)


def build_graph(input, output, **options):
    return run("build-graph", **{"in": input, "out": output}, **options)


def train(corpus, checkpoint, **options):
    """Train and return the test metrics as a dict."""
    return parse_metrics(run("train", corpus=corpus, checkpoint=checkpoint, **options))


def evaluate(checkpoint, corpus, **options):
    return parse_metrics(run("evaluate", checkpoint=checkpoint, corpus=corpus, **options))


def recommend(checkpoint, corpus, prefixes, top_n=20, graph=None):
    """Top items per prefix: a list of [(token, probability), ...]."""
    rec = Recommender(checkpoint, corpus, graph or "")
    return [rec.recommend(list(p), top_n) for p in prefixes]
