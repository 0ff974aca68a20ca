"""
From a raw release to a report
==============================

The command line drives the whole flow. Here a synthetic release in the
OPP-115 directory layout stands in for the real download, and a mock
script stands in for the language model.
"""

import tempfile
from pathlib import Path

from polifilter import cli, scripted_fixture
from polifilter.synthetic import write_synthetic_opp115

work = Path(tempfile.mkdtemp(prefix="polifilter-demo-"))

# ingest: parse annotations, map the practice tiers to twelve classes,
# split by policy and write the canonical corpus
write_synthetic_opp115(work / "raw", n_policies=5, seed=0)
cli.main(["ingest", "--raw-dir", str(work / "raw"), "--out", str(work / "corpus.jsonl")])

# classify and evaluate run against a scripted fixture so no service is needed
fixture_dir = work / "fixture"
scripted_fixture(40, seed=1).write(fixture_dir)
common = ["--corpus", str(fixture_dir / "corpus.jsonl")]
cli.main(["classify", *common, "--mock-script", str(fixture_dir / "mock_script.jsonl"),
          "--cache-dir", str(work / "cache"), "--out", str(work / "predictions.jsonl")])
cli.main(["evaluate", *common, "--predictions", str(work / "predictions.jsonl"), "--out-dir", str(work / "report")])

print("outputs in", work)
