"""Runs a tiny gen -> train -> eval pipeline and validates the report against docs/report.schema.json."""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema


def main(cli: str, schema_path: str) -> int:
    schema = json.loads(pathlib.Path(schema_path).read_text())
    with tempfile.TemporaryDirectory() as tmp:
        def run(*args: str) -> None:
            subprocess.run([cli, *args], cwd=tmp, check=True, stdout=subprocess.DEVNULL)

        run("gen", "--family", "syn", "--k", "3", "--n", "300", "--out", "data")
        run("train", "--dataset", "data", "--steps", "5", "--seeds", "0..2", "--out", "runs")
        run("eval", "--checkpoints", "runs", "--dataset", "data", "--out", "report.json")
        run("eval", "--dataset", "data", "--ground-truth", "--out", "truth.json")
        for name in ("report.json", "truth.json"):
            jsonschema.validate(json.loads((pathlib.Path(tmp) / name).read_text()), schema)
    print("reports conform to", schema_path)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
