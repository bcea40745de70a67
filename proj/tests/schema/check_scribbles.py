"""Validate the scribble fixtures against schemas/scribbles.schema.json.

Every file under valid/ must pass and every file under invalid/ must fail. Extra
JSON files given on the command line must pass.
"""
import json
import sys
from pathlib import Path

import jsonschema


def main() -> int:
    root = Path(__file__).resolve().parents[2]
    schema = json.loads((root / "schemas" / "scribbles.schema.json").read_text())
    validator_cls = jsonschema.validators.validator_for(schema)
    validator_cls.check_schema(schema)
    validator = validator_cls(schema)

    failures = []
    data = root / "tests" / "data" / "scribbles"
    cases = [(p, True) for p in sorted((data / "valid").glob("*.json"))]
    cases += [(p, False) for p in sorted((data / "invalid").glob("*.json"))]
    cases += [(Path(a), True) for a in sys.argv[1:]]
    for path, should_pass in cases:
        errors = list(validator.iter_errors(json.loads(path.read_text())))
        if should_pass and errors:
            failures.append(f"{path.name}: expected valid, got {errors[0].message}")
        elif not should_pass and not errors:
            failures.append(f"{path.name}: expected a schema violation")
        print(f"{'ok  ' if (not errors) == should_pass else 'FAIL'} {path.name}")
    for f in failures:
        print(f, file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
