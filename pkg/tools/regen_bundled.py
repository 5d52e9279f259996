"""Regenerate the bundled model-spec JSON files from edgepart.zoo."""
from pathlib import Path

from edgepart.dnn import dump_model_spec
from edgepart.zoo import BUILDERS

out = Path(__file__).resolve().parents[1] / "src" / "edgepart" / "data" / "models"
out.mkdir(parents=True, exist_ok=True)
for name, build in BUILDERS.items():
    (out / f"{name}.json").write_text(dump_model_spec(build()) + "\n")
    print("wrote", out / f"{name}.json")
