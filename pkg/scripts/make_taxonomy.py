"""Regenerate the bundled default taxonomy file."""

import json
from pathlib import Path

from benthoscan.rottnest import default_taxonomy
from benthoscan.taxonomy import DEFAULT_TAXONOMY, tree_from_dict

out = Path(__file__).resolve().parents[1] / "src" / "benthoscan" / "data" / DEFAULT_TAXONOMY
doc = default_taxonomy()
tree = tree_from_dict(doc)
out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
print(f"wrote {out} ({len(tree)} nodes, {len(tree.code_index)} codes)")
