"""Reference figures for the Rottnest Island survey.

Per-class point counts (train years 2010-2012 / test year 2013), per-year
image and point totals, and the 2013 per-site cover means. They drive the
default taxonomy file and the survey-shaped fixtures in
:mod:`benthoscan.synthetic`.
"""

from __future__ import annotations

# (code, train points, test points)
CLASS_COUNTS: tuple[tuple[str, int, int], ...] = (
    ("AUC", 1, 0),
    ("AUS", 0, 1),
    ("BMC", 2, 0),
    ("BRYH", 483, 294),
    ("BRYS", 20, 13),
    ("CB", 20, 0),
    ("CBBF", 1, 0),
    ("CBBH", 2, 0),
    ("CBOT", 7, 0),
    ("CNHYC", 0, 3),
    ("CNHYD", 3, 0),
    ("CSBL", 7, 1),
    ("CSBR", 44, 19),
    ("CSBRBL", 1, 1),
    ("CSCOLBL", 15, 3),
    ("CSCOR", 2, 0),
    ("CSCORBL", 2, 2),
    ("CSDBL", 7, 3),
    ("CSE", 265, 38),
    ("CSEBL", 24, 1),
    ("CSF", 887, 355),
    ("CSFBL", 46, 2),
    ("CSM", 7, 3),
    ("CSSO", 50, 8),
    ("CSSOBL", 1, 0),
    ("CSST", 0, 2),
    ("CSSUBL", 1, 0),
    ("CST", 1, 1),
    ("CSTBL", 1, 0),
    ("EF", 10, 7),
    ("ESC", 47, 2),
    ("ESS", 15, 1),
    ("FELR", 102, 31),
    ("MAAG", 0, 3),
    ("MAAR", 2644, 2561),
    ("MACAU", 37, 0),
    ("MAECB", 66, 113),
    ("MAECG", 1, 1),
    ("MAECK", 112762, 43014),
    ("MAECR", 2419, 1124),
    ("MAEFB", 1733, 173),
    ("MAEFG", 1, 1),
    ("MAEFR", 2839, 586),
    ("MAENB", 6744, 1300),
    ("MAENR", 29948, 11686),
    ("MAFR", 1252, 2073),
    ("MAGB", 2, 0),
    ("MAGG", 9, 0),
    ("MAGR", 1, 0),
    ("MALAB", 4, 0),
    ("MALAR", 2, 0),
    ("MALCB", 285, 87),
    ("MAPAD", 3, 1),
    ("MASAR", 1177, 2391),
    ("MASB", 52, 6),
    ("MASCY", 16571, 3366),
    ("MASR", 137, 0),
    ("MATM", 24637, 4846),
    ("RH", 2, 0),
    ("SC", 1505, 163),
    ("SCC", 14, 13),
    ("SEAGSAA", 2, 0),
    ("SEAGSAG", 18, 3),
    ("SEAGSPA", 0, 3),
    ("SEAGSPC", 1, 3),
    ("SEAGSPS", 2, 0),
    ("SEAGSZ", 1, 0),
    ("SHAD", 106, 15),
    ("SPC", 2013, 1201),
    ("SPCL", 400, 214),
    ("SPEB", 110, 125),
    ("SPEL", 123, 36),
    ("SPES", 289, 347),
    ("SPM", 69, 0),
    ("SUPBC", 23, 6),
    ("SUPBR", 164, 4),
    ("SUS", 9340, 1893),
    ("UNK", 68, 1),
)

KELP_CODE = "MAECK"

# year -> (images, labelled points)
YEAR_TOTALS: dict[int, tuple[int, int]] = {
    2010: (1680, 84000),
    2011: (1680, 84000),
    2012: (1033, 51650),
    2013: (1563, 78150),
}

# site -> (depth/location, expert cover %, estimated cover %, R^2), test year 2013
SITE_COVER_2013: dict[str, tuple[str, float, float, float]] = {
    "1": ("15m North", 52.65, 60.19, 0.84),
    "2": ("15m South", 64.64, 71.23, 0.87),
    "3": ("25m North", 62.44, 72.32, 0.83),
    "4": ("25m South", 49.24, 49.78, 0.89),
    "5": ("40m North", 44.60, 43.28, 0.85),
}


def class_codes() -> list[str]:
    return [code for code, _, _ in CLASS_COUNTS]


def _group_key(code: str) -> str:
    return code[:2]


def default_taxonomy() -> dict:
    """Nested taxonomy document covering every Rottnest class code.

    Kelp sits at 1.1.1, the remaining ``MA*`` codes under the "other
    macroalgae" node 1.1.2, and everything else under 1.2 in groups keyed by
    the first two letters of the code. Group names below 1.2 are neutral
    placeholders, not CATAMI names.
    """
    codes = class_codes()
    other_ma = [c for c in codes if c.startswith("MA") and c != KELP_CODE]
    non_ma = [c for c in codes if not c.startswith("MA")]

    groups: dict[str, list[str]] = {}
    for code in non_ma:
        groups.setdefault(_group_key(code), []).append(code)

    non_ma_children = []
    for gi, (key, members) in enumerate(sorted(groups.items()), start=1):
        gid = f"1.2.{gi}"
        non_ma_children.append({
            "node_id": gid,
            "code": "",
            "name": f"group {key}",
            "children": [
                {"node_id": f"{gid}.{li}", "code": c, "name": c, "children": []}
                for li, c in enumerate(members, start=1)
            ],
        })

    return {
        "node_id": "1",
        "code": "",
        "name": "Biota and substrate",
        "children": [
            {
                "node_id": "1.1",
                "code": "",
                "name": "Macroalgae",
                "children": [
                    {"node_id": "1.1.1", "code": KELP_CODE, "name": "Kelp (Ecklonia radiata)", "children": []},
                    {
                        "node_id": "1.1.2",
                        "code": "",
                        "name": "Other macroalgae",
                        "children": [
                            {"node_id": f"1.1.2.{i}", "code": c, "name": c, "children": []}
                            for i, c in enumerate(other_ma, start=1)
                        ],
                    },
                ],
            },
            {"node_id": "1.2", "code": "", "name": "Non-macroalgae", "children": non_ma_children},
        ],
    }
