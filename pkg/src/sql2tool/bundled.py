"""Bundled desk-scale substrate: three mini SQLite databases and the query corpus.

The databases are built deterministically from the row literals below; the
corpus lives in data/corpus.json. Column descriptions feed the enum blocks
of the emitted tool specs.
"""

from __future__ import annotations

import json
import sqlite3
from importlib import resources
from pathlib import Path

DATABASES = ("california_schools", "student_club", "european_football_2")

_SCHOOLS_COLUMNS = (
    "CDSCode", "School", "District Name", "County", "Zip", "Charter School",
    "Magnet", "City", "Street",
)

_SCHOOLS_ROWS = [
    # Alameda
    ("CS001", "Alameda Community Day", "Alameda Unified", "Alameda", "94501", 0, 0, "Alameda", "401 Pacific Ave"),
    ("CS002", "Encinal High", "Alameda Unified", "Alameda", "94501", 0, 1, "Alameda", "210 Central Ave"),
    ("CS003", "Berkeley Technology Academy", "Berkeley Unified", "Alameda", "94703", 1, 0, "Berkeley", "2701 MLK Jr Way"),
    ("CS004", "Oakland Unity High", "Oakland Unified", "Alameda", "94605", 1, 0, "Oakland", "6038 Brann St"),
    # Los Angeles
    ("CS005", "Millikan High", "Long Beach Unified", "Los Angeles", "90815", 0, 1, "Long Beach", "2800 Snowden Ave"),
    ("CS006", "Polytechnic High", "Long Beach Unified", "Los Angeles", "90813", 0, 1, "Long Beach", "1600 Atlantic Ave"),
    ("CS007", "Intellectual Virtues Academy", "Long Beach Unified", "Los Angeles", "90804", 1, 0, "Long Beach", "1637 Long Beach Blvd"),
    ("CS008", "Lakewood High", "Long Beach Unified", "Los Angeles", "90713", 0, 0, "Lakewood", "4400 Briercrest Ave"),
    ("CS009", "New City School", "Long Beach Unified", "Los Angeles", "90802", 1, 0, "Long Beach", "1637 Elm Ave"),
    ("CS010", "Van Nuys Senior High", "Los Angeles Unified", "Los Angeles", "91411", 0, 1, "Van Nuys", "6535 Cedros Ave"),
    # Orange
    ("CS011", "Troy High", "Fullerton Joint Union", "Orange", "92831", 0, 1, "Fullerton", "2200 Dorothy Ln"),
    ("CS012", "Sunny Hills High", "Fullerton Joint Union", "Orange", "92833", 0, 0, "Fullerton", "1801 Warburton Way"),
    ("CS013", "El Camino Real High", "Fullerton Joint Union", "Orange", "92832", 0, 0, "Fullerton", "284 N Raymond Ave"),
    ("CS014", "Oxford Preparatory Academy", "Capistrano Unified", "Orange", "92630", 1, 0, "Lake Forest", "26422 Peter A Hartman Way"),
    ("CS015", "Samueli Academy", "Orange Unified", "Orange", "92868", 1, 0, "Santa Ana", "1901 E 4th St"),
    # Fresno
    ("CS016", "Edison Computech", "Fresno Unified", "Fresno", "93706", 0, 1, "Fresno", "555 E California Ave"),
    ("CS017", "Bullard High", "Fresno Unified", "Fresno", "93704", 0, 0, "Fresno", "5445 N Palm Ave"),
    ("CS018", "Design Science Middle College High", "Fresno Unified", "Fresno", "93721", 1, 0, "Fresno", "1101 E University Ave"),
    ("CS019", "Sunnyside High", "Fresno Unified", "Fresno", "93727", 0, 0, "Fresno", "1019 S Peach Ave"),
    ("CS020", "University High", "Fresno Unified", "Fresno", "93740", 1, 1, "Fresno", "2611 E Matoian Way"),
]

_SATSCORES_COLUMNS = ("cds", "sname", "NumTstTakr", "AvgScrMath", "AvgScrRead", "NumGE1500")

_SATSCORES_ROWS = [
    ("CS001", "Alameda Community Day", 18, 379, 388, 1),
    ("CS002", "Encinal High", 215, 492, 481, 61),
    ("CS003", "Berkeley Technology Academy", 24, 381, 392, 2),
    ("CS004", "Oakland Unity High", 62, 414, 405, 9),
    ("CS005", "Millikan High", 688, 528, 511, 302),
    ("CS006", "Polytechnic High", 811, 551, 527, 441),
    ("CS007", "Intellectual Virtues Academy", 49, 464, 473, 14),
    ("CS008", "Lakewood High", 612, 481, 474, 184),
    ("CS009", "New City School", 33, 421, 440, 5),
    ("CS010", "Van Nuys Senior High", 437, 459, 442, 104),
    ("CS011", "Troy High", 919, 617, 582, 728),
    ("CS012", "Sunny Hills High", 574, 572, 548, 342),
    ("CS013", "El Camino Real High", 88, 438, 429, 17),
    ("CS014", "Oxford Preparatory Academy", 71, 507, 498, 29),
    ("CS015", "Samueli Academy", 127, 449, 452, 26),
    ("CS016", "Edison Computech", 358, 513, 487, 141),
    ("CS017", "Bullard High", 486, 471, 463, 129),
    ("CS018", "Design Science Middle College High", 95, 502, 495, 33),
    ("CS019", "Sunnyside High", 521, 436, 428, 96),
    ("CS020", "University High", 142, 638, 619, 131),
]

_FRPM_COLUMNS = (
    "CDSCode", "School Name", "County Name", "Free Meal Count (K-12)",
    "Enrollment (K-12)", "Educational Option Type",
)

_FRPM_ROWS = [
    ("CS001", "Alameda Community Day", "Alameda", 125.0, 125.0, "Community Day School"),
    ("CS002", "Encinal High", "Alameda", 512.0, 1280.0, "Traditional"),
    ("CS003", "Berkeley Technology Academy", "Alameda", 81.0, 108.0, "Continuation School"),
    ("CS004", "Oakland Unity High", "Alameda", 204.0, 255.0, "Traditional"),
    ("CS005", "Millikan High", "Los Angeles", 1463.0, 3385.0, "Traditional"),
    ("CS006", "Polytechnic High", "Los Angeles", 2208.0, 4096.0, "Traditional"),
    ("CS007", "Intellectual Virtues Academy", "Los Angeles", 151.0, 251.0, "Traditional"),
    ("CS008", "Lakewood High", "Los Angeles", 1620.0, 3240.0, "Traditional"),
    ("CS009", "New City School", "Los Angeles", 176.0, 220.0, None),
    ("CS010", "Van Nuys Senior High", "Los Angeles", 1422.0, 2370.0, "Traditional"),
    ("CS011", "Troy High", "Orange", 409.0, 2617.0, "Traditional"),
    ("CS012", "Sunny Hills High", "Orange", 583.0, 2332.0, "Traditional"),
    ("CS013", "El Camino Real High", "Orange", 173.0, 212.0, "Continuation School"),
    ("CS014", "Oxford Preparatory Academy", "Orange", 318.0, 1060.0, "Traditional"),
    ("CS015", "Samueli Academy", "Orange", 392.0, 560.0, "Traditional"),
    ("CS016", "Edison Computech", "Fresno", 715.0, 1100.0, "Traditional"),
    ("CS017", "Bullard High", "Fresno", 1406.0, 2187.0, "Traditional"),
    ("CS018", "Design Science Middle College High", "Fresno", 280.0, 400.0, "Alternative School"),
    ("CS019", "Sunnyside High", "Fresno", 2075.0, 2500.0, "Traditional"),
    ("CS020", "University High", "Fresno", 68.0, 485.0, "Traditional"),
]

_MAJOR_COLUMNS = ("major_id", "major_name", "department", "college")

_MAJOR_ROWS = [
    ("M01", "Business", "School of Management", "College of Business"),
    ("M02", "Computer Science", "Computer Science Department", "College of Engineering"),
    ("M03", "Psychology", "Psychology Department", "College of Liberal Arts"),
    ("M04", "Biology", "Biology Department", "College of Science"),
    ("M05", "Economics", "Economics Department", "College of Liberal Arts"),
    ("M06", "History", "History Department", "College of Liberal Arts"),
    ("M07", "Nursing", "School of Nursing", "College of Health"),
    ("M08", "Art", "Art Department", "College of Fine Arts"),
]

_MEMBER_COLUMNS = ("member_id", "first_name", "last_name", "position", "t_shirt_size", "link_to_major")

_MEMBER_ROWS = [
    ("R001", "Angela", "Sanders", "Member", "Medium", "M01"),
    ("R002", "Grant", "Gilmour", "President", "Large", "M02"),
    ("R003", "Luisa", "Guidi", "Vice President", "Medium", "M05"),
    ("R004", "Sherri", "Ramsey", "Treasurer", "Small", "M01"),
    ("R005", "Elijah", "Allen", "Member", "Large", "M02"),
    ("R006", "Connor", "Hilton", "Member", "Medium", "M03"),
    ("R007", "Garrett", "Gerke", "Member", "X-Large", "M07"),
    ("R008", "Phillip", "Cullen", "Inactive", "Large", "M04"),
    ("R009", "Emily", "Jaquith", "Member", "Small", "M03"),
    ("R010", "Christof", "Nielson", "Member", "Medium", "M06"),
    ("R011", "Sacha", "Harrison", "Secretary", "Small", "M07"),
    ("R012", "Matthew", "Snay", "Member", "Medium", "M01"),
    ("R013", "Maya", "Mclean", "Member", "Small", "M08"),
    ("R014", "Tyler", "Hewitt", "Member", "Large", "M04"),
    ("R015", "Adela", "Oliva", "Member", "Medium", "M05"),
]

_PLAYER_COLUMNS = ("id", "player_api_id", "player_name", "player_fifa_api_id", "birthday", "height", "weight")

_PLAYER_ROWS = [
    (1, 505942, "Aaron Appindangoye", 218353, "1992-02-29 00:00:00", 182.88, 187),
    (2, 155782, "Aaron Cresswell", 189615, "1989-12-15 00:00:00", 170.18, 146),
    (3, 162549, "Aaron Doran", 186170, "1991-05-13 00:00:00", 170.18, 163),
    (4, 30572, "Aaron Galindo", 140161, "1982-05-08 00:00:00", 182.88, 198),
    (5, 23780, "Aaron Hughes", 17725, "1979-11-08 00:00:00", 182.88, 154),
    (6, 27316, "Kevin Berigaud", 194479, "1988-05-09 00:00:00", 177.8, 165),
    (7, 564793, "Kevin Bru", 203552, "1988-12-12 00:00:00", 180.34, 163),
    (8, 30895, "Kevin Constant", 164680, "1987-05-10 00:00:00", 182.88, 161),
    (9, 528212, "Leon Goretzka", 209557, "1995-02-06 00:00:00", 189.0, 180),
    (10, 101042, "Marco Reus", 188350, "1989-05-31 00:00:00", 180.34, 157),
    (11, 46509, "Mario Gomez", 163731, "1985-07-10 00:00:00", 187.96, 196),
    (12, 39902, "Per Mertesacker", 148336, "1984-09-29 00:00:00", 198.12, 187),
]

_PLAYER_ATTRIBUTES_COLUMNS = (
    "id", "player_fifa_api_id", "player_api_id", "date", "overall_rating",
    "potential", "defensive_work_rate",
)

_PLAYER_ATTRIBUTES_ROWS = [
    (1, 218353, 505942, "2016-02-18 00:00:00", 67, 71, "medium"),
    (2, 218353, 505942, "2013-02-22 00:00:00", 62, 66, "high"),
    (3, 189615, 155782, "2016-04-21 00:00:00", 74, 76, "high"),
    (4, 189615, 155782, "2013-02-22 00:00:00", 70, 75, "high"),
    (5, 186170, 162549, "2014-04-04 00:00:00", 65, 68, "low"),
    (6, 140161, 30572, "2011-08-30 00:00:00", 71, 73, "medium"),
    (7, 17725, 23780, "2012-02-22 00:00:00", 70, 70, "high"),
    (8, 194479, 27316, "2012-08-31 00:00:00", 66, 70, "low"),
    (9, 194479, 27316, "2013-02-22 00:00:00", 68, 72, "medium"),
    (10, 194479, 27316, "2014-02-07 00:00:00", 69, 72, "high"),
    (11, 203552, 564793, "2015-09-21 00:00:00", 68, 69, "medium"),
    (12, 164680, 30895, "2013-02-22 00:00:00", 71, 74, "low"),
    (13, 209557, 528212, "2015-11-19 00:00:00", 78, 85, "medium"),
    (14, 188350, 101042, "2015-12-17 00:00:00", 86, 88, "medium"),
    (15, 163731, 46509, "2015-10-16 00:00:00", 83, 83, "low"),
    (16, 148336, 39902, "2015-09-25 00:00:00", 80, 80, "high"),
    (17, 188350, 101042, "2013-02-22 00:00:00", 84, 89, "low"),
    (18, 46509, 163731, "2012-08-31 00:00:00", 85, 87, "low"),
]

_TABLES = {
    "california_schools": [
        ("schools", _SCHOOLS_COLUMNS, _SCHOOLS_ROWS,
         ("TEXT", "TEXT", "TEXT", "TEXT", "TEXT", "INTEGER", "INTEGER", "TEXT", "TEXT")),
        ("satscores", _SATSCORES_COLUMNS, _SATSCORES_ROWS,
         ("TEXT", "TEXT", "INTEGER", "INTEGER", "INTEGER", "INTEGER")),
        ("frpm", _FRPM_COLUMNS, _FRPM_ROWS,
         ("TEXT", "TEXT", "TEXT", "REAL", "REAL", "TEXT")),
    ],
    "student_club": [
        ("major", _MAJOR_COLUMNS, _MAJOR_ROWS, ("TEXT", "TEXT", "TEXT", "TEXT")),
        ("member", _MEMBER_COLUMNS, _MEMBER_ROWS, ("TEXT", "TEXT", "TEXT", "TEXT", "TEXT", "TEXT")),
    ],
    "european_football_2": [
        ("Player", _PLAYER_COLUMNS, _PLAYER_ROWS,
         ("INTEGER", "INTEGER", "TEXT", "INTEGER", "TEXT", "REAL", "INTEGER")),
        ("Player_Attributes", _PLAYER_ATTRIBUTES_COLUMNS, _PLAYER_ATTRIBUTES_ROWS,
         ("INTEGER", "INTEGER", "INTEGER", "TEXT", "INTEGER", "INTEGER", "TEXT")),
    ],
}

COLUMN_DESCRIPTIONS = {
    "california_schools": {
        "schools_CDSCode": ("unique identifier of the school", "string"),
        "schools_School": ("name of the school", "string"),
        "schools_District Name": ("name of the school district", "string"),
        "schools_County": ("county where the school is located", "string"),
        "schools_Zip": ("zip code of the school", "string"),
        "schools_Charter School": ("charter school status (1 for yes, 0 for no)", "integer"),
        "schools_Magnet": ("whether the school is a magnet school (1 for yes, 0 for no)", "integer"),
        "schools_City": ("city where the school is located", "string"),
        "schools_Street": ("street address of the school", "string"),
        "satscores_cds": ("school identifier matching schools.CDSCode", "string"),
        "satscores_sname": ("school name as recorded with the scores", "string"),
        "satscores_NumTstTakr": ("number of SAT test takers", "integer"),
        "satscores_AvgScrMath": ("average SAT math score", "integer"),
        "satscores_AvgScrRead": ("average SAT reading score", "integer"),
        "satscores_NumGE1500": ("number of test takers scoring at least 1500", "integer"),
        "frpm_CDSCode": ("school identifier matching schools.CDSCode", "string"),
        "frpm_School Name": ("name of the school in the meal program records", "string"),
        "frpm_County Name": ("name of the county", "string"),
        "frpm_Free Meal Count (K-12)": ("count of K-12 students eligible for free meals", "number"),
        "frpm_Enrollment (K-12)": ("K-12 enrollment", "number"),
        "frpm_Educational Option Type": ("educational option type of the school", "string"),
    },
    "student_club": {
        "major_major_id": ("unique id of the major", "string"),
        "major_major_name": ("name of the major", "string"),
        "major_department": ("department offering the major", "string"),
        "major_college": ("college the department belongs to", "string"),
        "member_member_id": ("unique id of member", "string"),
        "member_first_name": ("member's first name", "string"),
        "member_last_name": ("member's last name", "string"),
        "member_position": ("position the member holds in the club", "string"),
        "member_t_shirt_size": ("member's t-shirt size", "string"),
        "member_link_to_major": ("major the member belongs to, matching major.major_id", "string"),
    },
    "european_football_2": {
        "Player_id": ("row id of the player", "integer"),
        "Player_player_api_id": ("api id of the player", "integer"),
        "Player_player_name": ("player's name", "string"),
        "Player_player_fifa_api_id": ("fifa api id of the player", "integer"),
        "Player_birthday": ("player's birthday", "string"),
        "Player_height": ("player's height in centimeters", "number"),
        "Player_weight": ("player's weight in pounds", "integer"),
        "Player_Attributes_id": ("row id of the attribute record", "integer"),
        "Player_Attributes_player_fifa_api_id": ("fifa api id matching Player.player_fifa_api_id", "integer"),
        "Player_Attributes_player_api_id": ("api id matching Player.player_api_id", "integer"),
        "Player_Attributes_date": ("date", "string"),
        "Player_Attributes_overall_rating": ("overall rating of the player", "integer"),
        "Player_Attributes_potential": ("potential rating of the player", "integer"),
        "Player_Attributes_defensive_work_rate": ("defensive work rate of the player", "string"),
    },
}


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def create_database(name: str, directory: Path) -> Path:
    """Write one mini database file and return its path."""
    if name not in _TABLES:
        raise ValueError(f"unknown bundled database {name!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.sqlite"
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        for table, columns, rows, types in _TABLES[name]:
            decl = ", ".join(f"{_quote(c)} {t}" for c, t in zip(columns, types))
            conn.execute(f"CREATE TABLE {_quote(table)} ({decl})")
            placeholders = ", ".join("?" for _ in columns)
            conn.executemany(f"INSERT INTO {_quote(table)} VALUES ({placeholders})", rows)
        conn.commit()
    finally:
        conn.close()
    return path


def create_databases(directory: Path) -> dict[str, Path]:
    """Materialize every bundled database under `directory`."""
    return {name: create_database(name, directory) for name in DATABASES}


def table_columns(database: str) -> dict[str, list[str]]:
    return {table: list(columns) for table, columns, _, _ in _TABLES[database]}


def column_enum(database: str, tables: list[str] | None = None) -> list[dict]:
    """Column enum rows (prefixed name, description, dtype) for spec emission."""
    known = COLUMN_DESCRIPTIONS[database]
    rows = []
    for table, columns, _, _ in _TABLES[database]:
        if tables is not None and table not in tables:
            continue
        for column in columns:
            prefixed = f"{table}_{column}"
            description, dtype = known[prefixed]
            rows.append({"key_name": prefixed, "description": description, "dtype": dtype})
    return rows


def corpus_path() -> Path:
    return Path(str(resources.files("sql2tool").joinpath("data/corpus.json")))


def load_corpus(path: Path | None = None) -> list[dict]:
    """Corpus rows: {"input", "query", "dataset_name"} in fixed order."""
    source = Path(path) if path is not None else corpus_path()
    with open(source, encoding="utf-8") as handle:
        rows = json.load(handle)
    if not isinstance(rows, list):
        raise ValueError("corpus file must contain a JSON list")
    for i, row in enumerate(rows):
        missing = {"input", "query", "dataset_name"} - set(row)
        if missing:
            raise ValueError(f"corpus row {i} is missing fields: {sorted(missing)}")
    return rows
