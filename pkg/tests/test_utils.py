import json
import logging
from enum import Enum

import numpy as np

from hjidecomp.utils import (LOG_SWEEP, format_float, init_logging, read_json, to_jsonable, write_csv, write_json,
                             write_jsonl)


class Colour(Enum):
    RED = 1


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(2.0) == "2"
    assert format_float(np.inf) == "inf"
    assert format_float(-np.inf) == "-inf"
    assert format_float(np.nan) == "nan"


def test_to_jsonable():
    record = {1: np.array([1.0, np.inf]), "flag": np.bool_(True), "n": np.int64(3), "c": Colour.RED, "t": (1, 2)}
    assert to_jsonable(record) == {"1": [1.0, "inf"], "flag": True, "n": 3, "c": "RED", "t": [1, 2]}


def test_writers(tmp_path):
    assert write_csv(tmp_path / "a.csv", ["x", "label"], [[0.5, "p"], [np.float64(1.0), "q"]]) == 2
    assert (tmp_path / "a.csv").read_text().splitlines() == ["x,label", "0.5,p", "1,q"]

    write_json(tmp_path / "a.json", {"v": np.float32(0.5)})
    assert read_json(tmp_path / "a.json") == {"v": 0.5}

    write_jsonl(tmp_path / "a.jsonl", [{"i": 0}, {"i": 1}])
    assert [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()] == [{"i": 0}, {"i": 1}]


def test_logging_off_by_default():
    init_logging()
    assert logging.root.manager.disable >= logging.CRITICAL


def test_logging_to_file(tmp_path):
    filename = tmp_path / "run.log"
    init_logging(str(filename), "sweep")
    logging.log(LOG_SWEEP, "sweep 1", extra={"source": "solver"})
    logging.getLogger("other").info("no source")
    logging.log(LOG_SWEEP - 1, "dropped", extra={"source": "solver"})
    for handler in logging.getLogger().handlers:
        handler.flush()
    lines = filename.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split()[2:] == ["solver", "sweep", "1"]
    assert "other" in lines[1]
