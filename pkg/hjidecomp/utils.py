import csv
import json
import logging

import numpy as np

# logging levels below logging.DEBUG for the very high-volume parts of the system
LOG_SWEEP = 7    # one line per solver sweep
LOG_SAMPLE = 5   # one line per superdifferential sample point

LOG_FORMAT = '%(asctime)-15s %(source)-8s %(message)s'

# digits used when dumping values, enough to reproduce a float64 exactly
CSV_DIGITS = 17


class _SourceFilter(logging.Filter):
    """
    Records from outside the package do not carry a source; give them one so the format string works
    """
    def filter(self, record):
        if not hasattr(record, "source"):
            record.source = record.name
        return True


def init_logging(log_file=None, log_level=None):
    """
    Initialize the logging; set the log file and the logging level (LOG_SWEEP and LOG_SAMPLE are both below
    logging.DEBUG).  With neither a file nor a level, logging is turned off entirely.
    :param log_file: file to log to; None logs to stderr when a level is given
    :param log_level: logging level (int or level name)
    """
    if log_file is None and log_level is None:
        logging.disable()
        return

    logging.disable(logging.NOTSET)
    logging.addLevelName(LOG_SWEEP, "SWEEP")
    logging.addLevelName(LOG_SAMPLE, "SAMPLE")

    if isinstance(log_level, str):
        log_level = logging.getLevelName(log_level.upper())
        if not isinstance(log_level, int):
            raise ValueError("Unknown log level")

    handler = logging.FileHandler(log_file, mode='w') if log_file is not None else logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.addFilter(_SourceFilter())

    root = logging.getLogger()
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(log_level if log_level is not None else logging.INFO)


def format_float(value):
    """
    Format a float for the csv dumps (17 significant digits; inf and nan spelled out)
    """
    value = float(value)
    if np.isnan(value):
        return "nan"
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "{:.{}g}".format(value, CSV_DIGITS)


def write_csv(filename, header, rows):
    """
    Write rows to a csv file.  Floats are written with 17 significant digits.
    :param filename: file to write
    :param header: list of column names
    :param rows: iterable of row sequences
    :return: number of rows written
    """
    count = 0
    with open(filename, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
            count += 1
    return count


def to_jsonable(obj):
    """
    Convert numpy scalars/arrays and enums into things the json module can serialize
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        if np.isnan(value):
            return "nan"
        return value
    if hasattr(obj, "name") and hasattr(obj, "value") and not isinstance(obj, type):
        # enum members
        return obj.name
    return obj


def write_json(filename, obj):
    with open(filename, "w") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)


def write_jsonl(filename, records):
    """
    Write one json document per line
    """
    with open(filename, "w") as f:
        for record in records:
            f.write(json.dumps(to_jsonable(record), sort_keys=True))
            f.write("\n")


def read_json(filename):
    with open(filename, "r") as f:
        return json.load(f)
