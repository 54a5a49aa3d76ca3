"""Placeholder for obtaining the published gamma-H2AX calibration counts.

The dataset comes with the supplementary material of the original
calibration study. Its licence does not allow redistribution here, so this
script only checks a local copy and prints how to enable the data-dependent
acceptance tests.

Usage: python scripts/fetch_reference_data.py PATH_TO_CSV
"""

import sys

from h2axdose.artifact import ingest_calibration_csv
from h2axdose.errors import ParseError


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__)
        print("Download the supplementary calibration table manually, convert it to\n"
              "dose_gy,time_h,foci_count (or dose_gy,time_h,foci_count,cell_count) and pass its path.")
        return 2
    try:
        data = ingest_calibration_csv(argv[0])
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{data.count.size} cells at {len(set(zip(data.dose, data.time)))} dose/time points")
    print(f"export H2AXDOSE_REFERENCE_DATA={argv[0]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
