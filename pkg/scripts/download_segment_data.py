# download_segment_data.py

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from regmva import dataset as ds  # noqa: E402
from regmva.errors import DatasetError  # noqa: E402


def show_progress(name, done, total):
    """Progress line for one file"""
    if total:
        percent = (done / total) * 100
        print(f"\r{name}: {percent:.1f}% ({done / 1024:.0f}/{total / 1024:.0f} KB)", end='')
        if done >= total:
            print()
    else:
        print(f"\r{name}: {done / 1024:.0f} KB", end='')


def main():
    parser = argparse.ArgumentParser(description="Download UCI Image Segmentation and write segment.csv")
    parser.add_argument('--dir', help='target directory (default $MVA_DATA_DIR or ./data)')
    parser.add_argument('--force', action='store_true', help='download again even if files exist')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(levelname)s %(name)s: %(message)s')
    download_dir = Path(args.dir) if args.dir else ds.data_dir()

    print(f"{'='*70}")
    print("UCI Image Segmentation Download")
    print(f"Files: {', '.join(ds.SEGMENT_URLS)}")
    print(f"{'='*70}")

    try:
        target = ds.fetch_segment(download_dir, force=args.force, progress=show_progress)
        table = ds.load_csv(target, 'class', ds.CsvSchema(expected='segment'))
    except DatasetError as e:
        print(f"\n✗ {e}")
        return 1
    classes = sorted(set(table.labels))

    print(f"\n{'='*70}")
    print("✓ DOWNLOAD PROCESS COMPLETE!")
    print(f"{'='*70}")
    print(f"\nsegment.csv: {table.n_rows} rows, {len(table.feature_names)} inputs, {len(classes)} classes")
    print(f"Classes: {', '.join(classes)}")
    print(f"Written to: {target.absolute()}")
    print(f"\nNext step: python -m regmva loss-vs-k --data {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
