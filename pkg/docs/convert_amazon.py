"""Convert two Amazon ratings-only CSV dumps into the interaction TSV.

The ratings-only files have rows ``user,item,rating,timestamp`` with no
header. The first file becomes domain X, the second domain Y:

    python docs/convert_amazon.py ratings_Grocery_and_Gourmet_Food.csv \
        ratings_Home_and_Kitchen.csv > food_kitchen.tsv
    cdsr prepare --in food_kitchen.tsv --out corpus/food_kitchen

Domains share item ids rarely; items are prefixed with their domain so the
two vocabularies never collide.
"""

import argparse
import csv
import gzip
import sys


def _open(path):
    return gzip.open(path, "rt", newline="") if path.endswith(".gz") else open(path, newline="")


def convert(path, domain, out, columns=(0, 1, 3)):
    u_col, i_col, t_col = columns
    n = 0
    with _open(path) as fh:
        for row in csv.reader(fh):
            try:
                ts = int(float(row[t_col]))
            except (IndexError, ValueError):
                continue  # header or malformed line
            out.write(f"{row[u_col]}\t{domain}:{row[i_col]}\t{domain}\t{ts}\n")
            n += 1
    return n


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("x_csv")
    p.add_argument("y_csv")
    p.add_argument("--columns", default="0,1,3", help="user,item,timestamp column indices")
    args = p.parse_args(argv)
    cols = tuple(int(c) for c in args.columns.split(","))
    for path, dom in ((args.x_csv, "X"), (args.y_csv, "Y")):
        n = convert(path, dom, sys.stdout, cols)
        print(f"{path}: {n} rows as domain {dom}", file=sys.stderr)


if __name__ == "__main__":
    main()
