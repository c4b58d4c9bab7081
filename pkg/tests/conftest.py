import numpy as np
import pytest

from rtio import F64, I64, STR, LeafType, create_file, open_file


def write_tree(path, schema, rows, name="t", capacity=16384, level=6):
    with create_file(path) as f:
        w = f.create_tree(name, schema, capacity, level)
        for row in rows:
            w.fill(row)
    return path


def write_columns(path, schema, columns, name="t", capacity=16384, level=6):
    with create_file(path) as f:
        w = f.create_tree(name, schema, capacity, level)
        w.fill_columns(columns)
    return path


def random_rows(rng, n):
    """Rows for MIXED_SCHEMA with exactly representable values."""
    return [
        (float(rng.normal()), int(rng.integers(-1000, 1000)), f"s{int(rng.integers(0, 50))}",
         float(rng.uniform(-2, 2)))
        for _ in range(n)
    ]


MIXED_SCHEMA = [("x", F64), ("n", I64), ("tag", STR), ("q", LeafType.quantized(-1, 1, 12))]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_file(tmp_path, rng):
    rows = random_rows(rng, 500)
    path = write_tree(tmp_path / "mixed.rtio", MIXED_SCHEMA, rows, capacity=512)
    return path, rows


def random_merge_inputs(rnd, directory, k=2, tag="m"):
    """Write ``k`` files sharing one random schema; return their paths."""
    pool = [F64, I64, STR, LeafType.quantized(-3, 3, rnd.choice([6, 12, 20]))]
    n_branches = rnd.randint(1, 4)
    schema = [(f"b{i}", rnd.choice(pool)) for i in range(n_branches)]
    capacity = rnd.choice([64, 512, 4096])
    level = rnd.choice([0, 1, 6, 9])
    paths = []
    for j in range(k):
        rng = np.random.default_rng(rnd.randrange(1 << 30))
        n = rnd.randint(0, 1500)
        cols = []
        for _, leaf in schema:
            if leaf == STR:
                cols.append([f"v{int(v)}" * int(v % 4) for v in rng.integers(0, 40, n)])
            elif leaf == I64:
                cols.append(rng.integers(-10**12, 10**12, n))
            else:
                cols.append(rng.uniform(-3, 3, n))
        path = directory / f"{tag}{j}.rtio"
        write_columns(path, schema, cols, capacity=capacity, level=level)
        paths.append(path)
    return paths


def checksums(path, tree="t"):
    with open_file(path) as r:
        return sorted(e.checksum for b in r.directory.tree(tree).branches for e in b.baskets)


def all_rows(path, tree="t"):
    with open_file(path) as r:
        return list(r.tree(tree).iter_entries())
