import numpy as np
import pytest

from trafficmpc.network import Link, Network, make_paper_grid


def make_split_node(c=(2.0, 3.0), r=(0.6, 0.4)):
    """One intersection: entry link e splits onto exit links x1, x2, one
    phase per movement."""
    links = [Link("e", "entry", end="n1"),
             Link("x1", "exit", start="n1"),
             Link("x2", "exit", start="n1")]
    movements = [("e", "x1"), ("e", "x2")]
    C = {("e", "x1"): c[0], ("e", "x2"): c[1]}
    R = {("e", "x1"): r[0], ("e", "x2"): r[1]}
    phases = {"n1": [[("e", "x1")], [("e", "x2")]]}
    return Network(links, movements, C, R, phases)


def make_chain():
    """entry e -> n1 -> internal i -> n2 -> exit x, with an idle phase at
    each node so every movement can be held."""
    links = [Link("e", "entry", end="n1"),
             Link("i", "internal", start="n1", end="n2"),
             Link("x", "exit", start="n2")]
    movements = [("e", "i"), ("i", "x")]
    C = {("e", "i"): 2.0, ("i", "x"): 1.5}
    R = {("e", "i"): 1.0, ("i", "x"): 1.0}
    phases = {"n1": [[("e", "i")], []], "n2": [[("i", "x")], []]}
    return Network(links, movements, C, R, phases)


def make_two_node(rng=None):
    """Two intersections joined by opposing internal links, with entries and
    exits at both; randomized parameters when rng is given."""
    rng = np.random.default_rng(rng)
    links = [Link("e1", "entry", end="n1"), Link("e2", "entry", end="n2"),
             Link("i1", "internal", start="n1", end="n2"),
             Link("i2", "internal", start="n2", end="n1"),
             Link("x1", "exit", start="n1"), Link("x2", "exit", start="n2")]
    movements = [("e1", "i1"), ("e1", "x1"), ("i2", "i1"), ("i2", "x1"),
                 ("e2", "i2"), ("e2", "x2"), ("i1", "i2"), ("i1", "x2")]
    C = {m: float(rng.uniform(1.0, 3.0)) for m in movements}
    splits = {"e1": rng.dirichlet((2, 2)), "i2": rng.dirichlet((2, 2)),
              "e2": rng.dirichlet((2, 2)), "i1": rng.dirichlet((2, 2))}
    R = {("e1", "i1"): splits["e1"][0], ("e1", "x1"): splits["e1"][1],
         ("i2", "i1"): splits["i2"][0], ("i2", "x1"): splits["i2"][1],
         ("e2", "i2"): splits["e2"][0], ("e2", "x2"): splits["e2"][1],
         ("i1", "i2"): splits["i1"][0], ("i1", "x2"): splits["i1"][1]}
    R = {k: float(v) for k, v in R.items()}
    phases = {"n1": [[("e1", "i1"), ("e1", "x1")],
                     [("i2", "i1"), ("i2", "x1")], []],
              "n2": [[("e2", "i2"), ("e2", "x2")],
                     [("i1", "i2"), ("i1", "x2")], []]}
    return Network(links, movements, C, R, phases)


@pytest.fixture(scope="session")
def grid():
    return make_paper_grid()


@pytest.fixture(scope="session")
def grid_lam(grid):
    return np.full(len(grid.entry_links), 0.93)
