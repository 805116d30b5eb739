import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from parabugs import compile_graph, fixtures, parse_data, parse_model  # noqa: E402
from parabugs.ehealth import generate_ehealth, model_source  # noqa: E402


def seeds_parts():
    ast = parse_model(fixtures.read("seeds.bug"))
    data = parse_data(fixtures.read("seeds_data.txt"))
    return ast, data


def seeds_inits():
    return [parse_data(fixtures.read(f"seeds_inits{k}.txt")) for k in (1, 2)]


def ehealth_parts(persons=200, regions=8, prescriptions=5000, seed=1):
    envs, truth = generate_ehealth(persons, regions, prescriptions, seed)
    env = envs["id_available"].merged(envs["id_missing"]).merged(envs["n"])
    return parse_model(model_source()), env, truth


@pytest.fixture(scope="session")
def seeds_dag():
    return compile_graph(*seeds_parts())


@pytest.fixture(scope="session")
def ehealth_small():
    ast, env, truth = ehealth_parts()
    return compile_graph(ast, env), truth


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE = []


def report(number, ok, detail=""):
    line = f"criterion {number:>2}: {ok if isinstance(ok, str) else ('PASS' if ok else 'FAIL')}  {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
