import json
from pathlib import Path

import pytest

from d2d_coop.__main__ import VERIFY_FILE, main
from d2d_coop.db import ResultStore, RunStatus
from d2d_coop.results import (AGGREGATE_FILE, AGGREGATE_HEADER, CONFIG_FILE, DIAGNOSTICS_DIR,
                               SCENARIO_FILE)
from d2d_coop.utils.file import FileUtils
from d2d_coop.utils.tabular import load_matching, load_payoff_matrix

SMALL_RUN = """\
num_cu = 4
num_d2d = 10, 20
schemes = auction, random
samples_per_pair = 300
subframes = 50
n_scenarios = 2
seed = 11
"""


@pytest.fixture
def config_path(tmp_path: Path) -> str:
    path = tmp_path / "small.conf"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return str(path)


def test_run_writes_aggregate_rows(tmp_path, config_path):
    out = tmp_path / "out"
    assert main(["run", "--config", config_path, "--output-dir", str(out)]) == 0

    header, rows = FileUtils.read_csv(str(out / AGGREGATE_FILE))
    assert tuple(header) == AGGREGATE_HEADER
    assert [(row[0], row[1]) for row in rows] == [("10", "auction"), ("10", "random"),
                                                  ("20", "auction"), ("20", "random")]
    _, scenario_rows = FileUtils.read_csv(str(out / SCENARIO_FILE))
    assert len(scenario_rows) == 2 * 2 * 2
    assert "num_d2d = 10, 20\n" in (out / CONFIG_FILE).read_text(encoding="utf-8")
    assert b"\r\n" not in (out / AGGREGATE_FILE).read_bytes()
    assert not (out / DIAGNOSTICS_DIR).exists()


def test_run_is_byte_identical(tmp_path, config_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", config_path, "--output-dir", str(first)]) == 0
    assert main(["run", "--config", config_path, "--output-dir", str(second), "--workers", "2"]) == 0
    for name in (AGGREGATE_FILE, SCENARIO_FILE):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_run_records_result_store(tmp_path, config_path):
    out = tmp_path / "out"
    assert main(["run", "--config", config_path, "--output-dir", str(out), "--seed", "12"]) == 0
    store = ResultStore(str(out / "results.db"))
    try:
        runs = store.list_runs()
        assert len(runs) == 1
        assert runs[0].status == RunStatus.COMPLETED
        assert runs[0].master_seed == 12
        assert len(store.get_aggregate_rows(runs[0].id)) == 4
        assert len(store.get_scenario_rows(runs[0].id)) == 8
    finally:
        store.close()


def test_run_dumps_diagnostics(tmp_path, config_path):
    out = tmp_path / "out"
    assert main(["run", "--config", config_path, "--output-dir", str(out), "--dump-diagnostics"]) == 0
    directory = out / DIAGNOSTICS_DIR / "N20"
    payoffs = load_payoff_matrix((directory / "scenario_0001_payoffs.txt").read_text(encoding="utf-8"))
    assert payoffs.shape == (4, 20)
    matching = load_matching((directory / "scenario_0001_auction.txt").read_text(encoding="utf-8"))
    assert all(payoffs.acceptable(m, n) for m, n in matching.pairs())
    assert (directory / "scenario_0001_random.txt").is_file()


def test_run_config_error_exit_code(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("r_th = -1\n", encoding="utf-8")
    assert main(["run", "--config", str(path), "--output-dir", str(tmp_path / "out")]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.conf")]) == 2


def test_verify_quick_report(tmp_path, config_path):
    out = tmp_path / "verify"
    assert main(["verify", "--quick", "--config", config_path, "--output-dir", str(out)]) == 0
    report = json.loads((out / VERIFY_FILE).read_text(encoding="utf-8"))
    criteria = {item["name"]: item for item in report["criteria"]}
    assert set(criteria) == {"policy_lp_oracle_equivalence", "constraint_equality", "epsilon_stability",
                             "near_optimality_bound", "certifier_fault_injection", "determinism"}
    fault = criteria["certifier_fault_injection"]
    assert fault["passed"]
    assert fault["measured"]["violation"] == "d2d"
    assert fault["measured"]["witness"] == [fault["measured"]["perturbed_pair"][1]]
    assert criteria["epsilon_stability"]["passed"]
    assert criteria["policy_lp_oracle_equivalence"]["passed"]
    assert criteria["determinism"]["passed"]
