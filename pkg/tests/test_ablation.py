import csv
import math

import pytest

from busip.ablation import COLLAPSE_EXPECTED, ablation_configs, ablation_grid
from busip.config import RunConfig


def test_grid_has_eleven_rows():
    rows = ablation_configs(RunConfig())
    assert len(rows) == 11
    assert [t for t, _, _ in rows].count("modules") == 6
    assert [t for t, _, _ in rows].count("losses") == 5


def test_pki_never_without_spr():
    for _, _, cfg in ablation_configs(RunConfig()):
        assert cfg.use_spr or not cfg.use_pki


def test_loss_rows_drop_one_term_each():
    rows = [(n, c) for t, n, c in ablation_configs(RunConfig()) if t == "losses"]
    assert rows[0][0] == "full" and all(rows[0][1].losses.values())
    for name, cfg in rows[1:]:
        off = [k for k, v in cfg.losses.items() if not v]
        assert len(off) == 1 and name == f"w/o {off[0].upper()}"


@pytest.fixture(scope="module")
def smoke(small_train, small_test, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablate") / "grid.csv"
    rows = ablation_grid(RunConfig(epochs=2, batch_size=16, seed=0), small_train, small_test, out=out)
    return rows, out


def test_smoke_grid_completes(smoke):
    rows, out = smoke
    assert len(rows) == 11
    for r in rows:
        assert math.isfinite(r["final_total"]) and 0 <= r["accuracy"] <= 1
    with open(out) as fh:
        on_disk = list(csv.DictReader(fh))
    assert [r["name"] for r in on_disk] == [r["name"] for r in rows]
    assert out.with_suffix(".png").stat().st_size > 0


def test_smoke_grid_reports_background_share(smoke):
    rows, _ = smoke
    for r in rows:
        if r["use_spr"]:
            assert 0 <= r["background_fraction"] <= 1
        else:
            assert r["background_fraction"] is None
    assert {r["name"] for r in rows} >= COLLAPSE_EXPECTED
