import shutil
from pathlib import Path

import pytest
import yaml

from qrsim import document as docs
from qrsim import protocols as P
from qrsim.cli import main

NETWORKS = Path(__file__).resolve().parent.parent / "networks"

SMALL = """\
format: qrsim-network/1
alphabet: {symbols: '01', max_len: 1, max_index: 2}
machines:
- name: X
  ports: ['clk<?', p!, p<!]
  cports: CPORTS
  qstates: ['', '0', '1']
  cstates: ['1', '11', f]
  fin: [f]
  delta:
    program:
    - prepare: {reg: c, label: f}
- name: M
  ports: ['p?']
  qstates: ['']
  cstates: ['1', '11', f]
  fin: [f]
  delta: {program: []}
collections:
  pair: [X, M]
"""


def write(tmp_path, text, name="net.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def out_yaml(capsys):
    return yaml.safe_load(capsys.readouterr().out)


def test_validate_ok(capsys):
    assert main(["validate", str(NETWORKS / "ping.yaml")]) == 0
    assert capsys.readouterr().out.startswith("ok: 2 machines")


def test_validate_small_document(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("CPORTS", "['clk<?', p!, p<!]"))
    assert main(["validate", path]) == 0


def test_quantum_clock_port_fails_validation(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("CPORTS", "['clk<?', p!]"))
    assert main(["validate", path]) == 1
    assert "all clock-ports are classical" in capsys.readouterr().out


def test_dangling_reference_fails(tmp_path, capsys):
    text = SMALL.replace("CPORTS", "['clk<?', p!, p<!]").replace("[X, M]", "[X, Z]")
    path = write(tmp_path, text)
    assert main(["validate", path]) == 1
    assert "Z" in capsys.readouterr().err


def test_wrong_format_header_fails(tmp_path):
    path = write(tmp_path, "format: something-else/9\n")
    assert main(["validate", path]) == 1


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.yaml")]) == 3
    assert "cannot read" in capsys.readouterr().err


def test_unwritable_output_is_io_error(tmp_path):
    assert main(["run", str(NETWORKS / "ping.yaml"), "ping", "--out",
                 str(tmp_path / "no" / "such" / "dir.yaml")]) == 3


def test_run_and_view(tmp_path, capsys):
    run_path = tmp_path / "run.yaml"
    assert main(["run", str(NETWORKS / "coin.yaml"), "coin", "--out", str(run_path)]) == 0
    data = yaml.safe_load(run_path.read_text())
    assert data["format"] == "qrsim-run/1"
    assert sorted(t["probability"] for t in data["traces"]) == pytest.approx([0.5, 0.5])
    assert main(["view", str(run_path), "P"]) == 0
    v = out_yaml(capsys)
    assert v["format"] == "qrsim-view/1"
    assert sorted(len(x["records"]) for x in v["views"]) == [0, 1]


def test_view_rejects_network_document(capsys):
    assert main(["view", str(NETWORKS / "ping.yaml"), "X"]) == 1


def test_run_unknown_collection(capsys):
    assert main(["run", str(NETWORKS / "ping.yaml"), "nope"]) == 1


def test_model_error_exit_code(tmp_path, capsys):
    # X writes to p twice without scheduling it; a one-slot queue overflows
    def rule(s, i):
        return {"1": [(1.0, "a", {"p!": "0"})], "a": [(1.0, "f", {"p!": "1"})]}.get(s)
    x = P.table_machine("X", ["clk<?", "p!"], ["a", "f"], ["f"], rule)
    m = P.table_machine("M", ["p?", "p<!"], ["f"], ["f"], lambda s, i: None)
    path = write(tmp_path, docs.serialize(docs.build(collections={"pair": [x, m]})))
    assert main(["run", path, "pair", "--queue-cap", "2"]) == 0
    assert main(["run", path, "pair", "--queue-cap", "1"]) == 2
    assert "model error" in capsys.readouterr().err


def test_malformed_claim_is_a_validation_failure(tmp_path, capsys):
    text = (NETWORKS / "plaintext.yaml").read_text().replace("simulator: Sim", "sim: Sim")
    assert main(["validate", write(tmp_path, text)]) == 1
    assert "simulator" in capsys.readouterr().err


def test_compare_negative_control(capsys):
    assert main(["compare", str(NETWORKS / "plaintext.yaml"), "plaintext-secure",
                 "--queue-cap", "2"]) == 1
    data = out_yaml(capsys)
    assert data["passed"] is False and data["verdicts"][0]["per_k"][0]["sd"] == pytest.approx(1.0)


def test_compare_holds_for_one_time_pad(capsys):
    assert main(["compare", str(NETWORKS / "otp.yaml"), "otp-secure", "--queue-cap", "2",
                 "--ks", "1,2"]) == 0
    data = out_yaml(capsys)
    assert [e["k"] for e in data["verdicts"][0]["per_k"]] == [1, 2]


def test_compare_unknown_claim():
    assert main(["compare", str(NETWORKS / "ping.yaml"), "nothing"]) == 1


def test_compose_adds_structure(tmp_path, capsys):
    src = tmp_path / "otp.yaml"
    shutil.copy(NETWORKS / "otp.yaml", src)
    out = tmp_path / "composed.yaml"
    assert main(["compose", str(src), "wrapper", "otp", "--name", "again", "--out", str(out)]) == 0
    doc = docs.parse(out.read_text())
    assert doc.structures["again"].service == doc.structures["wrapped-otp"].service
    assert main(["compose", str(src), "otp", "channel"]) == 1


def test_combine_and_canonise(tmp_path, capsys):
    combined = tmp_path / "combined.yaml"
    assert main(["combine", str(NETWORKS / "coin.yaml"), "P", "R", "--out", str(combined)]) == 0
    doc = docs.parse(combined.read_text())
    assert "P+R" in doc.machines
    canon = tmp_path / "canon.yaml"
    assert main(["canonise", str(NETWORKS / "coin.yaml"), "X", "--out", str(canon)]) == 0
    text = canon.read_text()
    assert "canonised" in text
    assert main(["run", str(canon), "coin"]) == 0
    assert len(out_yaml(capsys)["traces"]) == 2


@pytest.mark.parametrize("name", ["ping.yaml", "coin.yaml", "plaintext.yaml", "teleport.yaml"])
def test_documents_round_trip_byte_stable(name):
    text = (NETWORKS / name).read_text()
    once = docs.serialize(docs.parse(text))
    assert once == text
    assert docs.serialize(docs.parse(once)) == once


def test_built_document_round_trip(tmp_path):
    doc = docs.build(collections={"coin": P.coin_flip()})
    text = docs.serialize(doc)
    again = docs.parse(text)
    assert docs.serialize(again) == text
    assert set(again.machines) == {"X", "P", "R"}
