import json

import numpy as np
import pytest

from makeup_transfer import parsing as P
from makeup_transfer.cli import main
from makeup_transfer.convnet import load_network, save_network
from makeup_transfer.fixtures import self_pair
from makeup_transfer.imageio import read_image, read_mask, write_image
from makeup_transfer.optimizer import read_trace
from makeup_transfer.warp import write_landmarks

from conftest import FIXTURES

INPUTS = ["--before", "before.png", "--reference", "reference.png", "--before-labels", "before_labels.png",
          "--reference-labels", "reference_labels.png", "--before-landmarks", "before_landmarks.json",
          "--reference-landmarks", "reference_landmarks.json"]


def inputs(root):
    return [str(root / a) if a.endswith((".png", ".json")) else a for a in INPUTS]


def test_transfer_writes_consistent_artifacts(tmp_path, capsys):
    code = main(["transfer", *inputs(FIXTURES), "--network", str(FIXTURES / "network.json"),
                 "--iters", "20", "--out-dir", str(tmp_path)])
    assert code == 0
    manifest = json.loads((tmp_path / "result_manifest.json").read_text())
    trace = read_trace(tmp_path / "result_trace.tsv")
    assert len(trace) == 21
    assert manifest["final_losses"] == trace[-1]
    assert manifest["iterations"] == 20 and manifest["config"]["lambda_l"] == 500
    assert read_image(tmp_path / "result.png").shape == (3, 32, 32)
    assert "final loss" in capsys.readouterr().out


def test_transfer_replay_is_bit_exact(tmp_path):
    main(["transfer", *inputs(FIXTURES), "--iters", "10", "--out-dir", str(tmp_path / "a")])
    code = main(["transfer", "--replay", str(tmp_path / "a" / "result_manifest.json"), "--out-dir", str(tmp_path / "b")])
    assert code == 0
    assert (tmp_path / "a" / "result.png").read_bytes() == (tmp_path / "b" / "result.png").read_bytes()


def test_self_transfer_png_identical(tmp_path):
    p = self_pair()
    write_image(p.before, tmp_path / "before.png")
    write_image(p.reference, tmp_path / "reference.png")
    P.write_labelmap(p.before_labels, tmp_path / "before_labels.png")
    P.write_labelmap(p.reference_labels, tmp_path / "reference_labels.png")
    write_landmarks(p.before_landmarks, tmp_path / "before_landmarks.json")
    write_landmarks(p.reference_landmarks, tmp_path / "reference_landmarks.json")
    assert main(["transfer", *inputs(tmp_path), "--tv-weight", "0", "--iters", "10",
                 "--out-dir", str(tmp_path / "out")]) == 0
    assert np.array_equal(read_image(tmp_path / "out" / "result.png"), read_image(tmp_path / "before.png"))


def test_missing_labelmap_names_file(tmp_path, capsys):
    args = inputs(FIXTURES)
    args[args.index("--before-labels") + 1] = str(tmp_path / "nope.png")
    assert main(["transfer", *args, "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error[input]:") and "nope.png" in err and "\n" not in err


def test_sweep(tmp_path):
    assert main(["sweep", *inputs(FIXTURES), "--param", "lambda_e", "--values", "10,40,160", "--iters", "60",
                 "--out-dir", str(tmp_path)]) == 0
    rows = [line.split("\t") for line in (tmp_path / "summary.tsv").read_text().splitlines()[1:]]
    assert [r[1] for r in rows] == ["lambda_e_10.png", "lambda_e_40.png", "lambda_e_160.png"]
    terms = [float(r[2]) for r in rows]
    assert all(b <= a for a, b in zip(terms, terms[1:]))
    assert all((tmp_path / r[1]).is_file() for r in rows)


def test_sweep_single_value_matches_transfer(tmp_path):
    main(["sweep", *inputs(FIXTURES), "--param", "lambda_l", "--values", "500", "--iters", "10",
          "--out-dir", str(tmp_path / "s")])
    main(["transfer", *inputs(FIXTURES), "--iters", "10", "--out-dir", str(tmp_path / "t")])
    assert (tmp_path / "s" / "lambda_l_500.png").read_bytes() == (tmp_path / "t" / "result.png").read_bytes()


def test_sweep_descending_rejected(tmp_path, capsys):
    assert main(["sweep", *inputs(FIXTURES), "--param", "lambda_e", "--values", "16,4"]) == 2
    assert "ascending" in capsys.readouterr().err


def test_recommend(capsys):
    index = FIXTURES / "index.jsonl"
    assert main(["recommend", "--index", str(index), "--query-id", "ref005", "-k", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "1\tref005\t0.0" and len(lines) == 3
    assert main(["recommend", "--index", str(index), "--query-id", "ref005", "-k", "99"]) == 2


def test_recommend_matches_oracle(tmp_path, capsys):
    from makeup_transfer.recommend import load_index
    index = load_index(FIXTURES / "index.jsonl")
    q = index.vectors[0] + 0.1
    (tmp_path / "q.json").write_text(json.dumps({"embedding": q.tolist()}))
    main(["recommend", "--index", str(FIXTURES / "index.jsonl"), "--query", str(tmp_path / "q.json"), "-k", "16"])
    got = [line.split("\t")[1] for line in capsys.readouterr().out.splitlines()]
    d = np.linalg.norm(index.vectors - q, axis=1)
    assert got == [index.ids[i] for i in sorted(range(16), key=lambda i: (d[i], index.ids[i]))]


def test_parse_tools(tmp_path, capsys, rng):
    conf = P.softmax(rng.normal(size=(P.NUM_LABELS, 4, 6)))
    sym = P.symmetrize_confidence(conf)
    np.save(tmp_path / "sym.npy", sym)
    assert main(["parse", "symmetrize", "--conf", str(tmp_path / "sym.npy"), "--output", str(tmp_path / "o.npy")]) == 0
    np.testing.assert_allclose(np.load(tmp_path / "o.npy"), sym, atol=1e-15)

    truth = rng.integers(0, P.NUM_LABELS, size=(4, 6)).astype(np.uint8)
    P.write_labelmap(truth, tmp_path / "t.png")
    base = ["parse", "eval-loss", "--conf", str(tmp_path / "sym.npy"), "--labels", str(tmp_path / "t.png")]
    main(base + ["--unweighted"])
    unweighted = float(capsys.readouterr().out.split()[1])
    main(base + ["--weights", ",".join(["1"] * P.NUM_LABELS)])
    assert float(capsys.readouterr().out.split()[1]) == unweighted
    main(base)
    weighted = float(capsys.readouterr().out.split()[1])
    w = P.default_label_weights()
    oracle = -sum(w[truth[i, j]] * np.log(sym[truth[i, j], i, j]) for i in range(4) for j in range(6))
    assert abs(weighted - oracle) < 1e-10

    assert main(["parse", "to-mask", "--labels", str(FIXTURES / "before_labels.png"), "--ids", "7,8",
                 "--output", str(tmp_path / "lips.png")]) == 0
    labels = P.read_labelmap(FIXTURES / "before_labels.png")
    assert np.array_equal(read_mask(tmp_path / "lips.png"), np.isin(labels, [7, 8]))
    assert main(["parse", "to-mask", "--labels", str(FIXTURES / "before_labels.png"), "--ids", "12",
                 "--output", str(tmp_path / "x.png")]) == 2


def test_selfcheck(tmp_path, capsys, small_net):
    assert main(["selfcheck"]) == 0
    assert capsys.readouterr().out.count("PASS") == 8
    path = tmp_path / "net.json"
    save_network(small_net, path)
    doc = json.loads(path.read_text())
    doc["weights"][0]["weight"] = (np.array(doc["weights"][0]["weight"]) * 3.1 + 0.2).tolist()
    path.write_text(json.dumps(doc))
    load_network(path)
    assert main(["selfcheck", "--network", str(path)]) == 0
    path.write_text(path.read_text()[:200])
    assert main(["selfcheck", "--network", str(path)]) == 2
    assert capsys.readouterr().err.startswith("error[input]")


def test_usage_errors(capsys):
    assert main(["transfer", "--iters", "nope"]) == 2
    assert main(["bogus"]) == 2
    assert main(["transfer", "--lambda-e", "-1", *inputs(FIXTURES)]) == 2
    assert all(line.startswith("error[") for line in capsys.readouterr().err.splitlines())


@pytest.mark.parametrize("argv", [
    ["make-fixture", "--size", "32", "--seed", "0"],
    ["init-network", "--template", "small"],
])
def test_generators_deterministic(tmp_path, argv):
    def run(sub):
        out = tmp_path / sub
        if argv[0] == "make-fixture":
            main([*argv, "--out-dir", str(out)])
        else:
            out.mkdir()
            main([*argv, "--output", str(out / "network.json")])
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert run("a") == run("b")
