import json
import subprocess
import sys

import numpy as np
import pytest

from rotext.cli import main
from rotext.formats import read_det_file
from rotext.geometry import RBoxCenter, box_vertices, rotated_iou
from rotext.tensorio import read_tensor, write_tensor
from synth import gt_lines, random_layout


def _write_levels(tmp_path, image=(64, 64), obj_value=-20.0, cells=()):
    levels = []
    for stride in (4, 8, 16, 32):
        h, w = -(-image[0] // stride), -(-image[1] // stride)
        obj = np.full((1, h, w), obj_value, dtype=np.float32)
        if stride == 8:
            for i, j in cells:
                obj[0, i, j] = 5.0
        reg = np.full((5, h, w), -3.0, dtype=np.float32)
        write_tensor(tmp_path / f"o{stride}.rten", obj)
        write_tensor(tmp_path / f"r{stride}.rten", reg)
        levels.append({"stride": stride, "objectness": f"o{stride}.rten", "regression": f"r{stride}.rten"})
    return levels


def _manifest(tmp_path, levels, **extra):
    m = {"image_size": [64, 64], "levels": levels, **extra}
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(m))
    return p


def test_infer_all_negative(tmp_path):
    man = _manifest(tmp_path, _write_levels(tmp_path))
    out = tmp_path / "det.txt"
    assert main(["infer", str(man), str(out)]) == 0
    assert out.read_text() == ""


def test_infer_stub_outputs_proposals(tmp_path):
    man = _manifest(tmp_path, _write_levels(tmp_path, cells=[(1, 1), (6, 6)]))
    out = tmp_path / "det.txt"
    assert main(["infer", str(man), str(out)]) == 0
    props = tmp_path / "props.rten"
    assert main(["proposals", str(man), str(props)]) == 0
    arr = read_tensor(props)
    dets = read_det_file(out)
    assert len(dets) == arr.shape[0] == 2
    for row in arr:
        box = RBoxCenter(*row[:5])
        assert max(rotated_iou(box, d.box) for d in dets) > 0.99


def test_infer_with_second_stage_files(tmp_path):
    levels = _write_levels(tmp_path, cells=[(1, 1), (6, 6)])
    write_tensor(tmp_path / "reg.rten", np.zeros((2, 5)))
    write_tensor(tmp_path / "cls.rten", np.array([[0.1, 0.9], [0.8, 0.2]]))
    seq = np.zeros((2, 3, 3))
    seq[:, :, 0] = 1.0
    seq[0, 0] = [0, 1, 0]
    seq[1] = [0.2, 0.6, 0.2]
    write_tensor(tmp_path / "rec.rten", seq)
    man = _manifest(
        tmp_path,
        levels,
        second_stage={"regression": "reg.rten", "scores": "cls.rten", "sequences": "rec.rten"},
        alphabet="ab",
    )
    out = tmp_path / "det.txt"
    assert main(["infer", str(man), str(out), "--t-r", "0.99"]) == 0
    dets = read_det_file(out)
    assert len(dets) == 1 and dets[0].transcript == "a" and dets[0].s_d == pytest.approx(0.9)
    # lowering t_r lets the recognition score rescue the second box
    assert main(["infer", str(man), str(out), "--t-r", "0.5"]) == 0
    assert len(read_det_file(out)) == 2


def test_infer_short_second_stage_is_rejected(tmp_path, capsys):
    levels = _write_levels(tmp_path, cells=[(1, 1), (6, 6)])
    write_tensor(tmp_path / "reg.rten", np.zeros((1, 5)))
    write_tensor(tmp_path / "cls.rten", np.ones(1))
    man = _manifest(tmp_path, levels, second_stage={"regression": "reg.rten", "scores": "cls.rten"})
    assert main(["infer", str(man), str(tmp_path / "d.txt")]) == 1
    assert "1 rows for 2 proposals" in capsys.readouterr().err


def test_infer_malformed_tensor_names_file_and_offset(tmp_path, capsys):
    levels = _write_levels(tmp_path)
    raw = (tmp_path / "o8.rten").read_bytes()
    (tmp_path / "o8.rten").write_bytes(raw[:-3])
    man = _manifest(tmp_path, levels)
    assert main(["infer", str(man), str(tmp_path / "d.txt")]) == 1
    err = capsys.readouterr().err
    assert "o8.rten" in err and "byte" in err


def test_infer_missing_file_is_io_error(tmp_path):
    levels = _write_levels(tmp_path)
    (tmp_path / "r16.rten").unlink()
    man = _manifest(tmp_path, levels)
    assert main(["infer", str(man), str(tmp_path / "d.txt")]) == 2


def test_infer_wrong_map_shape(tmp_path):
    levels = _write_levels(tmp_path)
    m = {"image_size": [128, 64], "levels": levels}
    (tmp_path / "m.json").write_text(json.dumps(m))
    assert main(["infer", str(tmp_path / "m.json"), str(tmp_path / "d.txt")]) == 1


def test_gen_targets_empty(tmp_path):
    gt = tmp_path / "gt.txt"
    gt.write_text("")
    out = tmp_path / "maps"
    assert main(["gen-targets", str(gt), str(out), "--image-size", "100", "60"]) == 0
    for name, (h, w) in {"p2": (25, 15), "p3": (13, 8), "p4": (7, 4), "p5": (4, 2)}.items():
        cls = read_tensor(out / f"{name}_cls.rten")
        reg = read_tensor(out / f"{name}_reg.rten")
        assert cls.shape == (h, w) and reg.shape == (5, h, w)
        assert not cls.any() and not reg.any()


def test_gen_targets_bucket(tmp_path):
    gt = tmp_path / "gt.txt"
    gt.write_text("100,100,200,100,200,200,100,200,word\n")
    out = tmp_path / "maps"
    assert main(["gen-targets", str(gt), str(out), "--image-size", "320", "320"]) == 0
    nz = {n: read_tensor(out / f"{n}_cls.rten").sum() for n in ("p2", "p3", "p4", "p5")}
    assert nz["p3"] > 0 and nz["p2"] == nz["p4"] == nz["p5"] == 0


def test_gen_targets_bad_line(tmp_path, capsys):
    gt = tmp_path / "gt.txt"
    gt.write_text("0,0,4,0,4,2,0,2,ok\n1,2,3\n")
    assert main(["gen-targets", str(gt), str(tmp_path / "m"), "--image-size", "32", "32"]) == 1
    assert "gt.txt:2" in capsys.readouterr().err


def test_gen_targets_then_infer_recovers_boxes(tmp_path, rng):
    gts = random_layout(rng)
    gt = tmp_path / "gt.txt"
    gt.write_text(gt_lines(gts))
    out = tmp_path / "maps"
    assert main(["gen-targets", str(gt), str(out), "--image-size", "640", "640", "--logits"]) == 0
    det = tmp_path / "det.txt"
    assert main(["infer", str(out / "manifest.json"), str(det)]) == 0
    dets = read_det_file(det)
    assert len(dets) == len(gts)
    for g in gts:
        best = max(dets, key=lambda d: rotated_iou(d.box, g.box))
        # vertices agree within 1 px (the file rounds to 0.1 px)
        want = np.array(box_vertices(g.box))
        got = np.array(box_vertices(best.box))
        shifts = [np.abs(np.roll(got, k, axis=0) - want).max() for k in range(4)]
        assert min(shifts) < 1.0


def test_infer_is_deterministic(tmp_path, rng):
    gts = random_layout(rng)
    (tmp_path / "gt.txt").write_text(gt_lines(gts))
    out = tmp_path / "maps"
    main(["gen-targets", str(tmp_path / "gt.txt"), str(out), "--image-size", "640", "640", "--logits"])
    outputs = []
    for k, threads in enumerate([1, 8, 1]):
        det = tmp_path / f"det{k}.txt"
        assert main(["infer", str(out / "manifest.json"), str(det), "--threads", str(threads)]) == 0
        outputs.append(det.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_loss_check(capsys):
    assert main(["loss-check", "--trials", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert {ln.split()[0] for ln in lines} == {"dice", "iou_ltrb", "smooth_l1", "cross_entropy", "ctc"}
    assert main(["loss-check", "--trials", "2", "--corrupt", "ctc"]) == 1


def _eval(capsys, *args):
    assert main(["eval", *map(str, args)]) == 0
    return json.loads(capsys.readouterr().out)


def test_eval_command(tmp_path, capsys):
    gt = tmp_path / "gt.txt"
    gt.write_text("0,0,40,0,40,10,0,10,a\n100,100,140,100,140,110,100,110,b\n")
    rep = _eval(capsys, gt, gt)
    assert rep["f_measure"] == 1.0
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert _eval(capsys, empty, gt)["recall"] == 0.0
    near = tmp_path / "near.txt"
    near.write_text("2,0,42,0,42,10,2,10,0.9,0.0,a\n101,100,141,100,141,110,101,110,0.8,0.0,b\n")
    loose = _eval(capsys, near, gt)
    strict = _eval(capsys, near, gt, "--iou", "0.99")
    assert strict["f_measure"] < loose["f_measure"]
    assert set(loose) == {"true_positives", "false_positives", "false_negatives", "precision", "recall", "f_measure"}


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rotext.cli", "loss-check", "--trials", "1"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "ctc" in r.stdout
