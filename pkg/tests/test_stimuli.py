import numpy as np

from metamerlab.image import ImageBuffer, save_png
from metamerlab.stimuli import ingest_stimulus_set, scan_for_duplicates


def build_fixture(root, classes=9, images=5, seeds=(0, 1),
                  families=("standard", "robust", "texform"), skip_originals=()):
    rng = np.random.default_rng(0)
    for c in range(classes):
        for i in range(images):
            d = root / f"class{c}" / f"img{i:02d}"
            if (c, i) not in skip_originals:
                save_png(ImageBuffer(rng.random((8, 8))), d / "original.png")
            for fam in families:
                for s in seeds:
                    save_png(ImageBuffer(rng.random((8, 8))),
                             d / f"{fam}_seed{s}.png")


def test_empty_directory_gives_empty_set(tmp_path):
    sset = ingest_stimulus_set(tmp_path)
    assert len(sset) == 0
    assert sset.manifest()["classes"] == 0


def test_fixture_counts(tmp_path):
    build_fixture(tmp_path)
    sset = ingest_stimulus_set(tmp_path)
    manifest = sset.manifest()
    assert manifest["classes"] == 9
    assert set(manifest["images_per_class"].values()) == {5}
    assert manifest["seeds"] == [0, 1]
    assert sorted(manifest["families"]) == ["robust", "standard", "texform"]
    assert len(sset) == 9 * 5 * (1 + 3 * 2)


def test_missing_originals_itemized(tmp_path):
    skip = {(0, 0), (1, 2), (3, 4), (5, 1), (8, 0)}
    build_fixture(tmp_path, skip_originals=skip)
    sset = ingest_stimulus_set(tmp_path)
    assert len(sset.report.missing_originals) == 5
    flagged = {(c, i) for c, i in
               ((int(cn[5:]), int(iid[3:]))
                for cn, iid in sset.report.missing_originals)}
    assert flagged == skip


def test_malformed_files_itemized_not_fatal(tmp_path):
    build_fixture(tmp_path, classes=1, images=2)
    stray = tmp_path / "class0" / "img00" / "notes.txt"
    stray.write_text("lab notes")
    bad = tmp_path / "class0" / "img01" / "robust_seedX.png"
    bad.write_bytes(b"not a real file")
    sset = ingest_stimulus_set(tmp_path)
    assert len(sset.report.malformed) == 2
    assert len(sset) == 2 * (1 + 6)   # everything well-formed still ingested


def test_lookup_and_seeds(tmp_path):
    build_fixture(tmp_path, classes=2, images=2)
    sset = ingest_stimulus_set(tmp_path)
    entry = sset.get("class0", "img01", "robust", 1)
    assert entry is not None and entry.path.exists()
    assert sset.seeds("class0", "img01", "texform") == [0, 1]
    assert sset.get("class0", "img01", "robust", 7) is None


def test_duplicate_scan(tmp_path):
    build_fixture(tmp_path, classes=1, images=3, families=("texform",))
    # make one image's two seeds byte-identical
    src = tmp_path / "class0" / "img00" / "texform_seed0.png"
    dst = tmp_path / "class0" / "img00" / "texform_seed1.png"
    dst.write_bytes(src.read_bytes())
    sset = ingest_stimulus_set(tmp_path)
    scan = scan_for_duplicates(sset)
    assert len(scan["flagged"]) == 1
    assert scan["flagged"][0]["image_id"] == "img00"
    assert scan["stimuli_involved"] == 2
    assert scan["stimuli_scanned"] == 6
    assert scan["percent_label"] == "33%"


def test_nonexistent_root(tmp_path):
    sset = ingest_stimulus_set(tmp_path / "missing")
    assert len(sset) == 0
