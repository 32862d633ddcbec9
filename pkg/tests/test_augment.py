import csv
import hashlib

import numpy as np
import pytest
from PIL import Image

from conftest import make_tree, one_face, output_files
from maskface.augment import (
    MANIFEST_COLUMNS,
    AugmentationManifest,
    FaceRecord,
    MaskPolicy,
    SplitMix64,
    Status,
    draw_face,
    mask_dataset,
    mask_image,
    masked_name,
    mix64,
    path_hash,
    stream_seed,
)
from maskface.errors import ValidationError
from maskface.landmark import synthetic_face
from maskface.maskwarp import MaskType

M64 = (1 << 64) - 1


def splitmix_oracle(seed, n):
    """Textbook SplitMix64, written out independently."""
    out, state = [], seed
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) % (1 << 64)
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % (1 << 64)
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % (1 << 64)
        out.append(z ^ (z >> 31))
    return out


class TestSplitMix64:
    def test_reference_vectors(self):
        rng = SplitMix64(1234567)
        assert [rng.next_u64() for _ in range(5)] == [
            6457827717110365317,
            3203168211198807973,
            9817491932198370423,
            4593380528125082431,
            16408922859458223821,
        ]
        assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF

    def test_matches_oracle(self):
        for seed in (1, 42, M64, 2**63):
            rng = SplitMix64(seed)
            assert [rng.next_u64() for _ in range(20)] == splitmix_oracle(seed, 20)

    def test_below_is_multiply_high(self):
        rng, raw = SplitMix64(99), splitmix_oracle(99, 50)
        assert [rng.below(7) for _ in range(50)] == [(x * 7) >> 64 for x in raw]

    def test_uniform_in_unit_interval(self):
        rng = SplitMix64(5)
        values = [rng.uniform() for _ in range(1000)]
        assert min(values) >= 0.0 and max(values) < 1.0

    def test_stream_seed_uses_path_hash(self):
        digest = hashlib.blake2b(b"a/b.png", digest_size=8).digest()
        assert path_hash("a/b.png") == int.from_bytes(digest, "little")
        assert stream_seed(7, "a/b.png") == mix64(7 ^ path_hash("a/b.png"))
        assert stream_seed(7, "a/b.png") != stream_seed(7, "a/c.png")


class TestPolicy:
    def test_defaults(self):
        p = MaskPolicy()
        assert set(p.candidate_types) == {MaskType.CLOTH, MaskType.SURGICAL_GREEN, MaskType.SURGICAL_BLUE, MaskType.N95}
        assert p.keep_original and p.pattern_probability == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [{"candidate_types": ()}, {"pattern_probability": 1.5}, {"pattern_probability": -0.1}, {"seed": -1},
         {"seed": 1 << 64}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            MaskPolicy(**kwargs)

    def test_type_names_parsed(self):
        assert MaskPolicy(candidate_types=("n95", "surgical-blue")).candidate_types == (
            MaskType.N95,
            MaskType.SURGICAL_BLUE,
        )


class TestDraws:
    def test_single_candidate(self):
        policy = MaskPolicy(candidate_types=(MaskType.N95,))
        rng = SplitMix64(3)
        assert all(draw_face(rng, policy, ["p"]).mask_type is MaskType.N95 for _ in range(200))

    def test_two_faces_seed_42_replay(self, lib):
        policy = MaskPolicy()
        image = np.full((200, 400, 3), 120, np.uint8)
        faces = [synthetic_face((100, 100), 55), synthetic_face((300, 100), 55, roll_deg=10)]
        _, records = mask_image(image, faces, lib, policy, SplitMix64(42))
        raw = splitmix_oracle(42, 6)
        # three draws per face: type, pattern gate, pattern index
        expected = [policy.candidate_types[(raw[0] * 4) >> 64], policy.candidate_types[(raw[3] * 4) >> 64]]
        assert [r.mask_type for r in records] == expected
        assert expected == [MaskType.SURGICAL_BLUE, MaskType.SURGICAL_GREEN]

    def test_uniform_over_candidates(self):
        policy = MaskPolicy()
        n = 12000
        counts = {t: 0 for t in policy.candidate_types}
        for i in range(n):
            rng = SplitMix64(stream_seed(2024, f"img_{i:05d}.png"))
            counts[draw_face(rng, policy, ["a", "b"]).mask_type] += 1
        freqs = np.array(list(counts.values())) / n
        assert np.all(np.abs(freqs - 0.25) <= 0.02)
        chi2 = float((((np.array(list(counts.values())) - n / 4) ** 2) / (n / 4)).sum())
        assert chi2 < 11.345  # chi-square critical value, 3 dof, p = 0.01

    def test_pattern_probability_extremes(self):
        never, always = MaskPolicy(pattern_probability=0.0), MaskPolicy(pattern_probability=1.0)
        names = ["p1", "p2", "p3"]
        rng = SplitMix64(1)
        assert all(draw_face(rng, never, names).pattern is None for _ in range(100))
        assert all(draw_face(rng, always, names).pattern in names for _ in range(100))


class TestMaskImage:
    def test_zero_faces(self, lib):
        image = np.zeros((10, 10, 3), np.uint8)
        out, records = mask_image(image, [], lib, MaskPolicy(), SplitMix64(0))
        assert out is image
        assert records == [FaceRecord(Status.SKIPPED_NO_FACE)]

    def test_every_face_masked(self, lib):
        image = np.full((200, 600, 3), 120, np.uint8)
        faces = [synthetic_face((100 + 200 * k, 100), 50, roll_deg=r) for k, r in enumerate((-30, 0, 30))]
        out, records = mask_image(image, faces, lib, MaskPolicy(), SplitMix64(11))
        assert [r.status for r in records] == [Status.MASKED] * 3
        assert [r.tilt_bin for r in records] == ["LEFT", "FRONT", "RIGHT"]
        for k in range(3):
            assert (out[:, 200 * k:200 * (k + 1)] != image[:, 200 * k:200 * (k + 1)]).any()

    def test_poor_fit_skipped_and_unmasked(self, lib):
        image = np.full((200, 200, 3), 120, np.uint8)
        face = synthetic_face((100, 100), 50, jitter=4.0, rng=np.random.default_rng(0))
        policy = MaskPolicy(max_residual_px=0.5)
        out, records = mask_image(image, [face], lib, policy, SplitMix64(0))
        assert records[0].status is Status.SKIPPED_POOR_FIT
        assert records[0].fit_residual_px > 0.5
        np.testing.assert_array_equal(out, image)

    def test_pattern_applied(self, lib):
        image = np.full((200, 200, 3), 120, np.uint8)
        policy = MaskPolicy(pattern_probability=1.0)
        out_p, rec = mask_image(image, [one_face()], lib, policy, SplitMix64(5))
        assert rec[0].pattern in lib.patterns


class TestMaskedName:
    def test_plain_and_pattern(self):
        rec = FaceRecord(Status.MASKED, MaskType.N95)
        assert masked_name("face", ".png", [rec]) == "face_n95.png"
        rec = FaceRecord(Status.MASKED, MaskType.CLOTH, "dots_1")
        assert masked_name("face", ".jpg", [rec, rec]) == "face_cloth_dots_1.jpg"

    def test_mixed(self):
        recs = [FaceRecord(Status.MASKED, MaskType.N95), FaceRecord(Status.MASKED, MaskType.GAS)]
        assert masked_name("g", ".png", recs) == "g_mixed.png"


class TestMaskDataset:
    def test_ten_images_twenty_outputs(self, lib, tmp_path):
        make_tree(tmp_path / "in", 10)
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=1), tmp_path / "out")
        assert len(m.rows) == 20
        assert len(output_files(tmp_path / "out")) == 20
        assert m.counts()["MASKED"] == 10 and m.counts()["ORIGINAL_KEPT"] == 10

    def test_twice_byte_identical(self, lib, tmp_path):
        make_tree(tmp_path / "in", 6)
        for name in ("a", "b"):
            mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=7), tmp_path / name)
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
        assert output_files(a) == output_files(b)
        for rel in output_files(a):
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_landmark_less_images_and_growth_ratio(self, lib, tmp_path):
        no_face = {0, 12, 24, 36, 48, 60, 72, 84}
        make_tree(tmp_path / "in", 100, no_face=no_face)
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=3), tmp_path / "out")
        counts = m.counts()
        assert counts["SKIPPED_NO_FACE"] == 8
        assert counts["MASKED"] == 92
        assert len(output_files(tmp_path / "out")) / 100 == pytest.approx(1.92)

    def test_manifest_contract(self, lib, tmp_path):
        make_tree(tmp_path / "in", 7, no_face={2})
        out = tmp_path / "out"
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=9), out)
        raw = (out / "manifest.csv").read_bytes()
        assert b"\r\n" not in raw
        with open(out / "manifest.csv", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == MANIFEST_COLUMNS
        sources = [r[0] for r in rows[1:]]
        assert sources == sorted(sources)
        assert set(sources) == {f"id{i % 3}/img{i:03d}.png" for i in range(7)}
        for row in m.rows:
            if row.status is Status.MASKED:
                assert (out / row.output_path).is_file()
        assert output_files(out) == m.output_paths()
        assert not list(out.glob("*.partial"))
        assert AugmentationManifest.read(out / "manifest.csv").rows == m.rows

    def test_without_originals(self, lib, tmp_path):
        make_tree(tmp_path / "in", 4)
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(keep_original=False), tmp_path / "out")
        assert m.counts()["ORIGINAL_KEPT"] == 0
        assert len(output_files(tmp_path / "out")) == 4

    def test_originals_copied_unmodified(self, lib, tmp_path):
        make_tree(tmp_path / "in", 3)
        mask_dataset(tmp_path / "in", lib, MaskPolicy(), tmp_path / "out")
        for p in (tmp_path / "in").rglob("*.png"):
            rel = p.relative_to(tmp_path / "in")
            assert (tmp_path / "out" / rel).read_bytes() == p.read_bytes()

    def test_unreadable_image_recorded(self, lib, tmp_path):
        make_tree(tmp_path / "in", 3)
        (tmp_path / "in" / "broken.png").write_bytes(b"not an image")
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(), tmp_path / "out")
        broken = [r for r in m.rows if r.source_path == "broken.png"]
        assert [r.status for r in broken] == [Status.SKIPPED_UNREADABLE]
        assert m.counts()["MASKED"] == 3

    def test_multi_face_image_rows(self, lib, tmp_path):
        make_tree(tmp_path / "in", 2, faces_per_image=3)
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=4), tmp_path / "out")
        assert m.counts()["MASKED"] == 6
        assert len({r.output_path for r in m.rows if r.status is Status.MASKED}) == 2

    def test_detector_hook(self, lib, tmp_path):
        root = tmp_path / "in"
        root.mkdir()
        Image.fromarray(np.full((200, 200, 3), 77, np.uint8)).save(root / "x.png")
        m = mask_dataset(root, lib, MaskPolicy(), tmp_path / "out", detector=lambda img: [one_face()])
        assert m.counts()["MASKED"] == 1

    def test_output_dir_is_a_file(self, lib, tmp_path):
        make_tree(tmp_path / "in", 1)
        (tmp_path / "out").write_text("x")
        with pytest.raises(OSError):
            mask_dataset(tmp_path / "in", lib, MaskPolicy(), tmp_path / "out")

    def test_missing_root(self, lib, tmp_path):
        with pytest.raises(FileNotFoundError):
            mask_dataset(tmp_path / "nope", lib, MaskPolicy(), tmp_path / "out")

    def test_seed_recorded_per_image(self, lib, tmp_path):
        make_tree(tmp_path / "in", 2)
        m = mask_dataset(tmp_path / "in", lib, MaskPolicy(seed=7), tmp_path / "out")
        for row in m.rows:
            assert row.seed_used == stream_seed(7, row.source_path)
