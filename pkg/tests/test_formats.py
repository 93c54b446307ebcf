import struct

import numpy as np
import pytest

from vtcompress import FileFormatError, QueryEmbedding
from vtcompress.formats import (
    read_compressed,
    read_features,
    read_query,
    write_compressed,
    write_features,
    write_query,
)
from vtcompress.tokens import CompressedTokenSequence, CompressionStats

from .conftest import random_sequence


def sample_stats():
    return CompressionStats(
        frames_in=10,
        frames_after_temporal=5,
        n_full_res=2,
        tokens_after_query=52,
        tokens_after_spatial=40,
        tokens_final=40,
        theta_effective=0.8,
        fallback_used=False,
        query_tokens=4,
        budget=128,
        temporal_keep_rate=0.5,
        query_reduction_rate=0.35,
        spatial_reduction_rate=0.23076923076923073,
        total_reduction_rate=0.75,
    )


def sample_compressed(rng, n=9, dim=5):
    return CompressedTokenSequence(
        frame_indices=rng.integers(0, 50, n),
        timesteps=rng.uniform(0, 100, n).astype(np.float32),
        grid_rows=rng.integers(0, 12, n).astype(np.int32),
        grid_cols=rng.integers(0, 12, n).astype(np.int32),
        levels=rng.integers(0, 2, n).astype(np.uint8),
        vectors=rng.standard_normal((n, dim)).astype(np.float32),
    )


class TestFeatureFiles:
    def test_round_trip_bitwise(self, rng, tmp_path):
        seq = random_sequence(rng, 7, 3, 4, 6)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        back = read_features(path)
        assert np.array_equal(back.frames, seq.frames)
        assert back.timesteps.tolist() == list(range(7))

    def test_file_size_arithmetic(self, rng, tmp_path):
        seq = random_sequence(rng, 5, 12, 12, 8)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        assert path.stat().st_size == 28 + 5 * 12 * 12 * 8 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lvuf"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_bad_version(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_truncated_payload(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_trailing_bytes(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_non_finite_payload(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        path = tmp_path / "video.lvuf"
        write_features(path, seq)
        raw = bytearray(path.read_bytes())
        raw[28:32] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_zero_frame_header_rejected(self, tmp_path):
        path = tmp_path / "empty.lvuf"
        header = struct.pack("<4sIIIIIB3s", b"LVUF", 1, 0, 2, 2, 2, 0, b"\0\0\0")
        path.write_bytes(header)
        with pytest.raises(FileFormatError):
            read_features(path)


class TestQueryFiles:
    def test_round_trip_bitwise(self, rng, tmp_path):
        query = QueryEmbedding(rng.standard_normal((6, 9)).astype(np.float32))
        path = tmp_path / "q.lvuq"
        write_query(path, query)
        back = read_query(path)
        assert np.array_equal(back.rows, query.rows)

    def test_header_size(self, rng, tmp_path):
        query = QueryEmbedding(rng.standard_normal((3, 4)).astype(np.float32))
        path = tmp_path / "q.lvuq"
        write_query(path, query)
        assert path.stat().st_size == 17 + 3 * 4 * 4

    def test_wrong_magic(self, rng, tmp_path):
        path = tmp_path / "q.lvuq"
        path.write_bytes(b"LVUF" + b"\0" * 20)
        with pytest.raises(FileFormatError):
            read_query(path)


class TestCompressedFiles:
    def test_round_trip_bitwise(self, rng, tmp_path):
        seq = sample_compressed(rng)
        stats = sample_stats()
        path = tmp_path / "out.lvuc"
        write_compressed(path, seq, stats)
        back_seq, back_stats = read_compressed(path)
        assert back_seq.equals(seq)
        assert back_stats == stats

    def test_record_layout_size(self, rng, tmp_path):
        seq = sample_compressed(rng, n=4, dim=3)
        path = tmp_path / "out.lvuc"
        write_compressed(path, seq, sample_stats())
        stats_len = len(
            __import__("json").dumps(sample_stats().to_dict(), sort_keys=True,
                                     separators=(",", ":")).encode()
        )
        assert path.stat().st_size == 16 + 4 * (13 + 3 * 4) + 4 + stats_len

    def test_unknown_level_code(self, rng, tmp_path):
        seq = sample_compressed(rng, n=1, dim=2)
        path = tmp_path / "out.lvuc"
        write_compressed(path, seq, sample_stats())
        raw = bytearray(path.read_bytes())
        raw[16 + 12] = 7  # level byte of the first record
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_compressed(path)

    def test_corrupt_stats_blob(self, rng, tmp_path):
        seq = sample_compressed(rng, n=1, dim=2)
        path = tmp_path / "out.lvuc"
        write_compressed(path, seq, sample_stats())
        path.write_bytes(path.read_bytes()[:-1])  # truncate the json blob
        with pytest.raises(FileFormatError):
            read_compressed(path)

    def test_grid_coordinate_overflow_rejected(self, rng, tmp_path):
        seq = sample_compressed(rng, n=1, dim=2)
        seq.grid_rows[0] = 70000
        with pytest.raises(FileFormatError):
            write_compressed(tmp_path / "out.lvuc", seq, sample_stats())

    def test_empty_token_list_round_trips(self, tmp_path):
        seq = CompressedTokenSequence(
            frame_indices=np.zeros(0, dtype=np.int64),
            timesteps=np.zeros(0, dtype=np.float32),
            grid_rows=np.zeros(0, dtype=np.int32),
            grid_cols=np.zeros(0, dtype=np.int32),
            levels=np.zeros(0, dtype=np.uint8),
            vectors=np.zeros((0, 4), dtype=np.float32),
        )
        path = tmp_path / "empty.lvuc"
        write_compressed(path, seq, sample_stats())
        back, _ = read_compressed(path)
        assert back.total_count == 0 and back.dim == 4


class TestAtomicity:
    def test_no_temp_files_left_behind(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        write_features(tmp_path / "a.lvuf", seq)
        leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
        assert leftovers == []

    def test_write_to_missing_directory_fails_cleanly(self, rng, tmp_path):
        seq = random_sequence(rng, 2, 2, 2, 2)
        with pytest.raises(FileNotFoundError):
            write_features(tmp_path / "nope" / "a.lvuf", seq)
