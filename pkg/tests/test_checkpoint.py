import os
import threading

import numpy as np
import pytest

from pixelpose.checkpoint import CheckpointError, load_arrays, save_arrays


@pytest.fixture
def sample_arrays(rng):
    return {
        "w": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "b": np.zeros(4, dtype=np.float64),
        "mask": rng.integers(0, 2, size=(8, 8)).astype(np.uint8),
        "ids": np.arange(5, dtype=np.int64),
    }


class TestRoundtrip:
    def test_arrays_and_meta(self, tmp_path, sample_arrays):
        path = tmp_path / "ckpt.bin"
        save_arrays(path, sample_arrays, meta={"train_step": 42, "tag": "x"})
        arrays, meta = load_arrays(path)
        assert meta == {"train_step": 42, "tag": "x"}
        assert set(arrays) == set(sample_arrays)
        for name, a in sample_arrays.items():
            assert arrays[name].dtype == a.dtype
            assert np.array_equal(arrays[name], a)

    def test_empty_meta(self, tmp_path):
        path = tmp_path / "c.bin"
        save_arrays(path, {"x": np.ones(3)})
        _, meta = load_arrays(path)
        assert meta == {}

    def test_overwrite_leaves_no_temp_files(self, tmp_path, sample_arrays):
        path = tmp_path / "c.bin"
        save_arrays(path, sample_arrays)
        save_arrays(path, {"x": np.ones(2)})
        leftovers = [p for p in os.listdir(tmp_path) if p != "c.bin"]
        assert leftovers == []
        arrays, _ = load_arrays(path)
        assert list(arrays) == ["x"]


class TestCorruptionDetection:
    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_arrays(tmp_path / "nope.bin")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_arrays(path)

    def test_truncation(self, tmp_path, sample_arrays):
        path = tmp_path / "c.bin"
        save_arrays(path, sample_arrays)
        blob = path.read_bytes()
        for cut in (8, len(blob) // 2, len(blob) - 3):
            path.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError):
                load_arrays(path)

    def test_payload_bitflip(self, tmp_path, sample_arrays):
        path = tmp_path / "c.bin"
        save_arrays(path, sample_arrays)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_arrays(path)


class TestConcurrentExchange:
    def test_reader_never_sees_partial_write(self, tmp_path, rng):
        """Writer replaces the file 100 times while a reader hammers it; every
        successful read must be complete and self-consistent."""
        path = tmp_path / "c.bin"
        save_arrays(
            path, {"step": np.array([0]), "data": np.zeros(64)}, meta={"train_step": 0}
        )
        stop = threading.Event()
        bad = []

        def reader():
            while not stop.is_set():
                try:
                    arrays, meta = load_arrays(path)
                except CheckpointError:
                    bad.append("corrupt")
                    return
                if int(arrays["step"][0]) != meta.get("train_step"):
                    bad.append("inconsistent")
                    return

        t = threading.Thread(target=reader)
        t.start()
        for step in range(1, 101):
            save_arrays(
                path,
                {"step": np.array([step]), "data": np.full(64, float(step))},
                meta={"train_step": step},
            )
        stop.set()
        t.join()
        assert bad == []
