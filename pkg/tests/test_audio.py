"""Front-end: WAV ingestion, framing, spectra, Mel filterbank, deltas, cache."""

import numpy as np
import pytest
import scipy.io.wavfile

from pacn import audio
from pacn.errors import IngestionError, UsageError


class TestReadWav:
    def test_int16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        scipy.io.wavfile.write(path, 44100, np.full(44100, 16384, dtype=np.int16))
        clip = audio.read_wav(path)
        assert clip.samples[0] == pytest.approx(0.5)

    def test_stereo_averaged(self, tmp_path):
        path = tmp_path / "st.wav"
        data = np.zeros((44100, 2), dtype=np.float32)
        data[:, 0] = 0.2
        data[:, 1] = 0.4
        scipy.io.wavfile.write(path, 44100, data)
        clip = audio.read_wav(path)
        np.testing.assert_allclose(clip.samples, 0.3, rtol=1e-6)

    def test_short_clip_padded_with_trailing_zeros(self, tmp_path):
        path = tmp_path / "half.wav"
        scipy.io.wavfile.write(path, 44100,
                               np.ones(22050, dtype=np.float32) * 0.25)
        clip = audio.read_wav(path)
        assert len(clip.samples) == 44100
        np.testing.assert_allclose(clip.samples[:22050], 0.25, rtol=1e-6)
        assert (clip.samples[22050:] == 0).all()

    def test_long_clip_center_cropped(self, tmp_path):
        path = tmp_path / "long.wav"
        x = np.zeros(88200, dtype=np.float32)
        x[44100] = 1.0   # center of the file
        scipy.io.wavfile.write(path, 44100, x)
        clip = audio.read_wav(path)
        assert len(clip.samples) == 44100
        assert clip.samples[44100 - 22050] == pytest.approx(1.0)

    def test_resampled_to_44100(self, tmp_path):
        path = tmp_path / "lo.wav"
        scipy.io.wavfile.write(path, 22050, np.zeros(22050, dtype=np.float32))
        clip = audio.read_wav(path)
        assert len(clip.samples) == 44100

    def test_unreadable_file_raises(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not audio")
        with pytest.raises(IngestionError):
            audio.read_wav(path)

    def test_write_read_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.9, 0.9, 44100).astype(np.float32)
        path = tmp_path / "rt.wav"
        audio.write_wav(path, x)
        clip = audio.read_wav(path)
        np.testing.assert_allclose(clip.samples, x, atol=2.0 / 32768)


class TestFraming:
    def test_hop_and_frame_count(self):
        assert audio.HOP_LENGTH == 683
        frames = audio.frame_and_window(np.zeros(44100, dtype=np.float32))
        assert frames.shape == (65, 4096)

    def test_zero_clip_zero_frames(self):
        frames = audio.frame_and_window(np.zeros(44100, dtype=np.float32))
        assert (frames == 0).all()

    def test_interior_frame_is_the_window(self):
        frames = audio.frame_and_window(np.ones(44100, dtype=np.float32))
        np.testing.assert_allclose(frames[32], np.hamming(4096), rtol=1e-6)

    def test_wrong_length_rejected(self):
        with pytest.raises(UsageError):
            audio.frame_and_window(np.zeros(1000, dtype=np.float32))


class TestSpectra:
    def test_zero_frame_zero_spectrum(self):
        power = audio.stft_power(np.zeros((3, 4096)))
        assert power.shape == (3, 2049)
        assert (power == 0).all()

    def test_pure_cosine_concentrates_at_its_bin(self):
        n = np.arange(4096)
        frame = np.cos(2 * np.pi * 16 * n / 4096)[None, :]
        power = audio.stft_power(frame)[0]
        assert power[16] / power.sum() > 0.99

    def test_parseval(self):
        rng = np.random.default_rng(1)
        frame = rng.standard_normal((1, 4096))
        power = audio.stft_power(frame)[0]
        doubled = power[0] + power[-1] + 2 * power[1:-1].sum()
        assert doubled == pytest.approx(4096 * (frame ** 2).sum(), rel=1e-3)


class TestMelFilterbank:
    def test_shape_and_nonnegative(self):
        fb = audio.mel_filterbank()
        assert fb.shape == (256, 2049)
        assert (fb >= 0).all()

    def test_rows_strictly_positive_and_unimodal(self):
        fb = audio.mel_filterbank()
        assert (fb.sum(axis=1) > 0).all()
        for row in fb:
            nz = np.flatnonzero(row)
            seg = row[nz[0]:nz[-1] + 1]
            d = np.diff(seg)
            # rises (possibly) then falls: at most one sign change
            signs = np.sign(d[d != 0])
            assert (np.diff(signs) <= 0).all()

    def test_no_gaps_between_dc_and_nyquist(self):
        coverage = audio.mel_filterbank().sum(axis=0)
        assert (coverage[1:-1] > 0).all()

    def test_white_spectrum_gives_filter_areas(self):
        fb = audio.mel_filterbank()
        power = np.full((2, 2049), 3.0)
        banded = np.exp(audio.mel_log(power)) - audio.LOG_FLOOR
        np.testing.assert_allclose(banded[:, 0], 3.0 * fb.sum(axis=1),
                                   rtol=1e-4)

    def test_zero_spectrum_hits_log_floor(self):
        out = audio.mel_log(np.zeros((1, 2049)))
        np.testing.assert_allclose(out, np.log(1e-10), rtol=1e-6)


class TestDelta:
    def test_constant_input_zero_delta(self):
        out = audio.delta_coefficients(np.full((256, 65), 7.25, dtype=np.float32))
        assert (out == 0).all()

    def test_linear_ramp_interior_slope(self):
        ramp = np.tile(np.arange(65, dtype=np.float64), (256, 1))
        out = audio.delta_coefficients(ramp)
        np.testing.assert_allclose(out[:, 2:-2], 1.0, rtol=1e-12)

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((256, 65))
        ref = np.zeros_like(x)
        for t in range(65):
            acc = 0.0
            for nn in (1, 2):
                hi = x[:, min(t + nn, 64)]
                lo = x[:, max(t - nn, 0)]
                acc = acc + nn * (hi - lo)
            ref[:, t] = acc / 10.0
        np.testing.assert_allclose(audio.delta_coefficients(x), ref, atol=1e-6)


class TestExtractFeature:
    def test_shape_and_dtype(self):
        rng = np.random.default_rng(3)
        clip = audio.AudioClip(samples=rng.uniform(-1, 1, 44100).astype(np.float32),
                               scene_label=4, device_id="a")
        fc = audio.extract_feature(clip)
        assert fc.feature.shape == (256, 65, 2)
        assert fc.feature.dtype == np.float32
        assert fc.scene_label == 4 and fc.device_id == "a"

    def test_silence_delta_channel_zero(self):
        clip = audio.AudioClip(samples=np.zeros(44100, dtype=np.float32))
        fc = audio.extract_feature(clip)
        assert (fc.feature[:, :, 1] == 0).all()

    def test_bit_identical_across_calls(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, 44100).astype(np.float32)
        a = audio.extract_feature(audio.AudioClip(samples=x)).feature
        b = audio.extract_feature(audio.AudioClip(samples=x.copy())).feature
        assert a.tobytes() == b.tobytes()

    def test_spectrum_coeffs_change_feature(self):
        rng = np.random.default_rng(5)
        clip = audio.AudioClip(samples=rng.uniform(-1, 1, 44100).astype(np.float32))
        plain = audio.extract_feature(clip).feature
        ones = audio.extract_feature(clip, spectrum_coeffs=np.ones(2049)).feature
        doubled = audio.extract_feature(clip, spectrum_coeffs=np.full(2049, 2.0)).feature
        np.testing.assert_allclose(ones, plain, atol=1e-5)
        assert not np.allclose(doubled, plain, atol=1e-3)


class TestFeatureCache:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        clips = [audio.FeatureClip(feature=rng.standard_normal((256, 65, 2))
                                   .astype(np.float32),
                                   scene_label=i, device_id=f"dev{i}")
                 for i in range(3)]
        path = tmp_path / "feat.bin"
        audio.write_feature_cache(path, clips)
        back = audio.read_feature_cache(path)
        assert len(back) == 3
        for orig, got in zip(clips, back):
            assert got.scene_label == orig.scene_label
            assert got.device_id == orig.device_id
            assert got.feature.tobytes() == orig.feature.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAFEAT" + b"\x00" * 64)
        with pytest.raises(IngestionError):
            audio.read_feature_cache(path)

    def test_truncated_record_rejected(self, tmp_path):
        clips = [audio.FeatureClip(feature=np.zeros((256, 65, 2), dtype=np.float32),
                                   scene_label=0, device_id="a")]
        path = tmp_path / "trunc.bin"
        audio.write_feature_cache(path, clips)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(IngestionError):
            audio.read_feature_cache(path)
