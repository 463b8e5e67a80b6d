"""WAV reading and log-mel filterbank features."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from camforge.core.tensor import Tensor
from camforge.errors import ConfigurationError, FormatError, InputError

EXPECTED_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = EXPECTED_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InputError("sample_rate must be positive")
        if len(self.samples) == 0:
            raise InputError("audio buffer is empty")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FbankConfig:
    """Filterbank settings. Only size, window and hop are fixed by the model.

    ``power=True`` takes the squared magnitude spectrum, so scaling the
    waveform by ``a`` shifts every (unfloored) log value by ``2 log a``.
    """

    num_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    mel_low_hz: float = 20.0
    mel_high_hz: float = 7600.0
    log_floor: float = 1e-10
    power: bool = True
    sample_rate: int = EXPECTED_SAMPLE_RATE

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    def validate(self) -> None:
        if self.num_mels < 1:
            raise ConfigurationError("num_mels must be >= 1")
        if self.window_samples > self.fft_size:
            raise ConfigurationError(
                f"window of {self.window_samples} samples exceeds fft_size {self.fft_size}"
            )
        if not 0 <= self.mel_low_hz < self.mel_high_hz <= self.sample_rate / 2:
            raise ConfigurationError("need 0 <= mel_low_hz < mel_high_hz <= sample_rate/2")
        if self.hop_samples < 1 or self.log_floor <= 0:
            raise ConfigurationError("hop must be >= 1 sample and log_floor > 0")


def read_wav(path: str | Path) -> AudioBuffer:
    """Load a 16-bit mono 16 kHz PCM WAV, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a PCM WAV file ({exc})") from None
    except EOFError:
        raise FormatError(f"{path}: truncated WAV file") from None
    if channels != 1:
        raise FormatError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise FormatError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    if rate != EXPECTED_SAMPLE_RATE:
        raise FormatError(
            f"{path}: expected {EXPECTED_SAMPLE_RATE} Hz, found {rate} Hz (no resampling is done)"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float32) / 32768.0, rate)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    pcm = np.clip(np.round(np.asarray(audio.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def hz_to_mel(hz):
    return 1127.0 * np.log1p(np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * np.expm1(np.asarray(mel, dtype=np.float64) / 1127.0)


def mel_center_frequencies(config: FbankConfig) -> np.ndarray:
    edges = np.linspace(hz_to_mel(config.mel_low_hz), hz_to_mel(config.mel_high_hz), config.num_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(config: FbankConfig) -> np.ndarray:
    """Triangular filters, linear on the mel scale: ``(num_mels, fft_size//2 + 1)``."""
    edges = np.linspace(hz_to_mel(config.mel_low_hz), hz_to_mel(config.mel_high_hz), config.num_mels + 2)
    bin_mel = hz_to_mel(np.arange(config.fft_size // 2 + 1) * config.sample_rate / config.fft_size)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def num_frames(num_samples: int, config: FbankConfig) -> int:
    if num_samples < config.window_samples:
        return 0
    return 1 + (num_samples - config.window_samples) // config.hop_samples


def fbank(audio: AudioBuffer, config: FbankConfig | None = None) -> Tensor:
    """Log-mel filterbank, ``(num_mels, T)``.

    Frames are cut without dither or end padding, Hamming-windowed,
    transformed with a real FFT, pooled by the mel filters and logged with
    a floor. No pre-emphasis and no mean normalisation.
    """
    config = config or FbankConfig(sample_rate=audio.sample_rate)
    if config.sample_rate != audio.sample_rate:
        raise ConfigurationError(
            f"config expects {config.sample_rate} Hz audio, got {audio.sample_rate} Hz"
        )
    config.validate()
    x = np.asarray(audio.samples, dtype=np.float64)
    n_frames = num_frames(len(x), config)
    if n_frames < 1:
        raise InputError(
            f"audio has {len(x)} samples; one {config.window_ms} ms frame needs {config.window_samples}"
        )
    win = config.window_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: config.hop_samples][:n_frames]
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=config.fft_size, axis=1))
    if config.power:
        spec = spec * spec
    energies = spec @ mel_filterbank(config).T
    feats = np.log(np.maximum(energies, config.log_floor))
    return Tensor(feats.T.astype(np.float32))


def synth_tone(freq_hz: float, seconds: float, sample_rate: int = EXPECTED_SAMPLE_RATE, amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return AudioBuffer((amplitude * np.sin(2 * math.pi * freq_hz * t)).astype(np.float32), sample_rate)
