#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dyngraph/matrix.hpp"
#include "dyngraph/sequence_graph.hpp"
#include "dyngraph/training.hpp"

namespace dyngraph {

/// Mono samples in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;
};

/// Reads a RIFF/WAVE file: PCM 16-bit or IEEE float 32-bit, any channel
/// count (downmixed to mono by averaging). Throws std::runtime_error.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip);

struct MfccConfig {
  std::uint32_t sample_rate = 22050;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_mels = 64;
  std::size_t n_mfcc = 40;
  // 0 selects the next power of two >= the frame length.
  std::size_t fft_size = 0;

  std::size_t frame_length() const;
  std::size_t hop_length() const;
  std::size_t resolved_fft_size() const;
  void validate() const;
};

/// Splits a clip into frames of floor(frame_ms * sr / 1000) samples taken
/// every floor(hop_ms * sr / 1000) samples. A clip shorter than one frame
/// yields a single zero-padded frame.
std::vector<std::vector<double>> frame_signal(const AudioClip& clip, double frame_ms,
                                              double hop_ms);

/// Triangular mel filters (HTK mel scale) over the rfft bins, 0 Hz to Nyquist.
/// Rows are filters, columns are fft_size/2 + 1 bins.
Matrix mel_filterbank(std::size_t n_mels, std::size_t fft_size, std::uint32_t sample_rate);

/// Centre frequency in Hz of each mel filter.
std::vector<double> mel_center_frequencies(std::size_t n_mels, std::uint32_t sample_rate);

/// Orthonormal type-II DCT, n_out x n_in (first n_out basis rows).
Matrix dct_matrix(std::size_t n_out, std::size_t n_in);

/// Per-frame mel filterbank energies from the Hann-windowed power spectrum (T x n_mels).
Matrix mel_energies(const AudioClip& clip, const MfccConfig& cfg);

/// log(max(energy, 1e-10)) followed by the orthonormal DCT; T x n_mfcc.
Matrix mfcc(const AudioClip& clip, const MfccConfig& cfg);

/// Subtracts each coefficient's mean over frames and divides by its standard
/// deviation (left as 1 when the deviation is ~0).
Matrix cepstral_mean_variance_normalize(const Matrix& features);

/// Writes one frame per line, comma-separated, no header, round-trip precision.
void write_feature_csv(const std::filesystem::path& path, const Matrix& features);

/// Reads a rectangular numeric CSV. Throws std::runtime_error naming the file
/// and line on empty input, ragged rows or non-numeric cells.
Matrix read_feature_csv(const std::filesystem::path& path);

FrameSequence load_feature_csv(const std::filesystem::path& path, std::size_t label,
                               std::string id);

struct ManifestEntry {
  std::string file;  // relative to the manifest's directory
  std::size_t label = 0;
  std::string id;
};

struct Manifest {
  std::size_t feature_dim = 0;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;
};

/// {"feature_dim": p, "classes": [...], "entries": [{"file", "label", "id"}]}
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads every CSV listed in a manifest. num_classes is the class-name count
/// when given, otherwise one past the largest label.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Crops the tail when longer than `target_frames`, zero-pads it when shorter.
FrameSequence pad_or_crop(const FrameSequence& seq, std::size_t target_frames);

/// Class-conditional sinusoids plus Gaussian noise.
///
/// Feature j of frame t in class k is
///   a * sin(2 pi f_k t / T + phase_k + 2 pi j / p) + offset_kj + noise * N(0, 1)
/// with f_k = k + 1 whole cycles over the sequence and a per-sample amplitude
/// a in [0.8, 1.2]. The sinusoid averages out over time, so the per-class
/// offsets alone separate classes by their mean feature vector.
std::vector<FrameSequence> synth_dataset(std::size_t n_per_class, std::size_t classes,
                                         std::size_t frames, std::size_t feature_dim,
                                         double noise, std::uint64_t seed);

/// Emotion class (0-based) encoded in a RAVDESS file name such as
/// "03-01-05-01-02-01-12.wav"; nullopt when the name does not follow it.
std::optional<std::size_t> ravdess_label(std::string_view filename);

}  // namespace dyngraph
