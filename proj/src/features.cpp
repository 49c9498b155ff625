#include "dyngraph/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>
#include <json.hpp>

namespace dyngraph {

namespace {

std::size_t samples_for(double ms, std::uint32_t sample_rate) {
  // The epsilon absorbs representation error in products such as 25 * 16000 / 1000.
  return static_cast<std::size_t>(std::floor(ms * sample_rate / 1000.0 + 1e-9));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_edges_hz(std::size_t n_mels, std::uint32_t sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  return edges;
}

// FFTW's planner is not thread-safe; execution of an existing plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class PowerSpectrum {
 public:
  explicit PowerSpectrum(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    if (in_ == nullptr || out_ == nullptr) throw std::bad_alloc();
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  /// |FFT(frame * window)|^2 with zero padding to n.
  std::vector<double> operator()(std::span<const double> frame, std::span<const double> window) {
    std::fill(in_, in_ + n_, 0.0);
    for (std::size_t i = 0; i < frame.size(); ++i) in_[i] = frame[i] * window[i];
    fftw_execute(plan_);
    std::vector<double> power(n_ / 2 + 1);
    for (std::size_t k = 0; k < power.size(); ++k)
      power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    return power;
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

std::size_t MfccConfig::frame_length() const { return samples_for(frame_ms, sample_rate); }
std::size_t MfccConfig::hop_length() const { return samples_for(hop_ms, sample_rate); }

std::size_t MfccConfig::resolved_fft_size() const {
  if (fft_size != 0) return fft_size;
  std::size_t n = 1;
  while (n < frame_length()) n <<= 1;
  return n;
}

void MfccConfig::validate() const {
  if (sample_rate == 0) throw std::invalid_argument("mfcc.sample_rate must be > 0");
  if (!(frame_ms > hop_ms) || !(hop_ms > 0.0)) {
    throw std::invalid_argument("mfcc: need frame_ms > hop_ms > 0");
  }
  if (n_mfcc == 0 || n_mfcc > n_mels) throw std::invalid_argument("mfcc: need 0 < n_mfcc <= n_mels");
  if (frame_length() == 0 || hop_length() == 0) {
    throw std::invalid_argument("mfcc: frame or hop shorter than one sample");
  }
  if (fft_size != 0 && fft_size < frame_length()) {
    throw std::invalid_argument("mfcc.fft_size is shorter than the frame");
  }
}

std::vector<std::vector<double>> frame_signal(const AudioClip& clip, double frame_ms,
                                              double hop_ms) {
  if (clip.samples.empty()) throw std::invalid_argument("frame_signal: empty clip");
  if (clip.sample_rate == 0) throw std::invalid_argument("frame_signal: sample rate is zero");
  const std::size_t f = samples_for(frame_ms, clip.sample_rate);
  const std::size_t h = samples_for(hop_ms, clip.sample_rate);
  if (f == 0 || h == 0) throw std::invalid_argument("frame_signal: frame or hop is zero samples");

  const std::size_t n = clip.samples.size();
  std::vector<std::vector<double>> frames;
  if (n < f) {
    std::vector<double> padded(f, 0.0);
    std::copy(clip.samples.begin(), clip.samples.end(), padded.begin());
    frames.push_back(std::move(padded));
    return frames;
  }
  const std::size_t count = (n - f) / h + 1;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto start = clip.samples.begin() + static_cast<std::ptrdiff_t>(i * h);
    frames.emplace_back(start, start + static_cast<std::ptrdiff_t>(f));
  }
  return frames;
}

std::vector<double> mel_center_frequencies(std::size_t n_mels, std::uint32_t sample_rate) {
  const auto edges = mel_edges_hz(n_mels, sample_rate);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(std::size_t n_mels, std::size_t fft_size, std::uint32_t sample_rate) {
  const auto edges = mel_edges_hz(n_mels, sample_rate);
  const std::size_t bins = fft_size / 2 + 1;
  Matrix fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m];
    const double mid = edges[m + 1];
    const double hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (hz > lo && hz <= mid) {
        w = (hz - lo) / (mid - lo);
      } else if (hz > mid && hz < hi) {
        w = (hi - hz) / (hi - mid);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

Matrix dct_matrix(std::size_t n_out, std::size_t n_in) {
  Matrix d(n_out, n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i)
      d(k, i) = s * std::cos(std::numbers::pi * static_cast<double>(k) *
                             (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
  }
  return d;
}

Matrix mel_energies(const AudioClip& clip, const MfccConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("mfcc: clip is " + std::to_string(clip.sample_rate) +
                                " Hz but the configuration expects " +
                                std::to_string(cfg.sample_rate) + " Hz");
  }
  const auto frames = frame_signal(clip, cfg.frame_ms, cfg.hop_ms);
  const std::size_t flen = cfg.frame_length();
  const std::size_t nfft = cfg.resolved_fft_size();
  const Matrix fb = mel_filterbank(cfg.n_mels, nfft, cfg.sample_rate);

  std::vector<double> window(flen);
  for (std::size_t i = 0; i < flen; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(flen - 1));

  PowerSpectrum spectrum(nfft);
  Matrix out(frames.size(), cfg.n_mels);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto power = spectrum(frames[t], window);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto w = fb.row(m);
      for (std::size_t k = 0; k < power.size(); ++k) e += w[k] * power[k];
      out(t, m) = e;
    }
  }
  return out;
}

Matrix mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  Matrix log_mel = mel_energies(clip, cfg);
  for (double& v : log_mel.data()) v = std::log(std::max(v, 1e-10));
  return matmul(log_mel, transpose(dct_matrix(cfg.n_mfcc, cfg.n_mels)));
}

Matrix cepstral_mean_variance_normalize(const Matrix& features) {
  Matrix out = features;
  const double n = static_cast<double>(features.rows());
  if (features.rows() == 0) return out;
  for (std::size_t c = 0; c < features.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < features.rows(); ++r) mean += features(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < features.rows(); ++r) {
      const double d = features(r, c) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / n);
    const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t r = 0; r < features.rows(); ++r) out(r, c) = (features(r, c) - mean) * scale;
  }
  return out;
}

void write_feature_csv(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  char buf[32];
  for (std::size_t r = 0; r < features.rows(); ++r) {
    for (std::size_t c = 0; c < features.cols(); ++c) {
      if (c != 0) os << ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, features(r, c));
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Matrix read_feature_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open feature file " + path.string());
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                      : comma - start);
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cell = b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": non-numeric cell '" + cell + "'");
      }
      data.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": row has " +
                               std::to_string(count) + " cells, expected " +
                               std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path.string() + ": empty feature file");
  return Matrix(rows, cols, std::move(data));
}

FrameSequence load_feature_csv(const std::filesystem::path& path, std::size_t label,
                               std::string id) {
  return FrameSequence{read_feature_csv(path), label, std::move(id)};
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  nlohmann::ordered_json j;
  j["feature_dim"] = manifest.feature_dim;
  j["classes"] = manifest.classes;
  j["entries"] = nlohmann::ordered_json::array();
  for (const ManifestEntry& e : manifest.entries)
    j["entries"].push_back({{"file", e.file}, {"label", e.label}, {"id", e.id}});
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
  Manifest m;
  try {
    m.feature_dim = j.value("feature_dim", std::size_t{0});
    if (j.contains("classes")) m.classes = j.at("classes").get<std::vector<std::string>>();
    const auto& entries = j.at("entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (!e.contains("label")) {
        throw std::runtime_error(path.string() + ": entry " + std::to_string(i) +
                                 " has no label");
      }
      ManifestEntry entry;
      entry.file = e.at("file").get<std::string>();
      entry.label = e.at("label").get<std::size_t>();
      entry.id = e.value("id", std::filesystem::path(entry.file).stem().string());
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  Dataset d;
  std::size_t max_label = 0;
  for (const ManifestEntry& e : m.entries) {
    FrameSequence seq = load_feature_csv(base / e.file, e.label, e.id);
    if (m.feature_dim != 0 && seq.feature_dim() != m.feature_dim) {
      throw std::runtime_error(e.file + ": " + std::to_string(seq.feature_dim()) +
                               " columns but the manifest declares " +
                               std::to_string(m.feature_dim));
    }
    max_label = std::max(max_label, e.label);
    d.samples.push_back(std::move(seq));
  }
  d.num_classes = m.classes.empty() ? max_label + 1 : m.classes.size();
  return d;
}

FrameSequence pad_or_crop(const FrameSequence& seq, std::size_t target_frames) {
  if (target_frames == 0) throw std::invalid_argument("pad_or_crop: target must be >= 1");
  FrameSequence out{Matrix(target_frames, seq.feature_dim()), seq.label, seq.id};
  const std::size_t keep = std::min(target_frames, seq.frames());
  std::copy_n(seq.features.data().begin(), keep * seq.feature_dim(), out.features.data().begin());
  return out;
}

std::vector<FrameSequence> synth_dataset(std::size_t n_per_class, std::size_t classes,
                                         std::size_t frames, std::size_t feature_dim,
                                         double noise, std::uint64_t seed) {
  if (n_per_class == 0 || classes == 0 || frames == 0 || feature_dim == 0) {
    throw std::invalid_argument("synth_dataset: all counts must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> offset_dist(-1.0, 1.0);
  std::uniform_real_distribution<double> amp_dist(0.8, 1.2);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix offsets(classes, feature_dim);
  for (double& v : offsets.data()) v = offset_dist(rng);

  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<FrameSequence> out;
  out.reserve(n_per_class * classes);
  for (std::size_t n = 0; n < n_per_class; ++n) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double freq = static_cast<double>(k + 1);
      const double phase = std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
      const double amp = amp_dist(rng);
      FrameSequence seq{Matrix(frames, feature_dim), k,
                        "synth_" + std::to_string(k) + "_" + std::to_string(n)};
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t j = 0; j < feature_dim; ++j) {
          const double arg = two_pi * freq * static_cast<double>(t) / static_cast<double>(frames) +
                             phase + two_pi * static_cast<double>(j) /
                                         static_cast<double>(feature_dim);
          double v = amp * std::sin(arg) + offsets(k, j);
          if (noise > 0.0) v += noise * gauss(rng);
          seq.features(t, j) = v;
        }
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

std::optional<std::size_t> ravdess_label(std::string_view filename) {
  const auto slash = filename.find_last_of("/\\");
  if (slash != std::string_view::npos) filename.remove_prefix(slash + 1);
  // modality-channel-emotion-intensity-statement-repetition-actor.wav
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  const std::size_t dot = filename.rfind('.');
  const std::string_view stem = filename.substr(0, dot);
  while (start <= stem.size()) {
    const std::size_t dash = stem.find('-', start);
    fields.push_back(stem.substr(start, dash == std::string_view::npos ? std::string_view::npos
                                                                      : dash - start));
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  if (fields.size() != 7) return std::nullopt;
  for (std::string_view f : fields)
    if (f.size() != 2 || !std::all_of(f.begin(), f.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return std::nullopt;
  const int emotion = (fields[2][0] - '0') * 10 + (fields[2][1] - '0');
  if (emotion < 1 || emotion > 8) return std::nullopt;
  return static_cast<std::size_t>(emotion - 1);
}

}  // namespace dyngraph
