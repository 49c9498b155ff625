#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dyngraph/features.hpp"

namespace dyngraph {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t offset) {
  T v{};
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open WAV file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    return std::runtime_error(path.string() + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const std::size_t size = read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + size > buf.size()) throw fail("truncated fmt chunk");
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == kFormatExtensible && size >= 26) format = read_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_offset = body;
      data_size = std::min(size, buf.size() - body);
      break;
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data_offset == 0) throw fail("missing data chunk");
  if (channels == 0 || rate == 0) throw fail("invalid channel count or sample rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits); expected PCM16 or float32");
  }

  const std::size_t bytes = bits / 8;
  const std::size_t frames = data_size / (bytes * channels);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = data_offset + (f * channels + c) * bytes;
      acc += pcm16 ? read_le<std::int16_t>(buf, off) / 32768.0
                   : static_cast<double>(read_le<float>(buf, off));
    }
    clip.samples[f] = acc / static_cast<double>(channels);
  }
  return clip;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, kFormatPcm);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint32_t>(os, clip.sample_rate);
  write_le<std::uint32_t>(os, clip.sample_rate * 2);
  write_le<std::uint16_t>(os, 2);
  write_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_bytes);
  for (double s : clip.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    write_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(clipped * 32767.0)));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace dyngraph
