#include "dansep/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dansep {

void validate(const Waveform& wave) {
  if (wave.sample_rate <= 0) throw Error("waveform sample rate must be positive");
  for (double s : wave.samples)
    if (!std::isfinite(s)) throw Error("waveform contains non-finite samples");
}

namespace wav {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct Parsed {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_bytes = 0;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open WAV file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Parsed parse(const std::vector<unsigned char>& bytes, const std::string& name) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(name + ": not a RIFF/WAVE file");

  Parsed p;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + 16 > bytes.size()) throw FormatError(name + ": short fmt chunk");
      p.info.format_tag = read_u16(bytes.data() + body);
      p.info.channels = read_u16(bytes.data() + body + 2);
      p.info.sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
      p.info.bits_per_sample = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
      p.data_offset = body;
      p.data_bytes = std::min(len, bytes.size() - body);
      const int frame_bytes = p.info.channels * (p.info.bits_per_sample / 8);
      p.info.frames = frame_bytes > 0 ? p.data_bytes / frame_bytes : 0;
      return p;
    }
    pos = body + len + (len & 1);
  }
  throw FormatError(name + ": missing fmt or data chunk");
}

}  // namespace

WavInfo probe(const std::filesystem::path& path) {
  return parse(slurp(path), path.string()).info;
}

Waveform read(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const Parsed p = parse(bytes, path.string());
  if (p.info.format_tag != 1 || p.info.bits_per_sample != 16)
    throw FormatError(path.string() + ": only 16-bit PCM is supported");
  if (p.info.channels != 1)
    throw FormatError(path.string() + ": expected mono, found " +
                      std::to_string(p.info.channels) + " channels");
  if (p.info.sample_rate <= 0) throw FormatError(path.string() + ": invalid sample rate");

  Waveform w;
  w.sample_rate = p.info.sample_rate;
  w.samples.resize(p.info.frames);
  const unsigned char* data = bytes.data() + p.data_offset;
  for (std::size_t i = 0; i < p.info.frames; ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

std::vector<std::int16_t> quantize(const std::vector<double>& samples) {
  std::vector<std::int16_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double scaled = std::round(samples[i] * 32768.0);
    out[i] = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
  }
  return out;
}

void write(const std::filesystem::path& path, const Waveform& wave) {
  if (wave.sample_rate <= 0) throw Error("cannot write WAV with non-positive sample rate");
  const auto pcm = quantize(wave.samples);
  const auto data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (std::int16_t s : pcm) put_u16(out, static_cast<std::uint16_t>(s));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write WAV file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("short write on WAV file: " + path.string());
}

}  // namespace wav
}  // namespace dansep
