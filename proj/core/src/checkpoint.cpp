#include "dansep/pipeline.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dansep::pipeline {
namespace {

constexpr std::array<char, 4> kMagic = {'D', 'A', 'N', 'C'};

std::string fmt_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size()))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_tensor(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(data[i]));
}

void get_tensor(std::istream& in, double* data, Eigen::Index n, const char* what) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * 8);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError(std::string("checkpoint truncated in tensor block: ") + what);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    data[i] = std::bit_cast<double>(v);
  }
}

class Header {
 public:
  explicit Header(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("checkpoint header line without '=': " + line);
      values_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw FormatError("checkpoint header is missing '" + key + "'");
    return it->second;
  }

  template <typename T>
  T num(const std::string& key) const {
    const std::string& s = str(key);
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw FormatError("checkpoint header value for '" + key + "' is malformed: " + s);
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const auto& arch = ckpt.arch();
  const auto n = ckpt.params.values().size();
  if (ckpt.adam.m.size() != n || ckpt.adam.v.size() != n)
    throw Error("checkpoint: optimizer state does not match the parameter count");
  if (ckpt.params.stats.mean.size() != arch.input_dim || ckpt.params.stats.stddev.size() != arch.input_dim)
    throw Error("checkpoint: feature statistics do not match input_dim");

  std::ostringstream h;
  h << "arch.input_dim=" << arch.input_dim << '\n'
    << "arch.layers=" << arch.num_layers << '\n'
    << "arch.hidden=" << arch.hidden << '\n'
    << "arch.embed=" << arch.embed_dim << '\n'
    << "arch.cell=" << net::to_string(arch.cell) << '\n'
    << "stft.win_len=" << ckpt.stft.win_len << '\n'
    << "stft.hop=" << ckpt.stft.hop << '\n'
    << "stft.fft_size=" << ckpt.stft.fft_size << '\n'
    << "sample_rate=" << ckpt.sample_rate << '\n'
    << "floor_eps=" << fmt_double(ckpt.floor_eps) << '\n'
    << "epoch=" << ckpt.epoch << '\n'
    << "lr=" << fmt_double(ckpt.lr) << '\n'
    << "best_val_loss=" << fmt_double(ckpt.best_val_loss) << '\n'
    << "epochs_without_improvement=" << ckpt.epochs_without_improvement << '\n'
    << "train_loss=" << fmt_double(ckpt.train_loss) << '\n'
    << "val_loss=" << fmt_double(ckpt.val_loss) << '\n'
    << "adam.step=" << ckpt.adam.step << '\n'
    << "param_count=" << n << '\n';
  const std::string header = h.str();

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, ckpt.version);
  put_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_tensor(out, ckpt.params.values().data(), n);
  put_tensor(out, ckpt.adam.m.data(), n);
  put_tensor(out, ckpt.adam.v.data(), n);
  put_tensor(out, ckpt.params.stats.mean.data(), arch.input_dim);
  put_tensor(out, ckpt.params.stats.stddev.data(), arch.input_dim);
  if (!out) throw Error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("not a checkpoint file (bad magic bytes; unrecognized version)");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(in, "header length");
  if (header_len > (1u << 20)) throw FormatError("checkpoint header is implausibly large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw FormatError("checkpoint truncated in header");
  const Header h(text);

  net::ArchSpec arch;
  arch.input_dim = h.num<int>("arch.input_dim");
  arch.num_layers = h.num<int>("arch.layers");
  arch.hidden = h.num<int>("arch.hidden");
  arch.embed_dim = h.num<int>("arch.embed");
  arch.cell = net::cell_kind_from_string(h.str("arch.cell"));

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.stft.win_len = h.num<int>("stft.win_len");
  ckpt.stft.hop = h.num<int>("stft.hop");
  ckpt.stft.fft_size = h.num<int>("stft.fft_size");
  ckpt.stft.validate();
  if (ckpt.stft.num_bins() != arch.input_dim)
    throw FormatError("checkpoint: input_dim does not match the STFT geometry");
  ckpt.sample_rate = h.num<int>("sample_rate");
  ckpt.floor_eps = h.num<double>("floor_eps");
  ckpt.epoch = h.num<int>("epoch");
  ckpt.lr = h.num<double>("lr");
  ckpt.best_val_loss = h.num<double>("best_val_loss");
  ckpt.epochs_without_improvement = h.num<int>("epochs_without_improvement");
  ckpt.train_loss = h.num<double>("train_loss");
  ckpt.val_loss = h.num<double>("val_loss");

  ckpt.params = net::ModelParams(arch);
  const auto n = ckpt.params.values().size();
  if (h.num<Eigen::Index>("param_count") != n)
    throw FormatError("checkpoint: parameter count does not match the architecture");
  ckpt.adam = AdamState::zeros(n);
  ckpt.adam.step = h.num<std::int64_t>("adam.step");
  get_tensor(in, ckpt.params.values().data(), n, "parameters");
  get_tensor(in, ckpt.adam.m.data(), n, "adam.m");
  get_tensor(in, ckpt.adam.v.data(), n, "adam.v");
  get_tensor(in, ckpt.params.stats.mean.data(), arch.input_dim, "feature mean");
  get_tensor(in, ckpt.params.stats.stddev.data(), arch.input_dim, "feature stddev");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  write_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace dansep::pipeline
