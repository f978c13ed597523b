#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csmil/error.hpp"
#include "csmil/model.hpp"

namespace csmil::model {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'M', 'I', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string string() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const ModelConfig& cfg, const ModelParams& params) {
  check_params(params, cfg);
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, cfg.digest());
  put_string(out, cfg.to_json());
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    put_string(out, name);
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                     const ModelParams& params) {
  const std::string bytes = checkpoint_bytes(cfg, params);
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + file.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing checkpoint " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  Reader r(bytes);
  if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw FormatError(file.string() + ": not a checkpoint");
  if (r.uint(4) != kVersion) throw FormatError(file.string() + ": unsupported checkpoint version");
  const std::uint64_t digest = r.uint(8);
  Checkpoint ck;
  ck.config = ModelConfig::from_json(r.string());
  if (ck.config.digest() != digest) throw FormatError(file.string() + ": config digest mismatch");
  const auto count = r.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = r.string();
    if (r.uint(4) != 2) throw FormatError(file.string() + ": tensor '" + name + "' is not rank 2");
    const auto rows = static_cast<Eigen::Index>(r.uint(4));
    const auto cols = static_cast<Eigen::Index>(r.uint(4));
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = std::bit_cast<double>(r.uint(8));
    ck.params.tensors.emplace(name, std::move(t));
  }
  if (!r.done()) throw FormatError(file.string() + ": trailing bytes");
  try {
    check_params(ck.params, ck.config);
  } catch (const ConfigError& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace csmil::model
