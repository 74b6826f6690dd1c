#include <bit>
#include <cstring>

#include "cgistereo/pipeline.hpp"

namespace cgistereo {

namespace {

constexpr char kMagic[8] = {'C', 'G', 'I', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8, "integer");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n, "name");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ParamRegistry& reg) {
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, reg.entries().size());
  for (const auto& e : reg.entries()) {
    put_u64(out, e.name.size());
    out += e.name;
    put_u64(out, e.kind == ParamKind::parameter ? 0 : 1);
    put_u64(out, e.tensor.shape().size());
    for (auto d : e.tensor.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : e.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void load_checkpoint(ParamRegistry& reg, const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: bad magic at byte 0");
  }
  Reader r(bytes);
  r.str(sizeof kMagic);
  const auto count = r.u64();
  if (count != reg.entries().size()) {
    throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(reg.entries().size()));
  }
  // Parse fully before touching the model so a bad file leaves it intact.
  std::vector<std::vector<double>> staged;
  for (const auto& e : reg.entries()) {
    const auto at = r.pos();
    const auto name_len = r.u64();
    if (name_len > 4096) throw FormatError("checkpoint: implausible name length at byte " + std::to_string(at));
    const std::string name = r.str(name_len);
    if (name != e.name) {
      throw FormatError("checkpoint: expected tensor '" + e.name + "', found '" + name + "' at byte " +
                        std::to_string(at));
    }
    const auto kind = r.u64();
    if (kind != (e.kind == ParamKind::parameter ? 0u : 1u)) throw FormatError("checkpoint: kind mismatch for " + name);
    const auto rank = r.u64();
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 16; ++i) shape.push_back(static_cast<std::int64_t>(r.u64()));
    if (shape != e.tensor.shape()) {
      throw FormatError("checkpoint: " + name + " has shape " + shape_str(shape) + ", model expects " +
                        shape_str(e.tensor.shape()));
    }
    std::vector<double> values(static_cast<std::size_t>(e.tensor.numel()));
    for (auto& v : values) v = r.f64();
    staged.push_back(std::move(values));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at byte " + std::to_string(r.pos()));
  for (std::size_t i = 0; i < staged.size(); ++i) {
    Tensor t = reg.entries()[i].tensor;
    auto dst = t.mutable_values();
    std::copy(staged[i].begin(), staged[i].end(), dst.begin());
  }
}

void save_checkpoint_file(const ParamRegistry& reg, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(reg));
}

void load_checkpoint_file(ParamRegistry& reg, const std::filesystem::path& path) {
  load_checkpoint(reg, read_file(path));
}

}  // namespace cgistereo
