#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cgistereo/data_io.hpp"

namespace cgistereo {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const char* format) : bytes_(bytes), format_(format) {}

  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(std::string(format_) + ": " + what + " at byte " + std::to_string(pos_));
  }

  void skip_space(bool allow_comments) {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (allow_comments && c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string token(bool allow_comments) {
    const std::size_t start_pos = pos_;
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      if (start_pos != 0) fail("expected whitespace");
    }
    skip_space(allow_comments);
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail("unexpected end of header");
    return bytes_.substr(start, pos_ - start);
  }

  std::int64_t positive_int(const char* what, bool allow_comments) {
    const std::string t = token(allow_comments);
    std::int64_t v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c))) fail(std::string("invalid ") + what + " '" + t + "'");
      v = v * 10 + (c - '0');
      if (v > (std::int64_t{1} << 31)) fail(std::string(what) + " too large");
    }
    if (v <= 0) fail(std::string(what) + " must be positive");
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing whitespace before payload");
    }
    ++pos_;
  }

 private:
  const std::string& bytes_;
  const char* format_;
  std::size_t pos_ = 0;
};

bool host_little_endian() { return std::endian::native == std::endian::little; }

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}

}  // namespace

PfmData read_pfm(const std::string& bytes) {
  if (bytes.size() < 2) throw FormatError("pfm: truncated header at byte " + std::to_string(bytes.size()));
  if (bytes.compare(0, 2, "PF") == 0) {
    throw FormatError("pfm: color PFM ('PF') is not supported, expected grayscale 'Pf' at byte 0");
  }
  if (bytes.compare(0, 2, "Pf") != 0) throw FormatError("pfm: bad magic, expected 'Pf' at byte 0");
  HeaderReader r(bytes, "pfm");
  r.token(false);  // magic
  PfmData out;
  out.field.width = r.positive_int("width", false);
  out.field.height = r.positive_int("height", false);
  const std::size_t scale_pos = r.pos();
  const std::string scale_text = r.token(false);
  try {
    std::size_t used = 0;
    out.scale = std::stod(scale_text, &used);
    if (used != scale_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw FormatError("pfm: invalid scale '" + scale_text + "' at byte " + std::to_string(scale_pos));
  }
  if (out.scale == 0.0 || !std::isfinite(out.scale)) {
    throw FormatError("pfm: scale must be finite and nonzero at byte " + std::to_string(scale_pos));
  }
  r.end_of_header();

  const std::size_t count = static_cast<std::size_t>(out.field.width * out.field.height);
  const std::size_t need = count * 4;
  if (bytes.size() - r.pos() < need) {
    throw FormatError("pfm: truncated payload, expected " + std::to_string(need) + " bytes after byte " +
                      std::to_string(r.pos()) + ", found " + std::to_string(bytes.size() - r.pos()));
  }
  const bool swap = (out.scale < 0) != host_little_endian();
  out.field.values.resize(count);
  const char* payload = bytes.data() + r.pos();
  const auto W = out.field.width, H = out.field.height;
  for (std::int64_t row = 0; row < H; ++row) {
    const std::int64_t y = H - 1 - row;  // bottom-to-top on disk
    for (std::int64_t x = 0; x < W; ++x) {
      std::uint32_t bits;
      std::memcpy(&bits, payload + 4 * (row * W + x), 4);
      if (swap) bits = byteswap32(bits);
      out.field.values[static_cast<std::size_t>(y * W + x)] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

std::string write_pfm(const FloatField& field, double scale) {
  if (field.width <= 0 || field.height <= 0 ||
      field.values.size() != static_cast<std::size_t>(field.width * field.height)) {
    throw FormatError("pfm: field dimensions do not match its value count");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("pfm: scale must be finite and nonzero");
  std::ostringstream header;
  header.precision(17);
  header << "Pf\n" << field.width << ' ' << field.height << '\n' << scale << '\n';
  std::string out = header.str();
  const std::size_t offset = out.size();
  out.resize(offset + field.values.size() * 4);
  const bool swap = (scale < 0) != host_little_endian();
  const auto W = field.width, H = field.height;
  for (std::int64_t row = 0; row < H; ++row) {
    const std::int64_t y = H - 1 - row;
    for (std::int64_t x = 0; x < W; ++x) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(field.values[static_cast<std::size_t>(y * W + x)]);
      if (swap) bits = byteswap32(bits);
      std::memcpy(out.data() + offset + 4 * (row * W + x), &bits, 4);
    }
  }
  return out;
}

PfmData read_pfm_file(const std::filesystem::path& path) { return read_pfm(read_file(path)); }

void write_pfm_file(const std::filesystem::path& path, const FloatField& field, double scale) {
  write_file_atomic(path, write_pfm(field, scale));
}

// ---------------------------------------------------------------------------

Image8 read_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: expected binary PGM (P5) or PPM (P6) magic at byte 0");
  }
  HeaderReader r(bytes, "pnm");
  r.token(true);
  Image8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  img.width = r.positive_int("width", true);
  img.height = r.positive_int("height", true);
  const std::size_t maxval_pos = r.pos();
  const auto maxval = r.positive_int("maxval", true);
  if (maxval != 255) {
    throw FormatError("pnm: only maxval 255 is supported at byte " + std::to_string(maxval_pos));
  }
  r.end_of_header();
  const std::size_t need = static_cast<std::size_t>(img.width * img.height * img.channels);
  if (bytes.size() - r.pos() < need) {
    throw FormatError("pnm: truncated payload, expected " + std::to_string(need) + " bytes after byte " +
                      std::to_string(r.pos()));
  }
  img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                  bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + need));
  return img;
}

std::string write_pnm(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("pnm: only 1 or 3 channels are supported");
  if (image.data.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw FormatError("pnm: image dimensions do not match its data size");
  }
  std::string out = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(image.data.begin(), image.data.end());
  return out;
}

Image8 read_pnm_file(const std::filesystem::path& path) { return read_pnm(read_file(path)); }

void write_pnm_file(const std::filesystem::path& path, const Image8& image) {
  write_file_atomic(path, write_pnm(image));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace cgistereo
