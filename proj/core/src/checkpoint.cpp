#include "lqiq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lqiq/errors.hpp"
#include "lqiq/tensor.hpp"

namespace lqiq {

namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void le(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw LengthError("checkpoint truncated at byte " + std::to_string(pos_) +
                            " while reading " + what + " (need " +
                            std::to_string(n) + " bytes, have " +
                            std::to_string(bytes_.size() - pos_) + ")",
                        pos_);
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return value;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.size() > 0xffff) {
      throw ContractError("checkpoint: name longer than 65535 bytes");
    }
    if (a.dims.size() > 0xff) {
      throw ContractError("checkpoint: rank above 255 for " + a.name);
    }
    std::size_t count = 1;
    for (auto d : a.dims) count *= d;
    if (count != a.values.size()) {
      throw DimensionError("checkpoint: array " + a.name + " has " +
                           std::to_string(a.values.size()) +
                           " values for its dims");
    }
    w.le<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) w.le<std::uint32_t>(d);
    for (float v : a.values) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic, expected \"LQIQ\"", 0);
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion),
                      4);
  }
  const auto count = r.le<std::uint32_t>("tensor count");
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = r.le<std::uint16_t>("name length");
    auto name = r.take(name_len, "name");
    a.name.assign(name.begin(), name.end());
    const auto rank = r.le<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      a.dims.push_back(r.le<std::uint32_t>("dims"));
      n *= a.dims.back();
    }
    r.need(n * 4, "values");
    a.values.resize(n);
    for (auto& v : a.values) v = std::bit_cast<float>(r.le<std::uint32_t>("values"));
    arrays.push_back(std::move(a));
  }
  if (!r.done()) {
    throw FormatError("checkpoint: trailing bytes at offset " +
                          std::to_string(r.offset()),
                      r.offset());
  }
  return arrays;
}

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const NamedArray> arrays) {
  const auto bytes = encode_checkpoint(arrays);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what(), e.offset());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

const NamedArray& find_array(std::span<const NamedArray> arrays,
                             const std::string& name) {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw ContractError("checkpoint has no array named \"" + name + "\"");
}

}  // namespace lqiq
