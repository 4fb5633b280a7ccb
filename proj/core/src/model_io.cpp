#include "seufi/model_io.hpp"

#include <openssl/sha.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "seufi/error.hpp"

namespace seufi {

namespace {

constexpr std::array<char, 8> kModelMagic = {'S', 'E', 'U', 'F', 'I', 'M', 'D', 'L'};
constexpr std::array<char, 8> kTensorMagic = {'S', 'E', 'U', 'F', 'I', 'T', 'N', 'S'};
constexpr std::size_t kDigestBytes = SHA256_DIGEST_LENGTH;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void magic(const std::array<char, 8>& m) {
    for (char c : m) u8(static_cast<std::uint8_t>(c));
  }

  void tensor(const Tensor& t) {
    u8(static_cast<std::uint8_t>(t.dtype()));
    u8(t.quant() ? 1 : 0);
    u16(0);
    f64(t.quant() ? t.quant()->scale : 0.0);
    i32(t.quant() ? t.quant()->zero_point : 0);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    const int bytes = bit_width(t.dtype()) / 8;
    for (std::size_t i = 0; i < t.size(); ++i) put(t.raw_bits(i), bytes);
  }

  std::vector<std::byte> finish() && {
    std::array<unsigned char, kDigestBytes> digest{};
    SHA256(reinterpret_cast<const unsigned char*>(out_.data()), out_.size(), digest.data());
    for (auto c : digest) u8(c);
    return std::move(out_);
  }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void expect_magic(const std::array<char, 8>& m, const char* what) {
    for (char c : m) {
      if (u8() != static_cast<std::uint8_t>(c)) throw CorruptFileError(std::string("not a ") + what + " file (bad magic)");
    }
  }

  Tensor tensor() {
    const auto dtype_tag = u8();
    if (dtype_tag > 2) throw CorruptFileError("unknown tensor dtype tag " + std::to_string(dtype_tag));
    const auto dtype = static_cast<DType>(dtype_tag);
    const bool has_quant = u8() != 0;
    u16();
    const double scale = f64();
    const std::int32_t zp = i32();
    const auto rank = u32();
    if (rank == 0 || rank > 8) throw CorruptFileError("bad tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      const auto v = u64();
      if (v == 0 || v > kMaxElements || n * v > kMaxElements) throw CorruptFileError("bad tensor dimension");
      d = static_cast<std::size_t>(v);
      n *= v;
    }
    const int bytes = bit_width(dtype) / 8;
    require(static_cast<std::size_t>(n) * static_cast<std::size_t>(bytes));
    try {
      Tensor t = Tensor::zeros(shape, dtype, has_quant ? std::optional<QuantParams>(QuantParams{scale, zp}) : std::nullopt);
      if (has_quant != is_integer(dtype)) throw CorruptFileError("quantization flag inconsistent with dtype");
      for (std::size_t i = 0; i < n; ++i) t.set_raw_bits(i, static_cast<std::uint32_t>(get(bytes)));
      return t;
    } catch (const CorruptFileError&) {
      throw;
    } catch (const Error& e) {
      throw CorruptFileError(std::string("invalid tensor record: ") + e.what());
    }
  }

  std::size_t position() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptFileError("file truncated");
  }
  std::uint64_t get(int bytes) {
    require(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

// Splits off and checks the trailing digest; returns the body.
std::span<const std::byte> checked_body(std::span<const std::byte> bytes) {
  if (bytes.size() < 12 + kDigestBytes) throw CorruptFileError("file truncated");
  const auto body = bytes.first(bytes.size() - kDigestBytes);
  std::array<unsigned char, kDigestBytes> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(body.data()), body.size(), digest.data());
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigestBytes) != 0) {
    throw CorruptFileError("checksum mismatch (file truncated or corrupted)");
  }
  return body;
}

void check_version(std::span<const std::byte> bytes) {
  // Version sits right after the magic; report it before the checksum so a newer
  // file gets a version error rather than a generic corruption error.
  if (bytes.size() < 12) throw CorruptFileError("file truncated");
  Reader r(bytes.subspan(8, 4));
  const auto version = r.u32();
  if (version != kModelFormatVersion) {
    throw VersionMismatchError("unsupported format version " + std::to_string(version) + " (expected " +
                               std::to_string(kModelFormatVersion) + ")");
  }
}

}  // namespace

std::vector<std::byte> serialize_model(const ModelGraph& model) {
  Writer w;
  w.magic(kModelMagic);
  w.u32(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(model.dtype_mode));
  w.u8(static_cast<std::uint8_t>(model.activation));
  w.u16(0);
  w.u32(model.n_classes);
  w.u32(model.n_input_channels);
  w.u32(static_cast<std::uint32_t>(model.nodes.size()));
  for (const auto& node : model.nodes) {
    w.u8(static_cast<std::uint8_t>(node.kind));
    w.u8(static_cast<std::uint8_t>(node.activation));
    w.u8(node.output_quant ? 1 : 0);
    w.u8(0);
    w.i32(node.stride);
    w.i32(node.padding);
    w.f64(node.eps);
    w.f64(node.output_quant ? node.output_quant->scale : 0.0);
    w.i32(node.output_quant ? node.output_quant->zero_point : 0);
    w.u32(static_cast<std::uint32_t>(node.inputs.size()));
    for (int src : node.inputs) w.i32(src);
    w.u32(static_cast<std::uint32_t>(node.params.size()));
    for (const auto& [kind, t] : node.params) {
      w.u8(static_cast<std::uint8_t>(kind));
      w.tensor(t);
    }
  }
  return std::move(w).finish();
}

ModelGraph deserialize_model(std::span<const std::byte> bytes) {
  {
    Reader head(bytes);
    head.expect_magic(kModelMagic, "model");
  }
  check_version(bytes);
  Reader r(checked_body(bytes));
  r.expect_magic(kModelMagic, "model");
  r.u32();
  ModelGraph model;
  const auto mode = r.u8();
  const auto act = r.u8();
  if (mode > 1) throw CorruptFileError("bad dtype mode");
  if (act > 2) throw CorruptFileError("bad activation tag");
  model.dtype_mode = static_cast<DTypeMode>(mode);
  model.activation = static_cast<ActivationKind>(act);
  r.u16();
  model.n_classes = r.u32();
  model.n_input_channels = r.u32();
  const auto count = r.u32();
  if (count == 0 || count > 100000) throw CorruptFileError("bad node count");
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerNode node;
    node.id = static_cast<int>(i);
    const auto kind = r.u8();
    const auto nact = r.u8();
    const bool has_q = r.u8() != 0;
    r.u8();
    if (kind > 6) throw CorruptFileError("bad layer kind tag");
    if (nact > 2) throw CorruptFileError("bad activation tag");
    node.kind = static_cast<LayerKind>(kind);
    node.activation = static_cast<ActivationKind>(nact);
    node.stride = r.i32();
    node.padding = r.i32();
    node.eps = r.f64();
    const double scale = r.f64();
    const auto zp = r.i32();
    if (has_q) node.output_quant = QuantParams{scale, zp};
    const auto n_inputs = r.u32();
    if (n_inputs > 2) throw CorruptFileError("bad input count");
    for (std::uint32_t j = 0; j < n_inputs; ++j) node.inputs.push_back(r.i32());
    const auto n_params = r.u32();
    if (n_params > 6) throw CorruptFileError("bad parameter count");
    for (std::uint32_t j = 0; j < n_params; ++j) {
      const auto pk = r.u8();
      if (pk > 5) throw CorruptFileError("bad parameter kind tag");
      if (!node.params.emplace(static_cast<ParamKind>(pk), r.tensor()).second) {
        throw CorruptFileError("duplicate parameter kind");
      }
    }
    model.nodes.push_back(std::move(node));
  }
  if (!r.at_end()) throw CorruptFileError("trailing bytes after last layer");
  try {
    validate(model);
  } catch (const Error& e) {
    throw CorruptFileError(std::string("decoded model is invalid: ") + e.what());
  }
  return model;
}

std::vector<std::byte> serialize_tensor(const Tensor& tensor) {
  Writer w;
  w.magic(kTensorMagic);
  w.u32(kModelFormatVersion);
  w.tensor(tensor);
  return std::move(w).finish();
}

Tensor deserialize_tensor(std::span<const std::byte> bytes) {
  {
    Reader head(bytes);
    head.expect_magic(kTensorMagic, "tensor");
  }
  check_version(bytes);
  Reader r(checked_body(bytes));
  r.expect_magic(kTensorMagic, "tensor");
  r.u32();
  auto t = r.tensor();
  if (!r.at_end()) throw CorruptFileError("trailing bytes after tensor");
  return t;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

ModelGraph load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

void save_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  write_file(path, serialize_tensor(tensor));
}

Tensor load_tensor(const std::filesystem::path& path) { return deserialize_tensor(read_file(path)); }

std::string sha256_hex(std::span<const std::byte> bytes) {
  std::array<unsigned char, kDigestBytes> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * kDigestBytes);
  for (auto c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string model_digest(const ModelGraph& model) { return sha256_hex(serialize_model(model)); }

}  // namespace seufi
