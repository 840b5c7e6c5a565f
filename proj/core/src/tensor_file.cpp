#include "aenc/tensor_file.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

namespace aenc {

namespace {

constexpr char kMagic[4] = {'A', 'E', 'N', 'C'};
constexpr char kBundleMagic[4] = {'A', 'E', 'N', 'B'};
constexpr std::uint64_t kMaxDim = 1ull << 40;

void put_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint8_t get_u8(std::istream& in, const std::string& ctx) {
  int c = in.get();
  if (c == EOF) throw ValidationError(ctx + ": truncated file");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream& in, const std::string& ctx) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw ValidationError(ctx + ": truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& ctx) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw ValidationError(ctx + ": truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Mat& values) {
  out.write(kMagic, 4);
  put_u8(out, kTensorVersion);
  put_u8(out, kDtypeF32);
  put_u8(out, 2);
  put_u64(out, static_cast<std::uint64_t>(values.rows()));
  put_u64(out, static_cast<std::uint64_t>(values.cols()));
  // row-major payload
  std::vector<float> row(static_cast<size_t>(values.cols()));
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c)
      row[static_cast<size_t>(c)] = static_cast<float>(values(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("tensor write failed");
}

void write_tensor(const std::filesystem::path& path, const Mat& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  write_tensor(out, values);
}

Mat read_tensor(std::istream& in, const std::string& ctx) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError(ctx + ": bad magic (expected AENC)");
  std::uint8_t version = get_u8(in, ctx);
  if (version != kTensorVersion)
    throw ValidationError(ctx + ": unsupported format version " + std::to_string(version));
  std::uint8_t dtype = get_u8(in, ctx);
  if (dtype != kDtypeF32)
    throw ValidationError(ctx + ": unsupported dtype " + std::to_string(dtype));
  std::uint8_t ndim = get_u8(in, ctx);
  if (ndim < 1 || ndim > 2)
    throw ValidationError(ctx + ": unsupported ndim " + std::to_string(ndim));
  std::uint64_t rows = 1, cols = 0;
  if (ndim == 1) {
    cols = get_u64(in, ctx);
  } else {
    rows = get_u64(in, ctx);
    cols = get_u64(in, ctx);
  }
  if (rows > kMaxDim || cols > kMaxDim)
    throw ValidationError(ctx + ": implausible shape");
  const std::uint64_t count = rows * cols;
  std::vector<float> payload(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(float))
    throw ValidationError(ctx + ": payload shorter than header shape");
  Mat out(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index r = 0; r < out.rows(); ++r)
    for (Index c = 0; c < out.cols(); ++c)
      out(r, c) = static_cast<double>(
          payload[static_cast<size_t>(r) * cols + static_cast<size_t>(c)]);
  return out;
}

Mat read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing tensor file: " + path.string());
  Mat m = read_tensor(in, path.string());
  // a trailing byte means the payload is longer than the header claims
  if (in.peek() != EOF)
    throw ValidationError(path.string() + ": payload longer than header shape");
  return m;
}

bool TensorBundle::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const auto& t) { return t.first == name; });
}

const Mat& TensorBundle::at(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw ValidationError("bundle is missing tensor: " + name);
}

void TensorBundle::add(std::string name, Mat values) {
  tensors.emplace_back(std::move(name), std::move(values));
}

void write_bundle(const std::filesystem::path& path, const TensorBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out.write(kBundleMagic, 4);
  put_u8(out, kTensorVersion);
  const std::string header = bundle.header.dump();
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(out, static_cast<std::uint32_t>(bundle.tensors.size()));
  for (const auto& [name, values] : bundle.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, values);
  }
  if (!out) throw std::runtime_error("bundle write failed: " + path.string());
}

TensorBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing bundle file: " + path.string());
  const std::string ctx = path.string();
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kBundleMagic, 4) != 0)
    throw ValidationError(ctx + ": bad magic (expected AENB)");
  std::uint8_t version = get_u8(in, ctx);
  if (version != kTensorVersion)
    throw ValidationError(ctx + ": unsupported bundle version");
  std::uint64_t header_len = get_u64(in, ctx);
  if (header_len > (1ull << 32)) throw ValidationError(ctx + ": implausible header size");
  std::string header(static_cast<size_t>(header_len), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError(ctx + ": truncated header");
  TensorBundle bundle;
  bundle.header = nlohmann::json::parse(header, nullptr, false);
  if (bundle.header.is_discarded())
    throw ValidationError(ctx + ": bundle header is not valid JSON");
  std::uint32_t count = get_u32(in, ctx);
  bundle.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(in, ctx);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw ValidationError(ctx + ": truncated tensor name");
    bundle.tensors.emplace_back(std::move(name), read_tensor(in, ctx));
  }
  return bundle;
}

}  // namespace aenc
