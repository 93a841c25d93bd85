#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "gilt/tensor.hpp"

namespace gilt::ad {

namespace {

constexpr char kMagic[8] = {'G', 'I', 'L', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
  return to_little(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(e.tensor.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(e.tensor.cols()));
    const Matrix& v = e.tensor.value();
    for (Index i = 0; i < v.size(); ++i) put<double>(out, v.data()[i]);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  auto count = take<std::uint32_t>(in, path);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    auto len = take<std::uint32_t>(in, path);
    a.name.resize(len);
    in.read(a.name.data(), len);
    auto rank = take<std::uint32_t>(in, path);
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(take<std::uint64_t>(in, path));
      n *= a.shape.back();
    }
    a.values.resize(n);
    for (auto& v : a.values) v = take<double>(in, path);
    out.push_back(std::move(a));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  auto arrays = read_checkpoint(path);
  if (arrays.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(arrays.size()) +
                             " entries, model expects " + std::to_string(params.size()));
  }
  for (const auto& a : arrays) {
    if (!params.contains(a.name)) throw std::runtime_error("unexpected parameter " + a.name);
    Tensor& t = params.get(a.name);
    if (a.shape.size() != 2 || a.shape[0] != static_cast<std::uint64_t>(t.rows()) ||
        a.shape[1] != static_cast<std::uint64_t>(t.cols())) {
      throw std::runtime_error("shape mismatch for parameter " + a.name);
    }
    std::copy(a.values.begin(), a.values.end(), t.mutable_value().data());
  }
}

}  // namespace gilt::ad
