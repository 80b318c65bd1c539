#include "casceq/tensor_container.hpp"
#include "casceq/tensor_convert.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "casceq/error.hpp"

namespace casceq {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'S', 'D', '1'};

std::size_t checked_product(const std::vector<std::int64_t>& shape) {
  std::size_t count = 1;
  for (auto dim : shape) {
    if (dim < 0) throw InputError("negative tensor dimension");
    const auto d = static_cast<std::size_t>(dim);
    if (d != 0 && count > std::numeric_limits<std::size_t>::max() / d) {
      throw InputError("tensor shape overflows");
    }
    count *= d;
  }
  return count;
}

std::size_t align_up(std::size_t value) {
  const std::size_t a = TensorContainer::kAlignment;
  return (value + a - 1) / a * a;
}

void put_u32_le(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32_le(std::span<const std::byte> in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

void put_f32_le(std::byte* dst, float value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::byte>((bits >> (8 * i)) & 0xffu);
}

float get_f32_le(const std::byte* src) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(src[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::size_t Tensor::element_count() const { return checked_product(shape); }

void TensorContainer::add(Tensor tensor) {
  if (tensor.name.empty()) throw InputError("tensor name must not be empty");
  if (find(tensor.name)) throw InputError("duplicate tensor name '" + tensor.name + "'");
  if (tensor.element_count() != tensor.data.size()) {
    throw InputError("tensor '" + tensor.name + "': shape holds " +
                     std::to_string(tensor.element_count()) + " values but " +
                     std::to_string(tensor.data.size()) + " were given");
  }
  tensors_.push_back(std::move(tensor));
}

void TensorContainer::add(std::string name, std::vector<std::int64_t> shape,
                          std::vector<float> data) {
  add(Tensor{std::move(name), std::move(shape), std::move(data)});
}

const Tensor* TensorContainer::find(std::string_view name) const {
  auto it = std::find_if(tensors_.begin(), tensors_.end(),
                         [&](const Tensor& t) { return t.name == name; });
  return it == tensors_.end() ? nullptr : &*it;
}

const Tensor& TensorContainer::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw InputError("tensor '" + std::string(name) + "' not found");
}

std::vector<std::byte> serialize_tensor_container(const TensorContainer& container) {
  json entries = json::array();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : container.tensors()) {
    offsets.push_back(offset);
    entries.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}});
    offset = align_up(offset + t.data.size() * sizeof(float));
  }
  json header = {{"tensors", entries}};
  if (!container.metadata().is_null() && !container.metadata().empty()) {
    header["metadata"] = container.metadata();
  }
  const std::string text = header.dump();
  if (text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw InputError("tensor container header too large");
  }

  std::vector<std::byte> out;
  out.reserve(8 + text.size() + offset);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32_le(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));

  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset, std::byte{0});
  for (std::size_t i = 0; i < container.tensors().size(); ++i) {
    std::byte* dst = out.data() + payload_start + offsets[i];
    for (float v : container.tensors()[i].data) {
      put_f32_le(dst, v);
      dst += sizeof(float);
    }
  }
  return out;
}

TensorContainer deserialize_tensor_container(std::span<const std::byte> bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                      [](char c, std::byte b) { return static_cast<std::byte>(c) == b; })) {
    throw InputError("bad magic: not an HSD1 tensor container");
  }
  const std::size_t header_len = get_u32_le(bytes.subspan(4, 4));
  if (bytes.size() < 8 + header_len) throw InputError("truncated tensor container header");
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);

  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len);
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid tensor container header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array()) {
    throw InputError("tensor container header lacks a 'tensors' array");
  }

  const auto payload = bytes.subspan(8 + header_len);
  TensorContainer container;
  try {
    for (const auto& entry : header["tensors"]) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw InputError("tensor '" + t.name + "': unsupported dtype");
      }
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (offset % TensorContainer::kAlignment != 0) {
        throw InputError("tensor '" + t.name + "': offset not 64-byte aligned");
      }
      const std::size_t count = checked_product(t.shape);
      if (offset > payload.size() || count > (payload.size() - offset) / sizeof(float)) {
        throw InputError("tensor '" + t.name + "': truncated payload");
      }
      t.data.resize(count);
      const std::byte* src = payload.data() + offset;
      for (std::size_t i = 0; i < count; ++i) t.data[i] = get_f32_le(src + i * sizeof(float));
      container.add(std::move(t));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed tensor entry: ") + e.what());
  }
  if (auto it = header.find("metadata"); it != header.end()) {
    if (!it->is_object()) throw InputError("tensor container metadata must be an object");
    container.metadata() = *it;
  }
  return container;
}

void write_tensor_container(const TensorContainer& container, const std::filesystem::path& path) {
  const auto bytes = serialize_tensor_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write tensor container: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed: " + path.string());
}

TensorContainer read_tensor_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tensor container: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_tensor_container(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace casceq

namespace casceq {

Tensor matrix_tensor(std::string name, const MatrixD& m) {
  Tensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

Tensor vector_tensor(std::string name, const VectorD& v) {
  Tensor t{std::move(name), {v.size()}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v(i)));
  return t;
}

MatrixD tensor_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw InputError("tensor '" + t.name + "' must be 2-D");
  MatrixD m(t.shape[0], t.shape[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[i++];
  }
  return m;
}

VectorD tensor_vector(const Tensor& t) {
  if (t.shape.size() != 1) throw InputError("tensor '" + t.name + "' must be 1-D");
  VectorD v(t.shape[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.data[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace casceq
