#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace casceq {

struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;  // row-major

  std::size_t element_count() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named f32 tensors plus an optional JSON metadata object, stored in the
/// HSD1 layout:
///
///   bytes 0-3   magic "HSD1"
///   bytes 4-7   header length H, uint32 little-endian
///   bytes 8..   UTF-8 JSON header {"tensors":[{name,dtype,shape,offset}], "metadata":{...}}
///   payload     little-endian f32 blocks; offsets are relative to the
///               payload start and 64-byte aligned
///
/// The "metadata" key is omitted when the metadata object is empty.
class TensorContainer {
 public:
  static constexpr std::size_t kAlignment = 64;

  /// Throws InputError on a duplicate name or a shape/size mismatch.
  void add(Tensor tensor);
  void add(std::string name, std::vector<std::int64_t> shape, std::vector<float> data);

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }

  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::vector<Tensor> tensors_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

std::vector<std::byte> serialize_tensor_container(const TensorContainer& container);
TensorContainer deserialize_tensor_container(std::span<const std::byte> bytes);

void write_tensor_container(const TensorContainer& container, const std::filesystem::path& path);
TensorContainer read_tensor_container(const std::filesystem::path& path);

}  // namespace casceq
