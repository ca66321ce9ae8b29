#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "reid/dataset_io.hpp"
#include "reid/error.hpp"
#include "reid/nn/param.hpp"

namespace reid {

struct NamedArray {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;  // column-major

  bool operator==(const NamedArray&) const = default;
};

/// Single-file model container: `REIDCKP1`, u32 header length, JSON header
/// (backbone, config, seed, epoch), u32 array count, then per array u32 name
/// length, name, u32 rows, u32 cols and rows*cols little-endian f32.
struct Checkpoint {
  Branch backbone = Branch::kCnnMid;
  nlohmann::json config;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void export_params(const nn::ParamList<Scalar>& params, Checkpoint& checkpoint) {
  checkpoint.arrays.clear();
  for (const auto* p : params) {
    NamedArray a{p->name, static_cast<std::uint32_t>(p->value.rows()),
                 static_cast<std::uint32_t>(p->value.cols()), {}};
    const Eigen::MatrixXf v = p->value.template cast<float>();
    a.data.assign(v.data(), v.data() + v.size());
    checkpoint.arrays.push_back(std::move(a));
  }
}

/// Copies every array whose name and shape match a parameter. Returns the
/// number of parameters filled; with `require_all`, a missing or mis-shaped
/// parameter is an error.
template <typename Scalar>
std::size_t import_params(const Checkpoint& checkpoint, const nn::ParamList<Scalar>& params,
                          bool require_all) {
  std::size_t filled = 0;
  for (auto* p : params) {
    const NamedArray* a = checkpoint.find(p->name);
    const bool ok = a && a->rows == p->value.rows() && a->cols == p->value.cols();
    if (!ok) {
      if (require_all) throw ValidationError("checkpoint lacks a matching array for " + p->name);
      continue;
    }
    p->value = Eigen::Map<const Eigen::MatrixXf>(a->data.data(), a->rows, a->cols).template cast<Scalar>();
    ++filled;
  }
  return filled;
}

}  // namespace reid
