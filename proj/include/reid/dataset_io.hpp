#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reid {

enum class Split { kTrain, kQuery, kGallery };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One labeled vehicle crop.
struct ImageRecord {
  std::string image_id;
  std::filesystem::path path;
  std::string vehicle_id;
  std::string camera_id;
  Split split = Split::kTrain;

  bool operator==(const ImageRecord&) const = default;
};

struct Manifest {
  std::string dataset_name;
  std::vector<ImageRecord> records;

  std::vector<ImageRecord> select(Split split) const;
  /// Throws ValidationError on duplicate ids, train/query identity overlap,
  /// or a query identity with no gallery record.
  void validate() const;
};

/// Parses the `image_id,path,vehicle_id,camera_id,split` CSV. Relative image
/// paths are resolved against the manifest's directory. The dataset name is
/// the file stem.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir = {});
/// Paths are written relative to the manifest directory when possible.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

enum class Branch : std::uint8_t { kCnnMid = 0, kTransformer = 1, kFused = 2 };

std::string_view to_string(Branch branch);
Branch parse_branch(std::string_view text);

/// Row-aligned feature matrix for a list of image ids.
struct EmbeddingSet {
  Branch branch = Branch::kCnnMid;
  std::vector<std::string> ids;
  Eigen::MatrixXf matrix;  // count x dim

  Eigen::Index count() const { return matrix.rows(); }
  Eigen::Index dim() const { return matrix.cols(); }
  void validate() const;
};

/// `REIDEMB1` container: magic, branch byte, u32 count, u32 dim, count*dim
/// little-endian f32 row-major, then one id per line.
std::string encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(std::string_view bytes);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

struct SyntheticOptions {
  int n_identities = 10;
  int images_per_identity = 8;
  int n_cameras = 2;
  std::uint64_t seed = 0;
  int image_size = 64;
};

/// Renders a desk-scale vehicle dataset under `out_dir` (images/ + manifest.csv)
/// and returns the manifest. Deterministic for a fixed seed.
Manifest make_synthetic_dataset(const SyntheticOptions& options,
                                const std::filesystem::path& out_dir);

}  // namespace reid
