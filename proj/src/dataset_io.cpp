#include "reid/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "reid/error.hpp"
#include "reid/image.hpp"

namespace reid {

namespace {

constexpr std::string_view kEmbeddingMagic = "REIDEMB1";
constexpr std::string_view kManifestHeader = "image_id,path,vehicle_id,camera_id,split";

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  return fields;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFFu);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c & 0xE0) == 0xC0 && c >= 0xC2) extra = 1;
    else if ((c & 0xF0) == 0xE0) extra = 2;
    else if ((c & 0xF8) == 0xF0 && c <= 0xF4) extra = 3;
    else return false;
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= s.size()) return false;
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "query") return Split::kQuery;
  if (text == "gallery") return Split::kGallery;
  throw ParseError("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Branch branch) {
  switch (branch) {
    case Branch::kCnnMid: return "cnn_mid";
    case Branch::kTransformer: return "transformer";
    case Branch::kFused: return "fused";
  }
  return "cnn_mid";
}

Branch parse_branch(std::string_view text) {
  if (text == "cnn_mid") return Branch::kCnnMid;
  if (text == "transformer") return Branch::kTransformer;
  if (text == "fused") return Branch::kFused;
  throw ParseError("unknown branch '" + std::string(text) + "'");
}

std::vector<ImageRecord> Manifest::select(Split split) const {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

void Manifest::validate() const {
  std::unordered_set<std::string> ids;
  std::set<std::string> train_ids, query_ids, gallery_ids;
  for (const auto& r : records) {
    if (r.image_id.empty()) throw ValidationError("empty image_id");
    if (r.vehicle_id.empty()) throw ValidationError("empty vehicle_id for " + r.image_id);
    if (!ids.insert(r.image_id).second) {
      throw ValidationError("duplicate image_id '" + r.image_id + "'");
    }
    switch (r.split) {
      case Split::kTrain: train_ids.insert(r.vehicle_id); break;
      case Split::kQuery: query_ids.insert(r.vehicle_id); break;
      case Split::kGallery: gallery_ids.insert(r.vehicle_id); break;
    }
  }
  for (const auto& v : query_ids) {
    if (train_ids.count(v)) {
      throw ValidationError("vehicle '" + v + "' appears in both train and query splits");
    }
    if (!gallery_ids.count(v)) {
      throw ValidationError("query vehicle '" + v + "' has no gallery record");
    }
  }
}

Manifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir) {
  Manifest manifest;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view line = csv.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!saw_header) {
      if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      if (line != kManifestHeader) {
        throw ParseError("line " + std::to_string(line_no) + ": expected header '" +
                         std::string(kManifestHeader) + "'");
      }
      saw_header = true;
      continue;
    }
    auto fields = split_csv_line(line, line_no);
    if (fields.size() != 5) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields, got " +
                       std::to_string(fields.size()));
    }
    ImageRecord r;
    r.image_id = fields[0];
    r.path = fields[1];
    if (r.path.is_relative() && !base_dir.empty()) r.path = base_dir / r.path;
    r.vehicle_id = fields[2];
    r.camera_id = fields[3];
    try {
      r.split = parse_split(fields[4]);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    manifest.records.push_back(std::move(r));
  }
  if (!saw_header) throw ParseError("manifest is empty");
  manifest.validate();
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  Manifest manifest = parse_manifest(text, path.parent_path());
  manifest.dataset_name = path.stem().string();
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  const auto base = path.parent_path();
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : manifest.records) {
    std::filesystem::path p = r.path;
    if (!base.empty() && p.is_absolute()) {
      auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    } else if (!base.empty() && !p.is_absolute()) {
      auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out += csv_field(r.image_id) + ',' + csv_field(p.generic_string()) + ',' +
           csv_field(r.vehicle_id) + ',' + csv_field(r.camera_id) + ',' +
           std::string(to_string(r.split)) + '\n';
  }
  write_file_atomic(path, out);
}

void EmbeddingSet::validate() const {
  if (static_cast<Eigen::Index>(ids.size()) != matrix.rows()) {
    throw ValidationError("embedding set has " + std::to_string(ids.size()) + " ids but " +
                          std::to_string(matrix.rows()) + " rows");
  }
  if (matrix.rows() > 0 && matrix.cols() < 1) throw ValidationError("embedding dim must be positive");
  if (!matrix.allFinite()) throw NumericError("embedding set contains non-finite values");
  for (const auto& id : ids) {
    if (id.empty() || id.find('\n') != std::string::npos) {
      throw ValidationError("embedding id must be non-empty and newline-free");
    }
  }
}

std::string encode_embeddings(const EmbeddingSet& set) {
  set.validate();
  std::string out(kEmbeddingMagic);
  out += static_cast<char>(set.branch);
  put_u32(out, static_cast<std::uint32_t>(set.count()));
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  out.reserve(out.size() + static_cast<std::size_t>(set.count() * set.dim()) * 4);
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    for (Eigen::Index j = 0; j < set.dim(); ++j) {
      put_u32(out, std::bit_cast<std::uint32_t>(set.matrix(i, j)));
    }
  }
  for (const auto& id : set.ids) {
    out += id;
    out += '\n';
  }
  return out;
}

EmbeddingSet decode_embeddings(std::string_view bytes) {
  constexpr std::size_t header = 8 + 1 + 4 + 4;
  if (bytes.size() < header || bytes.substr(0, 8) != kEmbeddingMagic) {
    throw ParseError("not a REIDEMB1 file (bad magic)");
  }
  const auto tag = static_cast<std::uint8_t>(bytes[8]);
  if (tag > 2) throw ParseError("unknown branch tag " + std::to_string(tag));
  EmbeddingSet set;
  set.branch = static_cast<Branch>(tag);
  const std::uint32_t count = get_u32(bytes, 9);
  const std::uint32_t dim = get_u32(bytes, 13);
  if (count > 0 && dim == 0) throw ParseError("zero dim with non-empty payload");
  const std::size_t payload = static_cast<std::size_t>(count) * dim * 4;
  if (bytes.size() < header + payload) throw ParseError("payload shorter than header count x dim");

  set.matrix.resize(count, dim);
  std::size_t off = header;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j, off += 4) {
      const float v = std::bit_cast<float>(get_u32(bytes, off));
      if (!std::isfinite(v)) throw ParseError("non-finite value in embedding payload");
      set.matrix(i, j) = v;
    }
  }

  std::string_view tail = bytes.substr(off);
  while (!tail.empty()) {
    const std::size_t nl = tail.find('\n');
    if (nl == std::string_view::npos) throw ParseError("id block not newline-terminated");
    std::string_view id = tail.substr(0, nl);
    for (char ch : id) {
      if (static_cast<unsigned char>(ch) < 0x20) {
        throw ParseError("id block contains binary data (payload longer than count x dim?)");
      }
    }
    if (id.empty()) throw ParseError("empty id in id block");
    if (!valid_utf8(id)) throw ParseError("id block is not UTF-8 (payload longer than count x dim?)");
    set.ids.emplace_back(id);
    tail.remove_prefix(nl + 1);
  }
  if (set.ids.size() != count) {
    throw ParseError("id block has " + std::to_string(set.ids.size()) + " ids, header says " +
                     std::to_string(count));
  }
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, encode_embeddings(set));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(read_file(path));
}

}  // namespace reid
