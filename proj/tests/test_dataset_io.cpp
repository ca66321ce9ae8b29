#include <bit>
#include <cstring>
#include <limits>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "reid/dataset_io.hpp"
#include "reid/error.hpp"
#include "support.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFFu);
}

// 81 identities; the first 46 train, the rest split across query and gallery.
// Gallery gets 983 rows in total.
std::string campus_like_manifest() {
  std::ostringstream csv;
  csv << "image_id,path,vehicle_id,camera_id,split\n";
  int row = 0;
  for (int v = 0; v < 46; ++v)
    for (int i = 0; i < 3; ++i) csv << "t" << row++ << ",img.png,V" << v << ",c" << i % 20 << ",train\n";
  int gallery = 0;
  for (int v = 46; v < 81; ++v) {
    csv << "q" << row++ << ",img.png,V" << v << ",c0,query\n";
    const int n = v < 46 + 3 ? 29 : 28;  // 3*29 + 32*28 = 983
    for (int i = 0; i < n; ++i, ++gallery) csv << "g" << row++ << ",img.png,V" << v << ",c" << 1 + i % 19 << ",gallery\n";
  }
  REQUIRE(gallery == 983);
  return csv.str();
}

}  // namespace

TEST_CASE("manifest: 81 identities with 46 for training parse and validate") {
  const Manifest m = parse_manifest(campus_like_manifest());
  std::set<std::string> all, train;
  for (const auto& r : m.records) {
    all.insert(r.vehicle_id);
    if (r.split == Split::kTrain) train.insert(r.vehicle_id);
  }
  CHECK(all.size() == 81);
  CHECK(train.size() == 46);
  CHECK(m.select(Split::kGallery).size() == 983);
  CHECK(m.select(Split::kQuery).size() == 35);
}

TEST_CASE("manifest: empty file is a parse error") {
  const auto dir = testing::scratch_dir("empty_manifest");
  std::ofstream(dir / "m.csv").close();
  CHECK_THROWS_AS(load_manifest(dir / "m.csv"), ParseError);
  CHECK_THROWS_AS(parse_manifest(""), ParseError);
}

TEST_CASE("manifest: malformed rows") {
  const std::string header = "image_id,path,vehicle_id,camera_id,split\n";
  CHECK_THROWS_AS(parse_manifest("id,path\n"), ParseError);
  CHECK_THROWS_AS(parse_manifest(header + "a,p.png,V1,c1\n"), ParseError);
  CHECK_THROWS_AS(parse_manifest(header + "a,p.png,V1,c1,validation\n"), ParseError);
  CHECK_THROWS_AS(parse_manifest(header + "a,\"p.png,V1,c1,train\n"), ParseError);
}

TEST_CASE("manifest: validation errors") {
  const std::string header = "image_id,path,vehicle_id,camera_id,split\n";
  // duplicate id
  CHECK_THROWS_AS(parse_manifest(header + "a,p,V1,c1,train\na,p,V2,c1,train\n"), ValidationError);
  // train/query overlap
  CHECK_THROWS_AS(parse_manifest(header + "a,p,V1,c1,train\nb,p,V1,c1,query\nc,p,V1,c2,gallery\n"),
                  ValidationError);
  // query identity missing from gallery
  CHECK_THROWS_AS(parse_manifest(header + "a,p,V1,c1,train\nb,p,V2,c1,query\nc,p,V3,c2,gallery\n"),
                  ValidationError);
  CHECK_NOTHROW(parse_manifest(header + "a,p,V1,c1,train\nb,p,V2,c1,query\nc,p,V2,c2,gallery\n"));
}

TEST_CASE("manifest: quoted fields, relative paths and save/load round trip") {
  const auto dir = testing::scratch_dir("manifest_rt");
  Manifest m;
  m.records = {{"a", dir / "imgs" / "a,1.png", "V\"1", "c1", Split::kTrain},
               {"b", dir / "imgs" / "b.png", "V2", "c1", Split::kQuery},
               {"c", dir / "imgs" / "c.png", "V2", "c2", Split::kGallery}};
  save_manifest(m, dir / "set.csv");
  const std::string text = read_bytes(dir / "set.csv");
  CHECK(text.find("imgs/b.png") != std::string::npos);
  CHECK(text.find(dir.string()) == std::string::npos);
  const Manifest back = load_manifest(dir / "set.csv");
  CHECK(back.dataset_name == "set");
  CHECK(back.records == m.records);
}

TEST_CASE("manifest property: random corruption is always rejected") {
  std::mt19937_64 rng(11);
  const std::string header = "image_id,path,vehicle_id,camera_id,split\n";
  for (int trial = 0; trial < 100; ++trial) {
    // A valid base: 4 train ids, 3 test ids with one query and two gallery each.
    Manifest m;
    int next = 0;
    for (int v = 0; v < 4; ++v)
      for (int i = 0; i < 2; ++i) m.records.push_back({"r" + std::to_string(next++), "", "T" + std::to_string(v), "c0", Split::kTrain});
    for (int v = 0; v < 3; ++v) {
      m.records.push_back({"r" + std::to_string(next++), "", "Q" + std::to_string(v), "c0", Split::kQuery});
      for (int i = 0; i < 2; ++i) m.records.push_back({"r" + std::to_string(next++), "", "Q" + std::to_string(v), "c1", Split::kGallery});
    }
    REQUIRE_NOTHROW(m.validate());

    std::uniform_int_distribution<int> kind(0, 2);
    std::uniform_int_distribution<std::size_t> any(0, m.records.size() - 1);
    std::uniform_int_distribution<int> qid(0, 2);
    const std::string victim = "Q" + std::to_string(qid(rng));
    switch (kind(rng)) {
      case 0: {  // duplicate an id
        std::size_t a = any(rng), b = any(rng);
        while (b == a) b = any(rng);
        m.records[b].image_id = m.records[a].image_id;
        break;
      }
      case 1: {  // leak a query identity into train
        m.records[any(rng) % 8].vehicle_id = victim;
        break;
      }
      default: {  // drop every gallery record of one query identity
        std::erase_if(m.records, [&](const ImageRecord& r) { return r.vehicle_id == victim && r.split == Split::kGallery; });
      }
    }
    CHECK_THROWS_AS(m.validate(), ValidationError);
  }
}

TEST_CASE("embeddings: 3x4 round trip is bit exact") {
  const auto dir = testing::scratch_dir("emb_rt");
  EmbeddingSet s;
  s.branch = Branch::kTransformer;
  s.ids = {"a", "b", "c"};
  s.matrix.resize(3, 4);
  s.matrix << 1, -2, 3.5f, 1e-30f, 0, -0.0f, 7, 8, 1e30f, 2, 3, 4;
  save_embeddings(s, dir / "x.reidemb");
  const EmbeddingSet back = load_embeddings(dir / "x.reidemb");
  CHECK(back.branch == s.branch);
  CHECK(back.ids == s.ids);
  REQUIRE(back.matrix.rows() == 3);
  REQUIRE(back.matrix.cols() == 4);
  for (Eigen::Index i = 0; i < s.matrix.size(); ++i) {
    CHECK(std::bit_cast<std::uint32_t>(back.matrix.data()[i]) == std::bit_cast<std::uint32_t>(s.matrix.data()[i]));
  }
}

TEST_CASE("embeddings property: random shapes round trip bit exact") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 40);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int trial = 0; trial < 50; ++trial) {
    EmbeddingSet s;
    s.branch = static_cast<Branch>(trial % 3);
    const int n = size(rng), d = size(rng);
    s.matrix.resize(n, d);
    for (Eigen::Index i = 0; i < s.matrix.size(); ++i) {
      float v;
      do v = std::bit_cast<float>(bits(rng));
      while (!std::isfinite(v));
      s.matrix.data()[i] = v;
    }
    for (int i = 0; i < n; ++i) s.ids.push_back("id_" + std::to_string(trial) + "_" + std::to_string(i));
    const EmbeddingSet back = decode_embeddings(encode_embeddings(s));
    CHECK(back.ids == s.ids);
    CHECK(back.branch == s.branch);
    CHECK(std::memcmp(back.matrix.data(), s.matrix.data(), sizeof(float) * s.matrix.size()) == 0);
  }
}

TEST_CASE("embeddings: header dim 768 with 770-float rows is rejected") {
  std::string bytes = "REIDEMB1";
  bytes += static_cast<char>(1);
  put_u32(bytes, 2);
  put_u32(bytes, 768);
  for (int i = 0; i < 2 * 770; ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(0.25f * static_cast<float>(i % 7)));
  bytes += "a\nb\n";
  CHECK_THROWS_AS(decode_embeddings(bytes), ParseError);
}

TEST_CASE("embeddings: malformed containers") {
  EmbeddingSet s;
  s.ids = {"a"};
  s.matrix = Eigen::MatrixXf::Ones(1, 2);
  const std::string good = encode_embeddings(s);

  std::string bad_magic = good;
  bad_magic[3] = 'X';
  CHECK_THROWS_AS(decode_embeddings(bad_magic), ParseError);
  CHECK_THROWS_AS(decode_embeddings(good.substr(0, good.size() - 6)), ParseError);

  std::string nan = good;
  const auto q = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  for (int i = 0; i < 4; ++i) nan[17 + i] = static_cast<char>((q >> (8 * i)) & 0xFF);
  CHECK_THROWS_AS(decode_embeddings(nan), ParseError);

  std::string bad_tag = good;
  bad_tag[8] = 9;
  CHECK_THROWS_AS(decode_embeddings(bad_tag), ParseError);

  EmbeddingSet inf = s;
  inf.matrix(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS(encode_embeddings(inf));
}

TEST_CASE("embeddings: fused tag with dim 3840 is accepted") {
  EmbeddingSet s;
  s.branch = Branch::kFused;
  s.ids = {"q0", "q1"};
  s.matrix = Eigen::MatrixXf::Constant(2, 3072 + 768, 0.5f);
  const EmbeddingSet back = decode_embeddings(encode_embeddings(s));
  CHECK(back.branch == Branch::kFused);
  CHECK(back.dim() == 3840);
}

TEST_CASE("synthetic: same seed gives byte-identical images and manifest") {
  const auto a = testing::scratch_dir("synth_a");
  const auto b = testing::scratch_dir("synth_b");
  SyntheticOptions opt{10, 8, 2, 7, 64};
  const Manifest ma = make_synthetic_dataset(opt, a);
  const Manifest mb = make_synthetic_dataset(opt, b);
  REQUIRE(ma.records.size() == 80);
  CHECK(read_bytes(a / "manifest.csv") == read_bytes(b / "manifest.csv"));
  for (const auto& r : ma.records) {
    const auto rel = r.path.lexically_relative(a);
    CHECK(read_bytes(a / rel) == read_bytes(b / rel));
  }

  const auto c = testing::scratch_dir("synth_c");
  opt.seed = 8;
  make_synthetic_dataset(opt, c);
  bool any_diff = false;
  for (const auto& r : ma.records) {
    const auto rel = r.path.lexically_relative(a);
    any_diff |= read_bytes(a / rel) != read_bytes(c / rel);
  }
  CHECK(any_diff);
}

TEST_CASE("synthetic: 10x8x2 has identity-disjoint train and query") {
  const auto dir = testing::scratch_dir("synth_split");
  const Manifest m = make_synthetic_dataset({10, 8, 2, 3, 64}, dir);
  CHECK(m.records.size() == 80);
  std::set<std::string> train, query, gallery;
  for (const auto& r : m.records) {
    if (r.split == Split::kTrain) train.insert(r.vehicle_id);
    if (r.split == Split::kQuery) query.insert(r.vehicle_id);
    if (r.split == Split::kGallery) gallery.insert(r.vehicle_id);
    CHECK(fs::exists(r.path));
  }
  CHECK_FALSE(query.empty());
  for (const auto& v : query) {
    CHECK(train.count(v) == 0);
    CHECK(gallery.count(v) == 1);
  }
  const Manifest reloaded = load_manifest(dir / "manifest.csv");
  CHECK(reloaded.records == m.records);
}

TEST_CASE("synthetic: (1, 1, 1) is a single train record") {
  const auto dir = testing::scratch_dir("synth_single");
  const Manifest m = make_synthetic_dataset({1, 1, 1, 42, 64}, dir);
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0].split == Split::kTrain);
  const Image img = read_png(m.records[0].path);
  CHECK(img.width == 64);
  CHECK(img.height == 64);
}

TEST_CASE("synthetic: counts below 1 are rejected") {
  const auto dir = testing::scratch_dir("synth_bad");
  CHECK_THROWS_AS(make_synthetic_dataset({0, 8, 2, 0, 64}, dir), ValidationError);
  CHECK_THROWS_AS(make_synthetic_dataset({3, 0, 2, 0, 64}, dir), ValidationError);
  CHECK_THROWS_AS(make_synthetic_dataset({3, 8, 0, 0, 64}, dir), ValidationError);
}
