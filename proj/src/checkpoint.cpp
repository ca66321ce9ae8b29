#include "reid/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "reid/error.hpp"
#include "reid/image.hpp"

namespace reid {

namespace {

constexpr std::string_view kMagic = "REIDCKP1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFFu);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json header = {{"backbone", std::string(to_string(checkpoint.backbone))},
                           {"config", checkpoint.config},
                           {"seed", checkpoint.seed},
                           {"epoch", checkpoint.epoch}};
  const std::string text = header.dump();
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put_u32(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (a.data.size() != static_cast<std::size_t>(a.rows) * a.cols) {
      throw ValidationError("checkpoint array " + a.name + " has inconsistent shape");
    }
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, a.rows);
    put_u32(out, a.cols);
    for (float v : a.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < kMagic.size() || in.take(kMagic.size()) != kMagic) {
    throw ParseError("not a REIDCKP1 checkpoint (bad magic)");
  }
  Checkpoint ck;
  const std::uint32_t header_len = in.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len));
    ck.backbone = parse_branch(header.at("backbone").get<std::string>());
    ck.config = header.at("config");
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = std::string(in.take(in.u32()));
    a.rows = in.u32();
    a.cols = in.u32();
    const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
    a.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      a.data[k] = std::bit_cast<float>(in.u32());
      if (!std::isfinite(a.data[k])) throw ParseError("non-finite weight in " + a.name);
    }
    ck.arrays.push_back(std::move(a));
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint arrays");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace reid
