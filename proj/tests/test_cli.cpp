#include <sys/wait.h>

#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "reid/dataset_io.hpp"
#include "support.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(REID_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("cli keyframes: missing frames directory exits 2") {
  const auto dir = testing::scratch_dir("cli_missing");
  CHECK(run_cli("keyframes --frames " + (dir / "nope").string() + " --out " + (dir / "out").string(),
                dir / "log.txt") == 2);
}

TEST_CASE("cli keyframes: constant frames give one keyframe; threshold defaults to 0.20") {
  const auto dir = testing::scratch_dir("cli_constant");
  fs::create_directories(dir / "frames");
  for (int i = 0; i < 6; ++i)
    write_png(testing::solid_image(32, 32, 90, 90, 90), dir / "frames" / ("f" + std::to_string(i) + ".png"));
  REQUIRE(run_cli("keyframes --frames " + (dir / "frames").string() + " --out " + (dir / "out").string(),
                  dir / "log.txt") == 0);
  const auto j = read_json(dir / "out" / "boundaries.json");
  CHECK(j.at("frames") == 6);
  CHECK(j.at("boundaries").empty());
  CHECK(j.at("keyframes").size() == 1);
  CHECK(j.at("config").at("threshold").get<double>() == 0.20);
  CHECK(fs::exists(dir / "out" / "keyframe_0.png"));
}

TEST_CASE("cli keyframes: frames sort numerically and a cut is reported") {
  const auto dir = testing::scratch_dir("cli_cut");
  fs::create_directories(dir / "frames");
  // 0..11 with a cut at 10; lexical order would put 10 before 2
  for (int i = 0; i < 12; ++i) {
    const std::uint8_t v = i < 10 ? 0 : 255;
    write_png(testing::solid_image(32, 32, v, v, v), dir / "frames" / ("frame_" + std::to_string(i) + ".png"));
  }
  REQUIRE(run_cli("keyframes --frames " + (dir / "frames").string() + " --out " + (dir / "out").string(),
                  dir / "log.txt") == 0);
  const auto j = read_json(dir / "out" / "boundaries.json");
  REQUIRE(j.at("boundaries").size() == 1);
  CHECK(j.at("boundaries")[0].at("frame_index") == 10);
  CHECK(j.at("keyframes")[1].at("source") == "frame_10.png");
}

TEST_CASE("cli: bad arguments and bad thresholds exit 2") {
  const auto dir = testing::scratch_dir("cli_bad");
  fs::create_directories(dir / "frames");
  write_png(testing::solid_image(32, 32, 1, 2, 3), dir / "frames" / "0.png");
  CHECK(run_cli("keyframes --frames " + (dir / "frames").string() + " --out " + (dir / "out").string() +
                    " --threshold 1.5",
                dir / "log.txt") == 2);
  CHECK(run_cli("bogus", dir / "log.txt") == 2);
  CHECK(run_cli("synth --out " + (dir / "s").string() + " --identities 0", dir / "log.txt") == 2);
}

TEST_CASE("cli: synth, train, extract and evaluate; misaligned branch files exit 2") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const std::string d = dir.string();
  REQUIRE(run_cli("synth --out " + d + "/data --identities 4 --images 4 --cameras 2 --seed 3", dir / "log.txt") == 0);
  const std::string manifest = d + "/data/manifest.csv";
  CHECK(load_manifest(manifest).records.size() == 16);

  REQUIRE(run_cli("train --manifest " + manifest + " --out " + d + "/cnn --backbone cnn_mid --epochs 2 --P 2 --K 2",
                  dir / "log.txt") == 0);
  CHECK(fs::exists(dir / "cnn" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "cnn" / "loss_history.csv"));

  for (const char* split : {"query", "gallery"})
    REQUIRE(run_cli("extract --manifest " + manifest + " --checkpoint " + d + "/cnn/checkpoint.bin --split " + split +
                        " --out " + d + "/emb",
                    dir / "log.txt") == 0);
  const std::string q = d + "/emb/emb_cnn_mid_query.reidemb", g = d + "/emb/emb_cnn_mid_gallery.reidemb";
  REQUIRE(run_cli("evaluate --manifest " + manifest + " --query " + q + " --gallery " + g + " --out " + d + "/eval",
                  dir / "log.txt") == 0);
  const auto report = read_json(dir / "eval" / "report.json");
  CHECK(report.contains("mAP"));
  CHECK(report.at("cmc").contains("rank-1"));

  // pairing a query file with a gallery file as the second branch misaligns ids
  CHECK(run_cli("evaluate --manifest " + manifest + " --query " + q + " " + g + " --gallery " + g + " " + g +
                    " --out " + d + "/bad",
                dir / "log.txt") == 2);

  // diverging training is a numeric failure
  CHECK(run_cli("train --manifest " + manifest + " --out " + d + "/nan --epochs 3 --P 2 --K 2 --lr 1e30",
                dir / "log.txt") == 3);
}
