// Command-line front end: synth, keyframes, train, extract, evaluate.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "CLI11.hpp"
#include "json.hpp"
#include "reid/config_json.hpp"
#include "reid/dataset_io.hpp"
#include "reid/error.hpp"
#include "reid/evaluation.hpp"
#include "reid/fusion.hpp"
#include "reid/keyframe.hpp"
#include "reid/training.hpp"

namespace fs = std::filesystem;
using namespace reid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

nlohmann::json read_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

template <typename T>
T section(const nlohmann::json& config, const char* key, T fallback = T{}) {
  if (config.contains(key)) from_json(config.at(key), fallback);
  return fallback;
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + out);
  return dir;
}

/// Frame files sorted by the integer embedded in their stem.
std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("frames directory " + dir.string() + " does not exist");
  std::vector<std::pair<long long, fs::path>> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") continue;
    const std::string stem = entry.path().stem().string();
    std::string digits;
    for (char c : stem)
      if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
    frames.emplace_back(digits.empty() ? -1 : std::stoll(digits), entry.path());
  }
  if (frames.empty()) throw ValidationError("no .png frames in " + dir.string());
  std::sort(frames.begin(), frames.end());
  std::vector<fs::path> out;
  for (auto& f : frames) out.push_back(std::move(f.second));
  return out;
}

struct KeyframeArgs {
  std::string frames, out, config;
  std::optional<double> threshold;
  std::optional<int> grid, bins;
};

int cmd_keyframes(const KeyframeArgs& a) {
  const auto config_json = read_config(a.config);
  KeyframeConfig kc = section<KeyframeConfig>(config_json, "keyframe");
  if (a.threshold) kc.threshold = *a.threshold;
  if (a.grid) kc.grid = *a.grid;
  if (a.bins) kc.bins = *a.bins;
  kc.validate();
  const auto paths = list_frames(a.frames);
  const fs::path out = prepare_out(a.out);

  std::vector<FrameHistogram> hists;
  for (const auto& p : paths) hists.push_back(grid_histogram(read_png(p), kc));
  const auto boundaries = detect_shot_boundaries(hists, kc.threshold);

  nlohmann::json j = {{"frames", paths.size()}, {"config", kc}, {"boundaries", nlohmann::json::array()},
                      {"keyframes", nlohmann::json::array()}};
  std::vector<int> keyframes{0};
  for (const auto& b : boundaries) {
    j["boundaries"].push_back({{"frame_index", b.frame_index}, {"score", b.score}});
    keyframes.push_back(b.frame_index);
  }
  for (int idx : keyframes) {
    const std::string name = "keyframe_" + std::to_string(idx) + ".png";
    fs::copy_file(paths[idx], out / name, fs::copy_options::overwrite_existing);
    j["keyframes"].push_back({{"frame_index", idx}, {"source", paths[idx].filename().string()}, {"file", name}});
  }
  write_file_atomic(out / "boundaries.json", j.dump(2) + "\n");
  std::cout << paths.size() << " frames, " << boundaries.size() << " boundaries, " << keyframes.size()
            << " keyframes\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  SyntheticOptions options{10, 8, 2, 7, 64};
};

int cmd_synth(const SynthArgs& a) {
  const fs::path out = prepare_out(a.out);
  const Manifest m = make_synthetic_dataset(a.options, out);
  std::cout << m.records.size() << " images, manifest " << (out / "manifest.csv").string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, out, config, backbone = "cnn_mid";
  std::optional<std::string> profile;
  std::optional<int> epochs, P, K, steps;
  std::optional<double> lr, weight_decay, margin;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const auto cfg = read_config(a.config);
  const std::string profile = a.profile ? *a.profile : cfg.value("profile", std::string("toy"));
  require(profile == "toy" || profile == "full", "profile must be toy or full");
  const bool toy = profile == "toy";

  BackboneSpec spec;
  spec.kind = parse_branch(a.backbone);
  spec.cnn = section<CnnMidConfig>(cfg, "cnn_mid", toy ? CnnMidConfig::toy() : CnnMidConfig{});
  spec.transformer =
      section<WinTransformerConfig>(cfg, "transformer", toy ? WinTransformerConfig::toy() : WinTransformerConfig{});
  auto sampler = section<SamplerConfig>(cfg, "sampler");
  auto triplet = section<TripletConfig>(cfg, "triplet");
  auto tc = section<TrainConfig>(cfg, "train");
  tc.backbone = spec.kind;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.steps) tc.steps_per_epoch = *a.steps;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.weight_decay) tc.weight_decay = *a.weight_decay;
  if (a.seed) tc.seed = sampler.seed = *a.seed;
  if (a.P) sampler.identities_per_batch = *a.P;
  if (a.K) sampler.instances_per_identity = *a.K;
  if (a.margin) triplet.margin = *a.margin;

  const Manifest manifest = load_manifest(a.manifest);
  const fs::path out = prepare_out(a.out);
  const TrainResult result = train(manifest, spec, sampler, triplet, tc);
  save_checkpoint(result.checkpoint, out / "checkpoint.bin");
  write_file_atomic(out / "loss_history.csv", loss_history_csv(result.history));
  const nlohmann::json run = {{"profile", profile}, {"sampler", sampler}, {"triplet", triplet}, {"train", tc},
                              {std::string(to_string(spec.kind)), result.checkpoint.config}};
  write_file_atomic(out / "run_config.json", run.dump(2) + "\n");
  std::cout << "trained " << to_string(spec.kind) << " for " << tc.epochs << " epochs ("
            << result.history.size() << " steps), final loss " << result.history.back().loss << "\n";
  return kExitOk;
}

struct ExtractArgs {
  std::string manifest, checkpoint, split = "query", out;
};

int cmd_extract(const ExtractArgs& a) {
  const Manifest manifest = load_manifest(a.manifest);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto model = backbone_from_checkpoint(ck);
  const Split split = parse_split(a.split);
  const fs::path out = prepare_out(a.out);
  const EmbeddingSet set = extract_embeddings(*model, manifest, split);
  const fs::path file = out / ("emb_" + std::string(to_string(set.branch)) + "_" + a.split + ".reidemb");
  save_embeddings(set, file);
  std::cout << set.count() << " x " << set.dim() << " -> " << file.string() << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string manifest, out, config, experiment;
  std::vector<std::string> query, gallery;
  bool include_same_camera = false;
  bool l2_normalize = false;
  int topk = 10;
  int panels = -1;
};

FusedEmbeddingSet load_side(const std::vector<std::string>& files, const FusionOptions& fusion,
                            std::string* label) {
  require(files.size() == 1 || files.size() == 2, "pass one or two embedding files per set");
  const EmbeddingSet a = load_embeddings(files[0]);
  if (files.size() == 1) {
    *label = std::string(to_string(a.branch));
    return as_fused(a);
  }
  const EmbeddingSet b = load_embeddings(files[1]);
  *label = std::string(to_string(a.branch)) + "+" + std::string(to_string(b.branch));
  return fuse_embeddings(a, b, fusion);
}

std::vector<ImageRecord> records_for(const std::vector<std::string>& ids, const Manifest& manifest) {
  std::unordered_map<std::string, const ImageRecord*> by_id;
  for (const auto& r : manifest.records) by_id[r.image_id] = &r;
  std::vector<ImageRecord> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("embedding id " + id + " is not in the manifest");
    out.push_back(*it->second);
  }
  return out;
}

std::string file_safe(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const auto cfg = read_config(a.config);
  EvalProtocol protocol = section<EvalProtocol>(cfg, "eval");
  if (a.include_same_camera) protocol.exclude_same_camera = false;
  protocol.validate();
  require(a.topk >= 1, "--topk must be >= 1");

  const Manifest manifest = load_manifest(a.manifest);
  FusionOptions fusion{a.l2_normalize};
  std::string q_label, g_label;
  const FusedEmbeddingSet query = load_side(a.query, fusion, &q_label);
  const FusedEmbeddingSet gallery = load_side(a.gallery, fusion, &g_label);
  require(q_label == g_label, "query (" + q_label + ") and gallery (" + g_label + ") branches differ");

  const auto q_records = records_for(query.ids, manifest);
  const auto g_records = records_for(gallery.ids, manifest);
  const Eigen::MatrixXd dist = distance_matrix(query, gallery);
  const auto rankings = rank_all(dist, query.ids);
  const std::string experiment = a.experiment.empty() ? q_label : a.experiment;
  const EvalReport report = evaluate(experiment, q_records, g_records, rankings, protocol);
  for (const auto& id : report.skipped) std::cerr << "warning: query " << id << " has no valid gallery match; skipped\n";

  const fs::path out = prepare_out(a.out);
  write_file_atomic(out / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(out / "report.md", report.to_table());

  const int panels = a.panels < 0 ? static_cast<int>(q_records.size()) : a.panels;
  for (int i = 0; i < std::min<int>(panels, static_cast<int>(q_records.size())); ++i) {
    const auto labels = relevance_labels(q_records[i], g_records, protocol);
    std::vector<fs::path> shown;
    std::vector<std::uint8_t> rel;
    for (int j : rankings[i].ordering) {
      if (static_cast<int>(shown.size()) == a.topk) break;
      if (!labels.valid[j]) continue;
      shown.push_back(g_records[j].path);
      rel.push_back(labels.relevant[j]);
    }
    render_topk_grid(q_records[i].path, shown, rel, a.topk, out / ("topk_" + file_safe(q_records[i].image_id) + ".png"));
  }
  std::cout << report.to_table();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicle re-identification toolkit"};
  app.require_subcommand(1);

  KeyframeArgs kf;
  auto* keyframes = app.add_subcommand("keyframes", "Shot-boundary keyframe extraction over a frame directory");
  keyframes->add_option("--frames", kf.frames, "Directory of numbered .png frames")->required();
  keyframes->add_option("--out", kf.out, "Output directory")->required();
  keyframes->add_option("--config", kf.config, "JSON run config");
  keyframes->add_option("--threshold", kf.threshold, "Histogram difference threshold (default 0.20)");
  keyframes->add_option("--grid", kf.grid, "Grid cells per side (default 16)");
  keyframes->add_option("--bins", kf.bins, "Histogram bins per channel (default 16)");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Render a synthetic vehicle dataset");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--identities", sy.options.n_identities, "Vehicle identities")->capture_default_str();
  synth->add_option("--images", sy.options.images_per_identity, "Images per identity")->capture_default_str();
  synth->add_option("--cameras", sy.options.n_cameras, "Cameras")->capture_default_str();
  synth->add_option("--seed", sy.options.seed, "Seed")->capture_default_str();
  synth->add_option("--size", sy.options.image_size, "Image side in pixels")->capture_default_str();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Batch-hard triplet training of one backbone");
  trainc->add_option("--manifest", tr.manifest, "Manifest CSV")->required();
  trainc->add_option("--out", tr.out, "Output directory")->required();
  trainc->add_option("--backbone", tr.backbone, "cnn_mid or transformer")->capture_default_str();
  trainc->add_option("--config", tr.config, "JSON run config");
  trainc->add_option("--profile", tr.profile, "toy (default) or full backbone sizes");
  trainc->add_option("--epochs", tr.epochs);
  trainc->add_option("--steps-per-epoch", tr.steps);
  trainc->add_option("--lr", tr.lr);
  trainc->add_option("--weight-decay", tr.weight_decay);
  trainc->add_option("--margin", tr.margin);
  trainc->add_option("--P", tr.P, "Identities per batch");
  trainc->add_option("--K", tr.K, "Instances per identity");
  trainc->add_option("--seed", tr.seed);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Embed one split with a trained checkpoint");
  extract->add_option("--manifest", ex.manifest, "Manifest CSV")->required();
  extract->add_option("--checkpoint", ex.checkpoint, "checkpoint.bin")->required();
  extract->add_option("--split", ex.split, "train, query or gallery")->capture_default_str();
  extract->add_option("--out", ex.out, "Output directory")->required();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Rank the gallery and report mAP / CMC");
  evaluate_cmd->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  evaluate_cmd->add_option("--query", ev.query, "One or two query embedding files")->required()->expected(1, 2);
  evaluate_cmd->add_option("--gallery", ev.gallery, "One or two gallery embedding files")->required()->expected(1, 2);
  evaluate_cmd->add_option("--out", ev.out, "Output directory")->required();
  evaluate_cmd->add_option("--config", ev.config, "JSON run config");
  evaluate_cmd->add_option("--experiment", ev.experiment, "Report label");
  evaluate_cmd->add_option("--topk", ev.topk, "Panel width")->capture_default_str();
  evaluate_cmd->add_option("--panels", ev.panels, "Number of query panels (-1 = all)")->capture_default_str();
  evaluate_cmd->add_flag("--include-same-camera", ev.include_same_camera,
                         "Score same-camera matches instead of excluding them");
  evaluate_cmd->add_flag("--l2-normalize", ev.l2_normalize, "L2-normalize each branch before fusing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*keyframes) return cmd_keyframes(kf);
    if (*synth) return cmd_synth(sy);
    if (*trainc) return cmd_train(tr);
    if (*extract) return cmd_extract(ex);
    if (*evaluate_cmd) return cmd_evaluate(ev);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
