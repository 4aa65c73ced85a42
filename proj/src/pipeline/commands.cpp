#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "uflow/checkpoint.hpp"
#include "uflow/errors.hpp"
#include "uflow/eval.hpp"
#include "uflow/image_io.hpp"
#include "uflow/parallel.hpp"
#include "uflow/pipeline.hpp"

namespace uflow {

namespace fs = std::filesystem;

namespace {

// Sub-seeds of the run seed.
enum SeedTag : std::uint64_t { kSynthetic = 1, kGraph = 2, kShuffle = 3 };

struct Entry {
  std::string name;  // "<split>/<index>", the stem shared by every artifact
  std::string split;
  bool anomalous = false;
  int height = 0;
  int width = 0;
};

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path prepare_output(const PipelineConfig& config, const fs::path& dir, bool force) {
  const fs::path out = config.resolve(dir);
  if (fs::exists(out)) {
    if (!force) throw IoError(out.string() + " already exists (use --force to replace it)");
    spdlog::warn("replacing {}", out.string());
    fs::remove_all(out);
  }
  fs::create_directories(out);
  write_text(out / "config.ini", emit_config(config));
  return out;
}

void write_manifest(const fs::path& path, const std::vector<Entry>& entries) {
  std::ostringstream o;
  o << "name,split,label,height,width\n";
  for (const auto& e : entries) {
    o << e.name << ',' << e.split << ',' << (e.anomalous ? 1 : 0) << ',' << e.height << ',' << e.width << '\n';
  }
  write_text(path, o.str());
}

std::vector<Entry> read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw IoError("missing manifest " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "name,split,label,height,width") throw ParseError(path.string() + ": unexpected header");
  std::vector<Entry> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    Entry e;
    std::string label, h, w;
    if (!std::getline(fields, e.name, ',') || !std::getline(fields, e.split, ',') ||
        !std::getline(fields, label, ',') || !std::getline(fields, h, ',') || !std::getline(fields, w)) {
      throw ParseError(path.string() + ": malformed row " + std::to_string(row));
    }
    if ((e.split != "train" && e.split != "test") || (label != "0" && label != "1")) {
      throw ParseError(path.string() + ": malformed row " + std::to_string(row));
    }
    e.anomalous = label == "1";
    try {
      e.height = std::stoi(h);
      e.width = std::stoi(w);
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ": malformed row " + std::to_string(row));
    }
    out.push_back(std::move(e));
  }
  return out;
}

fs::path artifact(const fs::path& dir, const Entry& e, const std::string& suffix) {
  return dir / (e.name + suffix);
}

std::vector<Entry> select(const std::vector<Entry>& entries, const std::string& split) {
  std::vector<Entry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

std::string index_name(const std::string& split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%04d", split.c_str(), i);
  return buf;
}

}  // namespace

void run_gen_data(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path out = prepare_output(config, config.data_dir, options.force);
  SynthConfig synth = config.synthetic;
  synth.seed = derive_seed(config.seed, kSynthetic);
  spdlog::info("generating {} train and {} test images", synth.n_train,
               synth.n_test_normal + synth.n_test_anomalous);
  const Dataset data = gen_dataset(synth, options.jobs);
  fs::create_directories(out / "train");
  fs::create_directories(out / "test");
  fs::create_directories(out / "gt" / "test");
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    entries.push_back({index_name("train", static_cast<int>(i)), "train", false, synth.image_size, synth.image_size});
    write_pgm(data.train[i], artifact(out, entries.back(), ".pgm"));
  }
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    entries.push_back({index_name("test", static_cast<int>(i)), "test", data.test_labels[i], synth.image_size,
                       synth.image_size});
    write_pgm(data.test[i], artifact(out, entries.back(), ".pgm"));
    write_mask_pgm(data.test_masks[i], artifact(out / "gt", entries.back(), ".pgm"));
  }
  write_manifest(out / "manifest.csv", entries);
}

void run_extract(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path data = config.resolve(config.data_dir);
  const auto entries = read_manifest(data);
  const fs::path out = prepare_output(config, config.features_dir, options.force);
  fs::create_directories(out / "train");
  fs::create_directories(out / "test");
  spdlog::info("extracting features of {} images", entries.size());
  parallel_for(entries.size(), options.jobs, [&](std::size_t i) {
    const Image image = read_pgm(artifact(data, entries[i], ".pgm"));
    if (image.height != entries[i].height || image.width != entries[i].width) {
      throw ShapeError(entries[i].name + ": image size differs from the manifest");
    }
    write_ufv(extract_multiscale(image, config.extractor), artifact(out, entries[i], ".ufv"));
  });
  write_manifest(out / "manifest.csv", entries);
}

void run_train(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path features = config.resolve(config.features_dir);
  const auto entries = select(read_manifest(features), "train");
  if (entries.empty()) throw ParameterError("no training features in " + features.string());
  std::vector<FeaturePyramid> dataset(entries.size());
  parallel_for(entries.size(), options.jobs, [&](std::size_t i) {
    dataset[i] = read_ufv(artifact(features, entries[i], ".ufv"));
  });
  const fs::path out = prepare_output(config, config.model_dir, options.force);
  UFlowGraph graph(config.graph_config(), derive_seed(config.seed, kGraph));
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, kShuffle);
  spdlog::info("training on {} pyramids for {} epochs ({} parameters)", dataset.size(), tc.epochs,
               graph.parameter_count());
  const TrainHistory history = train(graph, dataset, tc);
  for (std::size_t e = 0; e < history.mean_nll.size(); ++e) {
    spdlog::debug("epoch {} mean nll {}", e, history.mean_nll[e]);
  }
  spdlog::info("final mean nll {}", history.mean_nll.back());
  save_checkpoint(graph, out / "model.ufm");
  write_loss_csv(history, out / "loss.csv");
}

void run_score(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path features = config.resolve(config.features_dir);
  const auto entries = read_manifest(features);
  const UFlowGraph graph = load_checkpoint(config.resolve(config.model_dir) / "model.ufm");
  const fs::path out = prepare_output(config, config.scores_dir, options.force);
  fs::create_directories(out / "train");
  fs::create_directories(out / "test");
  spdlog::info("scoring {} pyramids", entries.size());
  std::vector<std::vector<double>> stats(entries.size());
  parallel_for(entries.size(), options.jobs, [&](std::size_t i) {
    const auto& e = entries[i];
    const LatentPyramid z = graph.forward(read_ufv(artifact(features, e, ".ufv")));
    const Raster as = upsample_bilinear(likelihood_score_map(z, config.formula), e.height, e.width);
    const Raster nfa = upsample_bilinear(log_nfa_map(z, config.nfa).map, e.height, e.width);
    write_pfm(as, artifact(out, e, ".as.pfm"));
    write_pgm16_scaled(as, artifact(out, e, ".as.pgm"));
    write_pfm(nfa, artifact(out, e, ".lognfa.pfm"));
    stats[i] = embedding_stats(z);
  });
  std::ostringstream csv;
  csv << "name";
  for (std::size_t k = 0; k < stats.front().size() / 2; ++k) csv << ",mean_sq_" << k << ",std_sq_" << k;
  csv << '\n';
  for (std::size_t i = 0; i < entries.size(); ++i) {
    csv << entries[i].name;
    for (double v : stats[i]) csv << ',' << fmt_real(v);
    csv << '\n';
  }
  write_text(out / "embedding_stats.csv", csv.str());
  write_manifest(out / "manifest.csv", entries);
}

void run_segment(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path scores = config.resolve(config.scores_dir);
  const auto entries = read_manifest(scores);
  const fs::path out = prepare_output(config, config.masks_dir, options.force);
  fs::create_directories(out / "train");
  fs::create_directories(out / "test");
  spdlog::info("segmenting {} maps at log NFA < {}", entries.size(), options.log_nfa_threshold);
  parallel_for(entries.size(), options.jobs, [&](std::size_t i) {
    const LogNfaMap map{read_pfm(artifact(scores, entries[i], ".lognfa.pfm")), 0};
    write_mask_pgm(auto_segment(map, options.log_nfa_threshold), artifact(out, entries[i], ".pgm"));
  });
  write_manifest(out / "manifest.csv", entries);
}

void run_eval(const PipelineConfig& config, const CommandOptions& options) {
  const fs::path scores = config.resolve(config.scores_dir);
  const fs::path data = config.resolve(config.data_dir);
  const auto entries = read_manifest(scores);
  const auto train_entries = select(entries, "train");
  const auto test_entries = select(entries, "test");
  if (test_entries.empty()) throw ParameterError("no test maps in " + scores.string());

  // Score rasters are "higher = more anomalous": AS as is, -log NFA for nfa.
  auto load_score = [&](const Entry& e) {
    if (config.score == ScoreKind::as) return read_pfm(artifact(scores, e, ".as.pfm"));
    Raster r = read_pfm(artifact(scores, e, ".lognfa.pfm"));
    for (double& v : r.values) v = -v;
    return r;
  };
  LabeledMaps test(test_entries.size());
  std::vector<Raster> log_nfa(test_entries.size());
  parallel_for(test_entries.size(), options.jobs, [&](std::size_t i) {
    const auto& e = test_entries[i];
    test[i] = {load_score(e), read_mask_pgm(artifact(data / "gt", e, ".pgm")), e.anomalous};
    log_nfa[i] = read_pfm(artifact(scores, e, ".lognfa.pfm"));
  });
  std::vector<Raster> train_maps(train_entries.size());
  parallel_for(train_entries.size(), options.jobs, [&](std::size_t i) { train_maps[i] = load_score(train_entries[i]); });

  LabeledMaps automatic(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    Raster predicted(log_nfa[i].height, log_nfa[i].width);
    for (std::size_t p = 0; p < predicted.size(); ++p) predicted.values[p] = log_nfa[i].values[p] < options.log_nfa_threshold ? 1.0 : 0.0;
    automatic[i] = {predicted, test[i].gt, test[i].anomalous};
  }

  using nlohmann::json;
  auto guarded = [](auto&& metric) -> json {
    try {
      return metric();
    } catch (const UndefinedMetricError& e) {
      spdlog::warn("{}", e.what());
      return nullptr;
    }
  };
  json summary;
  summary["score"] = to_string(config.score);
  summary["pixel_auroc"] = guarded([&] { return pixel_auroc(test); });
  summary["image_auroc"] = guarded([&] { return image_auroc(test); });
  summary["iou_auto"] = pooled_iou(automatic, 0.5);
  json thresholds;
  thresholds["auto_log_nfa"] = options.log_nfa_threshold;
  std::optional<ThresholdChoice> oracle;
  try {
    oracle = oracle_threshold(test, config.exhaustive_oracle);
  } catch (const UndefinedMetricError& e) {
    spdlog::warn("{}", e.what());
  }
  summary["iou_oracle"] = oracle ? json(oracle->iou) : json(nullptr);
  thresholds["oracle"] = oracle ? json(oracle->threshold) : json(nullptr);
  if (!train_maps.empty()) {
    const double fair = fair_threshold(train_maps);
    summary["iou_fair"] = pooled_iou(test, fair);
    thresholds["fair"] = fair;
  } else {
    summary["iou_fair"] = nullptr;
    thresholds["fair"] = nullptr;
  }
  summary["thresholds"] = thresholds;

  const fs::path out = prepare_output(config, config.eval_dir, options.force);
  std::ostringstream csv;
  csv << "image,label,image_score,pixel_auroc,iou_auto,iou_oracle,iou_fair,image_auroc\n";
  auto cell = [](const json& v) { return v.is_null() ? std::string() : fmt_real(v.get<double>()); };
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& m = test[i];
    std::string auroc;
    if (m.gt.count() > 0 && m.gt.count() < m.gt.size()) {
      LabeledMaps one{m};
      auroc = fmt_real(pixel_auroc(one));
    }
    csv << test_entries[i].name << ',' << (m.anomalous ? 1 : 0) << ',' << fmt_real(image_score(m.score)) << ','
        << auroc << ',' << fmt_real(iou(threshold_mask(automatic[i].score, 0.5), m.gt)) << ','
        << (oracle ? fmt_real(iou(threshold_mask(m.score, oracle->threshold), m.gt)) : "") << ','
        << (thresholds["fair"].is_null() ? ""
                                         : fmt_real(iou(threshold_mask(m.score, thresholds["fair"].get<double>()), m.gt)))
        << ",\n";
  }
  csv << "summary,,," << cell(summary["pixel_auroc"]) << ',' << cell(summary["iou_auto"]) << ','
      << cell(summary["iou_oracle"]) << ',' << cell(summary["iou_fair"]) << ',' << cell(summary["image_auroc"])
      << '\n';
  write_text(out / "metrics.csv", csv.str());
  write_text(out / "metrics.json", summary.dump(2) + "\n");
  spdlog::info("pixel auroc {} iou auto {} oracle {} fair {}", cell(summary["pixel_auroc"]),
               cell(summary["iou_auto"]), cell(summary["iou_oracle"]), cell(summary["iou_fair"]));
}

}  // namespace uflow
