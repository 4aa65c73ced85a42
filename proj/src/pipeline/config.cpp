#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "uflow/errors.hpp"
#include "uflow/pipeline.hpp"

namespace uflow {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKeys = {
    {"paths", {"data_dir", "features_dir", "model_dir", "scores_dir", "masks_dir", "eval_dir"}},
    {"run", {"seed"}},
    {"extractor", {"levels", "patch", "channels", "seed"}},
    {"flow", {"steps_per_stage", "clamp"}},
    {"train", {"learning_rate", "batch_size", "epochs", "gradient_clip_norm", "beta1", "beta2", "epsilon"}},
    {"nfa", {"p", "windows", "high_precision"}},
    {"synthetic",
     {"image_size", "n_train", "n_test_normal", "n_test_anomalous", "texture", "defects", "contrast",
      "defect_size_min", "defect_size_max"}},
    {"score", {"kind", "formula", "exhaustive_oracle"}},
};

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out << ',';
    if constexpr (std::is_same_v<T, DefectKind>) {
      out << to_string(items[i]);
    } else {
      out << items[i];
    }
  }
  return out.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ParseError("empty list entry in '" + text + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ParseError("empty list");
  return out;
}

class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = *child;
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (*v == "true" || *v == "1") {
          out = true;
        } else if (*v == "false" || *v == "0") {
          out = false;
        } else {
          throw std::invalid_argument("bool");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        out = *v;
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        std::size_t used = 0;
        out = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } else if constexpr (std::is_integral_v<T>) {
        std::size_t used = 0;
        out = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } else {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      }
    } catch (const std::logic_error&) {
      throw ParseError("[" + name_ + "] " + key + ": invalid value '" + *v + "'");
    }
  }

  void read_ints(const std::string& key, std::vector<int>& out) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    out.clear();
    try {
      for (const auto& s : split_list(*v)) {
        std::size_t used = 0;
        out.push_back(std::stoi(s, &used));
        if (used != s.size()) throw std::invalid_argument("trailing");
      }
    } catch (const std::logic_error&) {
      throw ParseError("[" + name_ + "] " + key + ": invalid integer list '" + *v + "'");
    } catch (const ParseError&) {
      throw ParseError("[" + name_ + "] " + key + ": invalid integer list '" + *v + "'");
    }
  }

 private:
  std::string name_;
  pt::ptree tree_;
};

}  // namespace

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

GraphConfig PipelineConfig::graph_config() const {
  GraphConfig g;
  g.feature_channels = extractor.channels_per_level;
  g.steps_per_stage = steps_per_stage;
  g.clamp = clamp;
  return g;
}

ScoreKind parse_score_kind(const std::string& name) {
  if (name == "as") return ScoreKind::as;
  if (name == "nfa") return ScoreKind::nfa;
  throw ParameterError("score kind must be 'as' or 'nfa', got '" + name + "'");
}

std::string to_string(ScoreKind kind) { return kind == ScoreKind::as ? "as" : "nfa"; }

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, tree] : root) {
    const auto known = kKeys.find(section);
    if (known == kKeys.end()) {
      if (tree.data().empty() || !tree.empty()) throw ParseError("unknown config section [" + section + "]");
      throw ParseError("config key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : tree) {
      if (!known->second.count(key)) throw ParseError("unknown config key [" + section + "] " + key);
    }
  }

  PipelineConfig c;
  c.base_dir = base_dir;
  const Section paths(root, "paths");
  std::string s;
  auto read_path = [&](const char* key, std::filesystem::path& out) {
    s = out.string();
    paths.read(key, s);
    out = s;
  };
  read_path("data_dir", c.data_dir);
  read_path("features_dir", c.features_dir);
  read_path("model_dir", c.model_dir);
  read_path("scores_dir", c.scores_dir);
  read_path("masks_dir", c.masks_dir);
  read_path("eval_dir", c.eval_dir);

  Section(root, "run").read("seed", c.seed);

  const Section ex(root, "extractor");
  ex.read("levels", c.extractor.levels);
  ex.read("patch", c.extractor.patch);
  ex.read_ints("channels", c.extractor.channels_per_level);
  ex.read("seed", c.extractor.seed);

  const Section fl(root, "flow");
  fl.read("steps_per_stage", c.steps_per_stage);
  fl.read("clamp", c.clamp);

  const Section tr(root, "train");
  tr.read("learning_rate", c.train.learning_rate);
  tr.read("batch_size", c.train.batch_size);
  tr.read("epochs", c.train.epochs);
  tr.read("gradient_clip_norm", c.train.gradient_clip_norm);
  tr.read("beta1", c.train.beta1);
  tr.read("beta2", c.train.beta2);
  tr.read("epsilon", c.train.epsilon);

  const Section nf(root, "nfa");
  nf.read("p", c.nfa.p);
  nf.read_ints("windows", c.nfa.windows);
  nf.read("high_precision", c.nfa.high_precision);

  const Section sy(root, "synthetic");
  sy.read("image_size", c.synthetic.image_size);
  sy.read("n_train", c.synthetic.n_train);
  sy.read("n_test_normal", c.synthetic.n_test_normal);
  sy.read("n_test_anomalous", c.synthetic.n_test_anomalous);
  s = to_string(c.synthetic.texture);
  sy.read("texture", s);
  c.synthetic.texture = parse_texture(s);
  s = join(c.synthetic.defects);
  sy.read("defects", s);
  c.synthetic.defects.clear();
  for (const auto& name : split_list(s)) c.synthetic.defects.push_back(parse_defect(name));
  sy.read("contrast", c.synthetic.contrast);
  sy.read("defect_size_min", c.synthetic.defect_size_min);
  sy.read("defect_size_max", c.synthetic.defect_size_max);

  const Section sc(root, "score");
  s = to_string(c.score);
  sc.read("kind", s);
  c.score = parse_score_kind(s);
  s = c.formula == ScoreFormula::printed ? "printed" : "single_half";
  sc.read("formula", s);
  if (s == "printed") {
    c.formula = ScoreFormula::printed;
  } else if (s == "single_half") {
    c.formula = ScoreFormula::single_half;
  } else {
    throw ParameterError("score formula must be 'printed' or 'single_half', got '" + s + "'");
  }
  sc.read("exhaustive_oracle", c.exhaustive_oracle);

  validate(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(text.str(), base);
}

std::string emit_config(const PipelineConfig& c) {
  std::ostringstream o;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[paths]\n"
    << "data_dir = " << c.data_dir.string() << "\n"
    << "features_dir = " << c.features_dir.string() << "\n"
    << "model_dir = " << c.model_dir.string() << "\n"
    << "scores_dir = " << c.scores_dir.string() << "\n"
    << "masks_dir = " << c.masks_dir.string() << "\n"
    << "eval_dir = " << c.eval_dir.string() << "\n\n"
    << "[run]\n"
    << "seed = " << c.seed << "\n\n"
    << "[extractor]\n"
    << "levels = " << c.extractor.levels << "\n"
    << "patch = " << c.extractor.patch << "\n"
    << "channels = " << join(c.extractor.channels_per_level) << "\n"
    << "seed = " << c.extractor.seed << "\n\n"
    << "[flow]\n"
    << "steps_per_stage = " << c.steps_per_stage << "\n"
    << "clamp = " << fmt_real(c.clamp) << "\n\n"
    << "[train]\n"
    << "learning_rate = " << fmt_real(c.train.learning_rate) << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "gradient_clip_norm = " << fmt_real(c.train.gradient_clip_norm) << "\n"
    << "beta1 = " << fmt_real(c.train.beta1) << "\n"
    << "beta2 = " << fmt_real(c.train.beta2) << "\n"
    << "epsilon = " << fmt_real(c.train.epsilon) << "\n\n"
    << "[nfa]\n"
    << "p = " << fmt_real(c.nfa.p) << "\n"
    << "windows = " << join(c.nfa.windows) << "\n"
    << "high_precision = " << b(c.nfa.high_precision) << "\n\n"
    << "[synthetic]\n"
    << "image_size = " << c.synthetic.image_size << "\n"
    << "n_train = " << c.synthetic.n_train << "\n"
    << "n_test_normal = " << c.synthetic.n_test_normal << "\n"
    << "n_test_anomalous = " << c.synthetic.n_test_anomalous << "\n"
    << "texture = " << to_string(c.synthetic.texture) << "\n"
    << "defects = " << join(c.synthetic.defects) << "\n"
    << "contrast = " << fmt_real(c.synthetic.contrast) << "\n"
    << "defect_size_min = " << c.synthetic.defect_size_min << "\n"
    << "defect_size_max = " << c.synthetic.defect_size_max << "\n\n"
    << "[score]\n"
    << "kind = " << to_string(c.score) << "\n"
    << "formula = " << (c.formula == ScoreFormula::printed ? "printed" : "single_half") << "\n"
    << "exhaustive_oracle = " << b(c.exhaustive_oracle) << "\n";
  return o.str();
}

void validate(const PipelineConfig& c) {
  const auto& ex = c.extractor;
  if (ex.levels < 1) throw ParameterError("[extractor] levels must be at least 1");
  if (ex.patch < 1) throw ParameterError("[extractor] patch must be positive");
  if (static_cast<int>(ex.channels_per_level.size()) != ex.levels) {
    throw ParameterError("[extractor] channels lists " + std::to_string(ex.channels_per_level.size()) +
                         " counts for " + std::to_string(ex.levels) + " levels");
  }
  if (c.steps_per_stage < 1) throw ParameterError("[flow] steps_per_stage must be positive");
  if (!(c.clamp > 0.0)) throw ParameterError("[flow] clamp must be positive");
  try {
    stage_channel_counts(ex.channels_per_level);
  } catch (const ShapeError& e) {
    throw ParameterError(std::string("[extractor] channels do not fit the flow: ") + e.what());
  }
  validate(c.train);
  if (!(c.nfa.p > 0.0 && c.nfa.p < 1.0)) throw ParameterError("[nfa] p must lie in (0, 1)");
  if (static_cast<int>(c.nfa.windows.size()) != ex.levels) {
    throw ParameterError("[nfa] windows needs one entry per level");
  }
  for (int w : c.nfa.windows) {
    if (w < 1 || w % 2 == 0) throw ParameterError("[nfa] windows must be odd and positive");
  }
  validate(c.synthetic);
  const int factor = ex.patch << (ex.levels - 1);
  if (c.synthetic.image_size % factor != 0) {
    throw ParameterError("[synthetic] image_size " + std::to_string(c.synthetic.image_size) +
                         " is not divisible by patch * 2^(levels-1) = " + std::to_string(factor));
  }
}

PipelineConfig apply_overrides(PipelineConfig config, const CommandOptions& options) {
  if (options.seed) config.seed = *options.seed;
  if (options.score) config.score = *options.score;
  if (options.high_precision) config.nfa.high_precision = true;
  if (options.jobs < 1) throw ParameterError("--jobs must be at least 1");
  config.train.jobs = options.jobs;
  validate(config);
  return config;
}

}  // namespace uflow
