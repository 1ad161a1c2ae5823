#include "sfda/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace sfda {

ConfigError::ConfigError(std::vector<std::string> errs)
    : std::runtime_error([&] {
        std::string msg = "configuration invalid (" + std::to_string(errs.size()) + " problem" +
                          (errs.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errs) msg += "\n  - " + e;
        return msg;
      }()),
      errors(std::move(errs)) {}

void LabConfig::set_seed(std::uint64_t s) {
  seed = s;
  source.seed = s;
  unida.base.seed = s;
  places.base.seed = s;
  imnet.base.seed = s;
  data_unida.seed = s;
  data_places.seed = s;
  data_imnet.seed = s;
  data_control.seed = s;
}

Architecture LabConfig::architecture(Index input_dim, Index num_classes) const {
  return Architecture{input_dim, hidden, feature_dim, num_classes};
}

const DomainSpec& LabConfig::domain(const std::string& track) const {
  if (track == "unida") return data_unida;
  if (track == "places") return data_places;
  if (track == "imnet") return data_imnet;
  if (track == "control") return data_control;
  throw ContractError("unknown track '" + track + "' (expected unida, places, imnet or control)");
}

std::vector<std::string> LabConfig::validate() const {
  std::vector<std::string> e;
  auto prefixed = [&e](const std::string& p, const std::vector<std::string>& errs) {
    for (const auto& s : errs) e.push_back(p + s);
  };
  if (feature_dim < 1) e.emplace_back("model.feature_dim must be >= 1");
  for (Index h : hidden) {
    if (h < 1) e.emplace_back("model.hidden widths must be >= 1");
  }
  prefixed("", source.validate());
  prefixed("unida.", unida.validate());
  prefixed("places.", places.validate());
  prefixed("imnet.", imnet.validate());
  prefixed("data.unida: ", data_unida.validate());
  prefixed("data.places: ", data_places.validate());
  prefixed("data.imnet: ", data_imnet.validate());
  prefixed("data.control: ", data_control.validate());
  if (data_unida.n_target_private < 1 || data_unida.n_shared < 1) {
    e.emplace_back("data.unida: universal track needs n_shared >= 1 and n_target_private >= 1");
  }
  for (const auto* d : {&data_places, &data_imnet, &data_control}) {
    if (d->n_source_private != 0 || d->n_target_private != 0) {
      e.emplace_back("closed-set tracks (places, imnet, control) need zero private classes");
      break;
    }
  }
  return e;
}

namespace {

Json domain_json(const DomainSpec& d) {
  return Json{{"n_shared", d.n_shared},
              {"n_source_private", d.n_source_private},
              {"n_target_private", d.n_target_private},
              {"samples_per_class", d.samples_per_class},
              {"input_dim", d.input_dim},
              {"shift", d.shift},
              {"rotation", d.rotation},
              {"noise_sigma", d.noise_sigma},
              {"seed", d.seed}};
}

}  // namespace

Json LabConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["model"] = Json{{"hidden", hidden}, {"feature_dim", feature_dim}};
  j["source"] = source.to_json();
  Json u = unida.base.to_json();
  u["alpha"] = unida.alpha;
  u["unknown_entropy_threshold"] = unida.eval_rule.entropy_threshold;
  j["unida"] = u;
  Json p = places.base.to_json();
  p["beta"] = places.beta;
  p["gamma"] = places.gamma;
  j["places"] = p;
  Json m = imnet.base.to_json();
  m["eta"] = imnet.eta;
  m["centroid_rounds"] = imnet.centroid_rounds;
  j["imnet"] = m;
  j["data"] = Json{{"unida", domain_json(data_unida)},
                   {"places", domain_json(data_places)},
                   {"imnet", domain_json(data_imnet)},
                   {"control", domain_json(data_control)}};
  return j;
}

// ---------------------------------------------------------------------------
// YAML reading

namespace {

class Reader {
 public:
  std::vector<std::string> errors;

  /// Reads `key` of mapping `node` into `out` when present.
  template <typename T>
  void get(const YAML::Node& node, const std::string& path, const std::string& key, T& out) {
    seen_[path].insert(key);
    const YAML::Node v = node[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      errors.push_back(join(path, key) + ": cannot read '" + scalar_text(v) + "' as " + type_name<T>());
    }
  }

  void get_index_list(const YAML::Node& node, const std::string& path, const std::string& key,
                      std::vector<Index>& out) {
    seen_[path].insert(key);
    const YAML::Node v = node[key];
    if (!v) return;
    if (!v.IsSequence()) {
      errors.push_back(join(path, key) + ": expected a list of integers");
      return;
    }
    std::vector<Index> tmp;
    for (const auto& item : v) {
      try {
        tmp.push_back(static_cast<Index>(item.as<long long>()));
      } catch (const YAML::Exception&) {
        errors.push_back(join(path, key) + ": cannot read '" + scalar_text(item) + "' as integer");
        return;
      }
    }
    out = std::move(tmp);
  }

  YAML::Node section(const YAML::Node& root, const std::string& path, const std::string& key) {
    seen_[path].insert(key);
    const YAML::Node v = root[key];
    if (v && !v.IsMap()) {
      errors.push_back(join(path, key) + ": expected a mapping");
      return YAML::Node();
    }
    return v;
  }

  /// Flags keys of `node` that no get/section call asked for.
  void check_unknown(const YAML::Node& node, const std::string& path) {
    if (!node || !node.IsMap()) return;
    const auto& known = seen_[path];
    for (const auto& kv : node) {
      const auto k = kv.first.as<std::string>();
      if (!known.count(k)) errors.push_back(join(path, k) + ": unknown key");
    }
  }

 private:
  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  static std::string scalar_text(const YAML::Node& n) {
    return n.IsScalar() ? n.Scalar() : std::string("<non-scalar>");
  }
  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_integral_v<T>) return "integer";
    else return "number";
  }
  std::map<std::string, std::set<std::string>> seen_;
};

void read_adapt(Reader& r, const YAML::Node& n, const std::string& path, AdaptConfig& a,
                bool with_epochs = true) {
  if (!n) return;
  if (with_epochs) r.get(n, path, "epochs", a.epochs);
  r.get(n, path, "batch_size", a.batch_size);
  r.get(n, path, "lr_trunk", a.lr_trunk);
  r.get(n, path, "lr_head", a.lr_head);
  r.get(n, path, "lr_power", a.lr_power);
  r.get(n, path, "momentum", a.sgd.momentum);
  r.get(n, path, "weight_decay", a.sgd.weight_decay);
  r.get(n, path, "bn_update_during_adapt", a.bn_update_during_adapt);
}

void read_domain(Reader& r, const YAML::Node& n, const std::string& path, DomainSpec& d) {
  if (!n) return;
  r.get(n, path, "n_shared", d.n_shared);
  r.get(n, path, "n_source_private", d.n_source_private);
  r.get(n, path, "n_target_private", d.n_target_private);
  r.get(n, path, "samples_per_class", d.samples_per_class);
  r.get(n, path, "input_dim", d.input_dim);
  r.get(n, path, "shift", d.shift);
  r.get(n, path, "rotation", d.rotation);
  r.get(n, path, "noise_sigma", d.noise_sigma);
  r.check_unknown(n, path);
}

}  // namespace

LabConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError({std::string("YAML syntax error: ") + e.what()});
  }
  LabConfig cfg;
  if (!root || root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError({"top level must be a mapping"});

  Reader r;
  std::uint64_t seed = 0;
  r.get(root, "", "seed", seed);
  // Per-section seeds (as written in run snapshots) override the global one.
  std::vector<std::pair<std::uint64_t*, std::uint64_t>> seed_overrides;
  auto section_seed = [&](const YAML::Node& n, const std::string& path, std::uint64_t& target) {
    if (!n) return;
    std::uint64_t v = 0;
    r.get(n, path, "seed", v);
    if (n["seed"]) seed_overrides.emplace_back(&target, v);
  };

  if (YAML::Node m = r.section(root, "", "model")) {
    r.get_index_list(m, "model", "hidden", cfg.hidden);
    long long fd = cfg.feature_dim;
    r.get(m, "model", "feature_dim", fd);
    cfg.feature_dim = static_cast<Index>(fd);
    r.check_unknown(m, "model");
  }
  if (YAML::Node s = r.section(root, "", "source")) {
    SourceConfig& c = cfg.source;
    r.get(s, "source", "epochs", c.epochs);
    r.get(s, "source", "batch_size", c.batch_size);
    r.get(s, "source", "lr_trunk", c.lr_trunk);
    r.get(s, "source", "lr_head", c.lr_head);
    r.get(s, "source", "lr_power", c.lr_power);
    r.get(s, "source", "alpha_smooth", c.alpha_smooth);
    r.get(s, "source", "ema_coeff", c.ema_coeff);
    r.get(s, "source", "lambda_switch_fraction", c.lambda_switch_fraction);
    r.get(s, "source", "holdout_fraction", c.holdout_fraction);
    r.get(s, "source", "momentum", c.sgd.momentum);
    r.get(s, "source", "weight_decay", c.sgd.weight_decay);
    section_seed(s, "source", c.seed);
    r.check_unknown(s, "source");
  }
  // Shared adaptation settings, then per-strategy overrides.
  if (YAML::Node a = r.section(root, "", "adapt")) {
    for (AdaptConfig* base : {&cfg.unida.base, &cfg.places.base, &cfg.imnet.base}) {
      read_adapt(r, a, "adapt", *base, false);
    }
    r.check_unknown(a, "adapt");
  }
  if (YAML::Node u = r.section(root, "", "unida")) {
    read_adapt(r, u, "unida", cfg.unida.base);
    r.get(u, "unida", "alpha", cfg.unida.alpha);
    r.get(u, "unida", "unknown_entropy_threshold", cfg.unida.eval_rule.entropy_threshold);
    section_seed(u, "unida", cfg.unida.base.seed);
    r.check_unknown(u, "unida");
  }
  if (YAML::Node p = r.section(root, "", "places")) {
    read_adapt(r, p, "places", cfg.places.base);
    r.get(p, "places", "beta", cfg.places.beta);
    r.get(p, "places", "gamma", cfg.places.gamma);
    section_seed(p, "places", cfg.places.base.seed);
    r.check_unknown(p, "places");
  }
  if (YAML::Node m = r.section(root, "", "imnet")) {
    read_adapt(r, m, "imnet", cfg.imnet.base);
    r.get(m, "imnet", "eta", cfg.imnet.eta);
    r.get(m, "imnet", "centroid_rounds", cfg.imnet.centroid_rounds);
    section_seed(m, "imnet", cfg.imnet.base.seed);
    r.check_unknown(m, "imnet");
  }
  if (YAML::Node d = r.section(root, "", "data")) {
    for (auto [name, spec] : {std::pair{"unida", &cfg.data_unida}, std::pair{"places", &cfg.data_places},
                              std::pair{"imnet", &cfg.data_imnet}, std::pair{"control", &cfg.data_control}}) {
      const std::string path = std::string("data.") + name;
      const YAML::Node n = r.section(d, "data", name);
      section_seed(n, path, spec->seed);
      read_domain(r, n, path, *spec);
    }
    r.check_unknown(d, "data");
  }
  r.check_unknown(root, "");

  cfg.set_seed(seed);
  for (auto [target, v] : seed_overrides) *target = v;
  std::vector<std::string> errors = std::move(r.errors);
  for (auto& e : cfg.validate()) errors.push_back(std::move(e));
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

LabConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string default_config_yaml() {
  return R"(# sfda-lab configuration. Every key is optional; omitted keys keep these defaults.
seed: 0

model:
  hidden: [64, 64]          # ReLU trunk widths (stand-in for a large backbone)
  feature_dim: 256          # bottleneck width d

source:
  epochs: 10
  batch_size: 64
  lr_trunk: 1.0e-3          # initial LR of the trunk group
  lr_head: 1.0e-2           # initial LR of bottleneck, BN and classifier
  lr_power: 1.0             # lr = lr0 * (1 + 10 p)^-power
  alpha_smooth: 0.1         # label smoothing
  ema_coeff: 0.95           # shadow <- c * shadow + (1 - c) * live, once per epoch
  lambda_switch_fraction: 0.4   # EMA-consistency weight is 0 before this share of iterations, 1 after
  holdout_fraction: 0.1     # source rows held out to pick the best checkpoint
  momentum: 0.9
  weight_decay: 1.0e-3

adapt:                      # shared by every adaptation strategy
  batch_size: 64
  lr_trunk: 1.0e-3
  lr_head: 1.0e-2
  lr_power: 1.0
  momentum: 0.9
  weight_decay: 1.0e-3
  bn_update_during_adapt: true

unida:
  epochs: 5
  alpha: 0.3                # weight of entropy maximization on unknowns
  unknown_entropy_threshold: 0.5   # test-time rule: normalized entropy >= this -> unknown

places:
  epochs: 1
  beta: 0.3                 # weight of the top-1 pseudo label
  gamma: 0.1                # weight of the top-2 pseudo label

imnet:
  epochs: 1
  eta: 0.3                  # weight of the centroid pseudo-label loss
  centroid_rounds: 1

data:
  # 14 classes share the circle here, so a milder shift keeps the target recoverable.
  unida:   {n_shared: 6, n_source_private: 4, n_target_private: 4, samples_per_class: 60,
            input_dim: 2, shift: 1.0, rotation: 0.15, noise_sigma: 0.35}
  places:  {n_shared: 8, samples_per_class: 60, input_dim: 2, shift: 1.5, rotation: 0.3, noise_sigma: 0.8}
  imnet:   {n_shared: 10, samples_per_class: 60, input_dim: 2, shift: 1.5, rotation: 0.3, noise_sigma: 0.35}
  control: {n_shared: 10, samples_per_class: 50, input_dim: 2, shift: 0.0, rotation: 0.0, noise_sigma: 0.35}
)";
}

}  // namespace sfda
