#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfda/adapt.hpp"
#include "sfda/data.hpp"
#include "sfda/model.hpp"
#include "sfda/source_trainer.hpp"

namespace sfda {

/// Every setting of a lab run. Loaded from YAML; unspecified keys keep the
/// defaults below.
struct LabConfig {
  std::uint64_t seed = 0;
  std::vector<Index> hidden{64, 64};
  Index feature_dim = 256;

  SourceConfig source;
  UnidaConfig unida;
  PlacesConfig places;
  ImnetConfig imnet;

  DomainSpec data_unida{.n_shared = 6, .n_source_private = 4, .n_target_private = 4, .shift = 1.0, .rotation = 0.15};
  DomainSpec data_places{.n_shared = 8, .noise_sigma = 0.8};
  DomainSpec data_imnet{.n_shared = 10};
  DomainSpec data_control{.n_shared = 10, .samples_per_class = 50, .shift = 0.0, .rotation = 0.0};

  /// Propagates `seed` into every stage and generator.
  void set_seed(std::uint64_t s);
  Architecture architecture(Index input_dim, Index num_classes) const;
  const DomainSpec& domain(const std::string& track) const;
  std::vector<std::string> validate() const;
  Json to_json() const;
};

/// Carries every problem found while reading a config.
struct ConfigError : std::runtime_error {
  explicit ConfigError(std::vector<std::string> errs);
  std::vector<std::string> errors;
};

LabConfig parse_config(const std::string& yaml_text);
LabConfig load_config(const std::filesystem::path& path);
/// The default configuration as commented YAML; parse_config of this text
/// yields LabConfig{}.
std::string default_config_yaml();

inline const std::vector<std::string>& track_names() {
  static const std::vector<std::string> names{"unida", "places", "imnet", "control"};
  return names;
}

}  // namespace sfda
