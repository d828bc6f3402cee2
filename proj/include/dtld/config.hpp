#pragma once

#include "dtld/decoder.hpp"
#include "dtld/gradcheck.hpp"
#include "dtld/metrics.hpp"
#include "dtld/synthetic.hpp"
#include "dtld/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dtld {

struct DataConfig {
  std::string dir = "data";
  int count = 8;
  uint64_t seed = 0;
  SyntheticFaceSpec synth;  // image_size and landmarks follow [model]
};

struct EvalConfig {
  metrics::Normalizer normalizer;
  std::vector<double> fr_thresholds{0.08, 0.10};
  std::vector<double> auc_cutoffs{0.07};
};

struct GradCheckConfig {
  GradCheckOptions options;
  bool tiny_model = true;  // ignore [model] and use tiny_config()
  std::string mode = "both";  // basic | parallel | both
  int batch = 2;
  double perturb = 0.05;
};

/// Everything a CLI command reads. Loaded from an INI file with sections
/// [model], [train], [data], [eval], [gradcheck]; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string flip_permutation = "template";  // "template" or comma list
  DataConfig data;
  EvalConfig eval;
  GradCheckConfig gradcheck;

  /// Throws ValidationError naming the offending key.
  void validate() const;
  /// Data spec with image size and landmark count taken from [model].
  [[nodiscard]] SyntheticFaceSpec synth_spec() const;
  /// TrainConfig with the flip table resolved.
  [[nodiscard]] TrainConfig resolved_train() const;
};

[[nodiscard]] RunConfig parse_config(const std::string& text);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);

/// Applies one `section.key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Every key in a fixed order, values printed in a canonical form.
[[nodiscard]] std::string canonical_text(const RunConfig& cfg);
/// First 16 hex digits of the SHA-256 of canonical_text.
[[nodiscard]] std::string config_hash(const RunConfig& cfg);

/// The [model] section alone, used inside checkpoints.
[[nodiscard]] std::string model_section_text(const ModelConfig& model);
[[nodiscard]] ModelConfig parse_model_section(const std::string& text);

/// Sorted list of accepted `section.key` names.
[[nodiscard]] std::vector<std::string> config_keys();

[[nodiscard]] std::string sha256_hex(const std::string& bytes);

}  // namespace dtld
