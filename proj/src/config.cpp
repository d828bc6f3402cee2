#include "dtld/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace dtld {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw ValidationError(key + ": expected a number, got '" + text + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  Int v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw ValidationError(key + ": expected an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += f(v[i]);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;  // (cfg, full key, value)

  [[nodiscard]] std::string name() const { return section + "." + key; }
};

#define DTLD_INT(sec, k, member)                                                              \
  Field {                                                                                     \
    sec, k, [](const RunConfig& c) { return std::to_string(c.member); },                      \
        [](RunConfig& c, const std::string& n, const std::string& v) {                        \
          c.member = parse_int<std::remove_reference_t<decltype(c.member)>>(n, v);            \
        }                                                                                     \
  }
#define DTLD_DOUBLE(sec, k, member)                                                                          \
  Field {                                                                                                    \
    sec, k, [](const RunConfig& c) { return fmt_double(c.member); },                                         \
        [](RunConfig& c, const std::string& n, const std::string& v) { c.member = parse_double(n, v); }      \
  }
#define DTLD_BOOL(sec, k, member)                                                                            \
  Field {                                                                                                    \
    sec, k, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },                     \
        [](RunConfig& c, const std::string& n, const std::string& v) { c.member = parse_bool(n, v); }        \
  }
#define DTLD_STRING(sec, k, member)                                                                          \
  Field {                                                                                                    \
    sec, k, [](const RunConfig& c) { return c.member; },                                                     \
        [](RunConfig& c, const std::string&, const std::string& v) { c.member = trim(v); }                   \
  }
#define DTLD_DOUBLE_LIST(sec, k, member)                                                                     \
  Field {                                                                                                    \
    sec, k, [](const RunConfig& c) { return join(c.member, fmt_double); },                                   \
        [](RunConfig& c, const std::string& n, const std::string& v) {                                       \
          c.member.clear();                                                                                  \
          for (const auto& s : split_list(v)) c.member.push_back(parse_double(n, s));                        \
        }                                                                                                    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DTLD_INT("model", "image_size", model.image_size),
      Field{"model", "backbone_channels",
            [](const RunConfig& c) { return join(c.model.backbone_channels, [](int v) { return std::to_string(v); }); },
            [](RunConfig& c, const std::string& n, const std::string& v) {
              c.model.backbone_channels.clear();
              for (const auto& s : split_list(v)) c.model.backbone_channels.push_back(parse_int<int>(n, s));
            }},
      DTLD_INT("model", "dim", model.dim),
      DTLD_INT("model", "heads", model.heads),
      DTLD_INT("model", "points", model.points),
      DTLD_INT("model", "layers", model.layers),
      DTLD_INT("model", "landmarks", model.landmarks),
      DTLD_INT("model", "ffn_hidden", model.ffn_hidden),
      Field{"model", "mode", [](const RunConfig& c) { return to_string(c.model.mode); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.mode = parse_decoder_mode(trim(v)); }},
      Field{"model", "query_init", [](const RunConfig& c) { return to_string(c.model.query_init); },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.model.query_init = parse_query_init(trim(v));
            }},
      DTLD_BOOL("model", "self_attention", model.self_attention),
      DTLD_BOOL("model", "update_memory", model.update_memory),
      DTLD_INT("model", "seed", model.seed),

      DTLD_DOUBLE("train", "lr", train.lr),
      DTLD_DOUBLE("train", "lr_backbone_scale", train.lr_backbone_scale),
      DTLD_INT("train", "epochs", train.epochs),
      DTLD_INT("train", "lr_drop_epoch", train.lr_drop_epoch),
      DTLD_INT("train", "batch_size", train.batch_size),
      DTLD_INT("train", "seed", train.seed),
      DTLD_DOUBLE("train", "beta1", train.beta1),
      DTLD_DOUBLE("train", "beta2", train.beta2),
      DTLD_DOUBLE("train", "adam_eps", train.adam_eps),
      DTLD_BOOL("train", "aug_translate", train.augment.translate),
      DTLD_INT("train", "aug_max_shift_px", train.augment.max_shift_px),
      DTLD_BOOL("train", "aug_flip", train.augment.flip),
      DTLD_STRING("train", "flip_permutation", flip_permutation),
      DTLD_BOOL("train", "aug_rotate", train.augment.rotate),
      DTLD_DOUBLE("train", "aug_max_rotation_deg", train.augment.max_rotation_deg),
      DTLD_BOOL("train", "aug_occlude", train.augment.occlude),
      DTLD_DOUBLE("train", "aug_max_occlusion_frac", train.augment.max_occlusion_frac),
      DTLD_BOOL("train", "aug_blur", train.augment.blur),
      DTLD_INT("train", "aug_blur_radius", train.augment.blur_radius),
      DTLD_DOUBLE("train", "aug_probability", train.augment.probability),

      DTLD_STRING("data", "dir", data.dir),
      DTLD_INT("data", "count", data.count),
      DTLD_INT("data", "seed", data.seed),
      DTLD_DOUBLE("data", "face_scale", data.synth.face_scale),
      DTLD_DOUBLE("data", "rotation_deg", data.synth.rotation_deg),
      DTLD_DOUBLE("data", "scale_jitter", data.synth.scale_jitter),
      DTLD_DOUBLE("data", "translate_jitter", data.synth.translate_jitter),
      DTLD_DOUBLE("data", "blob_sigma", data.synth.blob_sigma),
      DTLD_DOUBLE("data", "blob_intensity", data.synth.blob_intensity),
      DTLD_DOUBLE("data", "background", data.synth.background),
      DTLD_DOUBLE("data", "noise", data.synth.noise),
      DTLD_DOUBLE("data", "contrast", data.synth.contrast),
      DTLD_DOUBLE("data", "bbox_enlarge", data.synth.bbox_enlarge),

      Field{"eval", "normalizer", [](const RunConfig& c) { return metrics::to_string(c.eval.normalizer.kind); },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.eval.normalizer.kind = metrics::parse_normalizer(trim(v));
            }},
      DTLD_INT("eval", "left_eye", eval.normalizer.left_eye),
      DTLD_INT("eval", "right_eye", eval.normalizer.right_eye),
      DTLD_DOUBLE_LIST("eval", "fr_thresholds", eval.fr_thresholds),
      DTLD_DOUBLE_LIST("eval", "auc_cutoffs", eval.auc_cutoffs),

      DTLD_BOOL("gradcheck", "tiny_model", gradcheck.tiny_model),
      DTLD_STRING("gradcheck", "mode", gradcheck.mode),
      DTLD_INT("gradcheck", "batch", gradcheck.batch),
      DTLD_DOUBLE("gradcheck", "perturb", gradcheck.perturb),
      DTLD_DOUBLE("gradcheck", "step", gradcheck.options.step),
      DTLD_DOUBLE("gradcheck", "threshold", gradcheck.options.threshold),
      DTLD_INT("gradcheck", "samples_per_path", gradcheck.options.samples_per_path),
      DTLD_INT("gradcheck", "seed", gradcheck.options.seed),
      DTLD_DOUBLE("gradcheck", "abs_floor", gradcheck.options.abs_floor),
      DTLD_BOOL("gradcheck", "retry_smaller_steps", gradcheck.options.retry_smaller_steps),
      DTLD_STRING("gradcheck", "fault_path", gradcheck.options.fault_path),
      DTLD_DOUBLE("gradcheck", "fault_scale", gradcheck.options.fault_scale),
  };
  return table;
}

#undef DTLD_INT
#undef DTLD_DOUBLE
#undef DTLD_BOOL
#undef DTLD_STRING
#undef DTLD_DOUBLE_LIST

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return f;
  throw ValidationError("unknown config key: " + section + "." + key);
}

void set_field(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const Field& f = find_field(section, key);
  try {
    f.set(cfg, f.name(), value);
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(f.name(), 0) == 0) throw;
    throw ValidationError(f.name() + ": " + msg);
  }
}

RunConfig parse_sections(const std::string& text, const std::vector<std::string>& allowed) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (std::find(allowed.begin(), allowed.end(), section) == allowed.end()) {
      if (body.empty()) throw ValidationError("config: key '" + section + "' outside a section");
      throw ValidationError("unknown config section: [" + section + "]");
    }
    for (const auto& [key, value] : body) set_field(cfg, section, key, value.data());
  }
  return cfg;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  resolved_train().augment.validate(model.landmarks);
  synth_spec().validate();
  if (data.count < 1) throw ValidationError("data.count must be >= 1");
  if (data.dir.empty()) throw ValidationError("data.dir must not be empty");
  const int n = model.landmarks;
  const auto& norm = eval.normalizer;
  if (norm.left_eye < 0 || norm.left_eye >= n || norm.right_eye < 0 || norm.right_eye >= n)
    throw ValidationError("eval.left_eye/right_eye must be landmark indices in [0, " + std::to_string(n) + ")");
  if (norm.left_eye == norm.right_eye) throw ValidationError("eval.left_eye and eval.right_eye must differ");
  for (double t : eval.fr_thresholds)
    if (!(t > 0)) throw ValidationError("eval.fr_thresholds entries must be > 0");
  for (double c : eval.auc_cutoffs)
    if (!(c > 0)) throw ValidationError("eval.auc_cutoffs entries must be > 0");
  const auto& g = gradcheck;
  if (g.mode != "basic" && g.mode != "parallel" && g.mode != "both")
    throw ValidationError("gradcheck.mode must be basic, parallel or both");
  if (g.batch < 1) throw ValidationError("gradcheck.batch must be >= 1");
  if (!(g.perturb >= 0)) throw ValidationError("gradcheck.perturb must be >= 0");
  if (!(g.options.step > 0)) throw ValidationError("gradcheck.step must be > 0");
  if (!(g.options.threshold > 0)) throw ValidationError("gradcheck.threshold must be > 0");
  if (g.options.samples_per_path < 1) throw ValidationError("gradcheck.samples_per_path must be >= 1");
  if (!(g.options.abs_floor > 0)) throw ValidationError("gradcheck.abs_floor must be > 0");
}

SyntheticFaceSpec RunConfig::synth_spec() const {
  SyntheticFaceSpec s = data.synth;
  s.image_size = model.image_size;
  s.landmarks = model.landmarks;
  return s;
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  if (trim(flip_permutation) == "template") {
    t.augment.flip_permutation = template_flip_permutation(model.landmarks);
  } else {
    t.augment.flip_permutation.clear();
    for (const auto& s : split_list(flip_permutation))
      t.augment.flip_permutation.push_back(parse_int<int>("train.flip_permutation", s));
  }
  return t;
}

RunConfig parse_config(const std::string& text) {
  return parse_sections(text, {"model", "train", "data", "eval", "gradcheck"});
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ValidationError("override must look like section.key=value, got '" + assignment + "'");
  set_field(cfg, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
            assignment.substr(eq + 1));
}

std::string canonical_text(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(canonical_text(cfg)).substr(0, 16); }

std::string model_section_text(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::string out = "[model]\n";
  for (const auto& f : fields())
    if (f.section == "model") out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

ModelConfig parse_model_section(const std::string& text) { return parse_sections(text, {"model"}).model; }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name());
  std::sort(out.begin(), out.end());
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace dtld
