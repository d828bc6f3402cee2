#include "dtld/checkpoint.hpp"

#include "dtld/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dtld {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'T', 'L', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(double* dst, size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (n > bytes_.size() - pos_) throw ValidationError("checkpoint truncated");
  }

  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model& model, const std::string& config_hash) {
  std::string out(kMagic, sizeof kMagic);
  put<uint32_t>(out, kCheckpointVersion);
  put_string(out, model_section_text(model.config()));
  put_string(out, config_hash);
  ModelParams params = model.params();
  const auto refs = params.refs();
  put<uint64_t>(out, refs.size());
  for (const auto& r : refs) {
    put_string(out, r.path);
    put<uint32_t>(out, static_cast<uint32_t>(r.tensor->shape.size()));
    for (int64_t d : r.tensor->shape) put<int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(r.tensor->values()), static_cast<size_t>(r.tensor->numel()) * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ValidationError("not a checkpoint file (bad magic)");
  Reader in(bytes);
  for (size_t i = 0; i < sizeof kMagic; ++i) (void)in.get<char>();
  const auto version = in.get<uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck{parse_model_section(in.get_string()), {}, {}};
  ck.config.validate();
  ck.config_hash = in.get_string();
  ck.params = build_params(ck.config);
  const auto refs = ck.params.refs();
  const auto count = in.get<uint64_t>();
  if (count != refs.size())
    throw ValidationError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(refs.size()));
  for (const auto& r : refs) {
    const std::string path = in.get_string();
    if (path != r.path) throw ValidationError("checkpoint tensor '" + path + "' where '" + r.path + "' was expected");
    const auto rank = in.get<uint32_t>();
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = in.get<int64_t>();
    if (shape != r.tensor->shape) throw ValidationError("checkpoint tensor '" + path + "' has the wrong shape");
    in.get_doubles(r.tensor->values(), static_cast<size_t>(r.tensor->numel()));
  }
  if (!in.done()) throw ValidationError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
  const std::string bytes = encode_checkpoint(model, config_hash);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace dtld
