#include "dtld/gradcheck.hpp"

#include "dtld/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dtld {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::vector<std::string> GradCheckReport::failed_paths() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.pass) out.push_back(e.path);
  return out;
}

namespace {

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

double central_difference(double& value, double h, const std::function<double()>& loss) {
  const double saved = value;
  value = saved + h;
  const double plus = loss();
  value = saved - h;
  const double minus = loss();
  value = saved;
  return (plus - minus) / (2.0 * h);
}

}  // namespace

GradCheckReport grad_check(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& analytic,
                           const std::function<double()>& loss, const GradCheckOptions& opts) {
  if (params.size() != analytic.size()) throw ValidationError("grad_check: parameter/gradient lists differ in length");
  if (!opts.fault_path.empty() &&
      std::none_of(params.begin(), params.end(), [&](const ParamRef& r) { return r.path == opts.fault_path; }))
    throw ValidationError("grad_check: fault path '" + opts.fault_path + "' names no parameter");
  GradCheckReport report;
  report.threshold = opts.threshold;
  Rng rng(opts.seed);
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    const Tensor& g = *analytic[p];
    GradCheckEntry e;
    e.path = params[p].path;
    e.numel = t.numel();
    std::vector<int64_t> idx(static_cast<size_t>(e.numel));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    if (e.numel > opts.samples_per_path) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<size_t>(opts.samples_per_path));
      std::sort(idx.begin(), idx.end());
    }
    const double fault = (!opts.fault_path.empty() && opts.fault_path == e.path) ? opts.fault_scale : 1.0;
    for (int64_t i : idx) {
      const double a = g.values()[i] * fault;
      double& v = t.values()[i];
      double n = central_difference(v, opts.step, loss);
      double err = rel_error(a, n, opts.abs_floor);
      if (opts.retry_smaller_steps) {
        for (double shrink : {10.0, 100.0}) {
          if (err <= opts.threshold) break;
          const double n2 = central_difference(v, opts.step / shrink, loss);
          const double err2 = rel_error(a, n2, opts.abs_floor);
          if (err2 < err) {
            err = err2;
            n = n2;
          }
        }
      }
      ++e.checked;
      if (err > e.max_rel_error || e.worst_index < 0) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = a;
        e.numeric = n;
      }
    }
    e.pass = e.max_rel_error < opts.threshold;
    report.entries.push_back(e);
  }
  return report;
}

GradCheckReport grad_check_model(Model& model, const Dataset& batch, const GradCheckOptions& opts) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  ModelParams grads = model.params().zeros_like();
  (void)batch_loss_and_grad(model, ptrs, grads);
  auto loss = [&]() {
    double total = 0.0;
    for (const auto& s : batch) total += deep_supervision_loss(model.forward(s.image), s.landmarks);
    return total / static_cast<double>(batch.size());
  };
  std::vector<const Tensor*> analytic;
  for (const auto& r : grads.refs()) analytic.push_back(r.tensor);
  return grad_check(model.params().refs(), analytic, loss, opts);
}

void perturb_params(ModelParams& params, Rng& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  params.visit([&](const std::string&, Tensor& t, ParamGroup) {
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] += dist(rng);
  });
}

ModelConfig tiny_config(DecoderMode mode) {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.backbone_channels = {8, 16};
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.points = 2;
  cfg.layers = 2;
  cfg.landmarks = 5;
  cfg.mode = mode;
  return cfg;
}

}  // namespace dtld
