#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "relprop/error.hpp"
#include "relprop/gradient.hpp"
#include "relprop/lrp.hpp"
#include "relprop/model.hpp"
#include "relprop/relevance.hpp"
#include "relprop/rng.hpp"

namespace relprop {

enum class PerturbMode { PatchUniform, ZeroDelete };

inline std::string to_string(PerturbMode m) { return m == PerturbMode::PatchUniform ? "patch" : "zero"; }

struct PerturbationPlan {
  PerturbMode mode = PerturbMode::ZeroDelete;
  Extent2 patch{9, 9};
  std::size_t steps = 10;
  double low = 0.0;  // uniform replacement range (PatchUniform)
  double high = 1.0;
  std::uint64_t seed = 0;

  void validate_for(const Shape& input_shape) const {
    if (mode != PerturbMode::PatchUniform) return;
    if (input_shape.size() != 3) {
      throw Error(ErrorKind::Config, "patch perturbation needs a c x h x w input, got " + shape_string(input_shape));
    }
    if (patch[0] == 0 || patch[1] == 0 || patch[0] > input_shape[1] || patch[1] > input_shape[2]) {
      throw Error(ErrorKind::Config, "patch " + std::to_string(patch[0]) + "x" + std::to_string(patch[1]) +
                                         " exceeds input " + std::to_string(input_shape[1]) + "x" +
                                         std::to_string(input_shape[2]));
    }
    if (!(low <= high)) throw Error(ErrorKind::Config, "uniform range needs low <= high");
  }
};

using Region = std::vector<std::size_t>;

namespace detail {

inline std::vector<std::size_t> order_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// Regions of the input in perturbation order (most relevant first).
///
/// PatchUniform tiles the h x w plane into non-overlapping patches (edge
/// tiles are truncated), scores each tile by the relevance summed over it and
/// all channels, and returns every channel's indices of the tile. ZeroDelete
/// returns singleton variables; a tokens x dim map over a token-id input is
/// first summed per token. Ties keep the smaller index first.
inline std::vector<Region> rank_regions(const RelevanceMap& map, const PerturbationPlan& plan, const Shape& input_shape) {
  const Tensor& v = map.values;
  std::vector<double> scores;
  std::vector<Region> regions;

  if (plan.mode == PerturbMode::PatchUniform) {
    plan.validate_for(input_shape);
    const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    const bool per_channel = v.shape() == input_shape;
    if (!per_channel && v.shape() != Shape{h, w}) {
      throw Error(ErrorKind::Shape, "map " + shape_string(v.shape()) + " does not cover input " + shape_string(input_shape));
    }
    const std::size_t ph = plan.patch[0], pw = plan.patch[1];
    for (std::size_t ty = 0; ty < h; ty += ph) {
      for (std::size_t tx = 0; tx < w; tx += pw) {
        double score = 0.0;
        Region region;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = ty; y < std::min(h, ty + ph); ++y) {
            for (std::size_t x = tx; x < std::min(w, tx + pw); ++x) {
              region.push_back((ch * h + y) * w + x);
              if (per_channel) score += v[(ch * h + y) * w + x];
              else if (ch == 0) score += v[y * w + x];
            }
          }
        }
        scores.push_back(score);
        regions.push_back(std::move(region));
      }
    }
  } else {
    const std::size_t n = shape_size(input_shape);
    if (v.size() == n) {
      scores = v.vec();
    } else if (v.rank() == 2 && input_shape.size() == 1 && v.shape()[0] == n) {
      scores = token_relevance(map);
    } else {
      throw Error(ErrorKind::Shape, "map " + shape_string(v.shape()) + " does not match input " + shape_string(input_shape));
    }
    for (std::size_t i = 0; i < n; ++i) regions.push_back({i});
  }

  std::vector<Region> ordered;
  ordered.reserve(regions.size());
  for (std::size_t idx : detail::order_by_score(scores)) ordered.push_back(std::move(regions[idx]));
  return ordered;
}

/// One perturbation step. PatchUniform draws i.i.d. uniform values from a
/// stream keyed by (seed, sample_id, step_index); ZeroDelete writes 0.
inline Tensor perturb_step(const Tensor& input, const Region& region, const PerturbationPlan& plan,
                           std::uint64_t sample_id, std::uint64_t step_index) {
  Tensor out = input;
  if (plan.mode == PerturbMode::ZeroDelete) {
    for (std::size_t idx : region) out.at(idx) = 0.0;
    return out;
  }
  Xoshiro256 rng(mix_keys({plan.seed, sample_id, step_index}));
  for (std::size_t idx : region) out.at(idx) = rng.uniform(plan.low, plan.high);
  return out;
}

struct PerturbationCurve {
  std::vector<double> relative_scores;  // steps + 1 entries, first is 1.0
  std::vector<double> absolute_scores;
  std::vector<char> still_predicted;    // argmax unchanged after each step
  std::string ranking_source;
};

struct Exclusion {
  std::string reason;
};

using CurveOutcome = std::variant<PerturbationCurve, Exclusion>;

/// Tracks the logit of the originally predicted class while the ranked
/// regions are perturbed cumulatively. Steps beyond the number of regions
/// leave the input unchanged.
inline CurveOutcome perturbation_curve(const Model& model, const Tensor& input, const RelevanceMap& map,
                                       const PerturbationPlan& plan, std::uint64_t sample_id = 0,
                                       const std::string& ranking_source = "") {
  const ForwardTrace base = forward(model, input);
  const std::size_t cls = base.predicted_class;
  if (map.target_class != cls) {
    throw Error(ErrorKind::Config, "map explains class " + std::to_string(map.target_class) +
                                       " but the model predicts " + std::to_string(cls));
  }
  const double score0 = base.logits[cls];
  if (!(score0 > 0.0)) {
    return Exclusion{"initial score " + std::to_string(score0) + " <= 0; relative decrease undefined"};
  }
  const auto regions = rank_regions(map, plan, input.shape());

  PerturbationCurve curve;
  curve.ranking_source = ranking_source.empty() ? map.method() : ranking_source;
  curve.absolute_scores.push_back(score0);
  curve.relative_scores.push_back(1.0);
  curve.still_predicted.push_back(1);
  Tensor x = input;
  for (std::size_t t = 1; t <= plan.steps; ++t) {
    if (t - 1 < regions.size()) x = perturb_step(x, regions[t - 1], plan, sample_id, t);
    const ForwardTrace tr = forward(model, x);
    curve.absolute_scores.push_back(tr.logits[cls]);
    curve.relative_scores.push_back(tr.logits[cls] / score0);
    curve.still_predicted.push_back(tr.predicted_class == cls);
  }
  return curve;
}

/// Trapezoidal area of a curve with unit step width, divided by the number
/// of steps (a single-point curve returns its value).
inline double curve_auc(const std::vector<double>& curve) {
  if (curve.empty()) return 0.0;
  if (curve.size() == 1) return curve.front();
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) area += 0.5 * (curve[i - 1] + curve[i]);
  return area / static_cast<double>(curve.size() - 1);
}

enum class MethodKind { Sensitivity, Lrp, Random };

struct MethodSpec {
  std::string label;
  MethodKind kind = MethodKind::Lrp;
  RuleConfig rule;
  std::optional<ChannelNorm> norm;  // Sensitivity only; default per input rank

  static MethodSpec sensitivity(std::optional<ChannelNorm> norm = std::nullopt) {
    return {"sa", MethodKind::Sensitivity, {}, norm};
  }
  static MethodSpec lrp(const RuleConfig& rule) { return {rule.method_name(), MethodKind::Lrp, rule, {}}; }
  static MethodSpec random() { return {"random", MethodKind::Random, {}, {}}; }
};

/// Seeded uniform scores over the explained variables; the random baseline.
inline RelevanceMap random_map(const Tensor& explained, std::size_t target_class, std::uint64_t seed,
                               std::uint64_t sample_id) {
  Xoshiro256 rng(mix_keys({seed, sample_id, 0x52414e444f4dULL}));
  RelevanceMap map;
  map.values = Tensor(explained.shape());
  for (double& v : map.values.values()) v = rng.uniform01();
  map.target_class = target_class;
  return map;
}

inline RelevanceMap explain_with(const Model& model, const ForwardTrace& trace, std::size_t target_class,
                                 const MethodSpec& method, std::uint64_t seed, std::uint64_t sample_id) {
  switch (method.kind) {
    case MethodKind::Sensitivity: {
      GradientMap g = backward_gradient(model, trace, target_class);
      const ChannelNorm norm = method.norm.value_or(default_channel_norm(g.values));
      return sensitivity_map(g, norm);
    }
    case MethodKind::Lrp:
      return lrp_explain(model, trace, target_class, method.rule);
    case MethodKind::Random:
      return random_map(explained_variables(model, trace), target_class, seed, sample_id);
  }
  throw Error(ErrorKind::Config, "unknown method");
}

struct MethodResult {
  std::string label;
  std::vector<double> mean_relative_scores;
  std::vector<double> accuracy;  // fraction of samples still predicting the original class
  double auc = 0.0;
  double accuracy_auc = 0.0;
  std::size_t n_samples = 0;
};

struct Comparison {
  std::vector<MethodResult> methods;
  std::size_t n_total = 0;
  std::vector<std::pair<std::size_t, std::string>> exclusions;
};

/// Mean perturbation curve per method over every sample with a positive
/// initial score. Samples may be processed on `threads` workers; all random
/// streams are keyed by sample id and aggregation runs in sample order, so the
/// result does not depend on scheduling.
inline Comparison compare_methods(const Model& model, const std::vector<Tensor>& inputs,
                                  const std::vector<MethodSpec>& methods, const PerturbationPlan& plan,
                                  std::size_t threads = 1) {
  if (methods.empty()) throw Error(ErrorKind::Config, "no explanation methods given");
  plan.validate_for(model.input_shape);

  struct SampleResult {
    std::vector<PerturbationCurve> curves;
    std::string excluded;
    std::exception_ptr error;
  };
  std::vector<SampleResult> per_sample(inputs.size());

  auto run_sample = [&](std::size_t s) {
    SampleResult& out = per_sample[s];
    try {
      const ForwardTrace trace = forward(model, inputs[s]);
      for (const MethodSpec& m : methods) {
        const RelevanceMap map = explain_with(model, trace, trace.predicted_class, m, plan.seed, s);
        auto outcome = perturbation_curve(model, inputs[s], map, plan, s, m.label);
        if (auto* ex = std::get_if<Exclusion>(&outcome)) {
          out.excluded = ex->reason;
          out.curves.clear();
          return;
        }
        out.curves.push_back(std::get<PerturbationCurve>(std::move(outcome)));
      }
    } catch (...) {
      out.error = std::current_exception();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, inputs.size()));
  if (workers == 1) {
    for (std::size_t s = 0; s < inputs.size(); ++s) run_sample(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < inputs.size(); s = next++) run_sample(s);
      });
    }
    for (auto& th : pool) th.join();
  }

  Comparison cmp;
  cmp.n_total = inputs.size();
  const std::size_t len = plan.steps + 1;
  for (const MethodSpec& m : methods) {
    MethodResult r;
    r.label = m.label;
    r.mean_relative_scores.assign(len, 0.0);
    r.accuracy.assign(len, 0.0);
    cmp.methods.push_back(std::move(r));
  }
  for (std::size_t s = 0; s < per_sample.size(); ++s) {
    const SampleResult& sr = per_sample[s];
    if (sr.error) std::rethrow_exception(sr.error);
    if (!sr.excluded.empty()) {
      cmp.exclusions.emplace_back(s, sr.excluded);
      continue;
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      MethodResult& r = cmp.methods[m];
      for (std::size_t t = 0; t < len; ++t) {
        r.mean_relative_scores[t] += sr.curves[m].relative_scores[t];
        r.accuracy[t] += sr.curves[m].still_predicted[t] ? 1.0 : 0.0;
      }
      ++r.n_samples;
    }
  }
  const std::size_t survivors = cmp.n_total - cmp.exclusions.size();
  if (survivors == 0) {
    throw Error(ErrorKind::Excluded, "no sample has a positive initial score (" +
                                         std::to_string(cmp.exclusions.size()) + " excluded)");
  }
  for (MethodResult& r : cmp.methods) {
    for (std::size_t t = 0; t < len; ++t) {
      r.mean_relative_scores[t] /= static_cast<double>(survivors);
      r.accuracy[t] /= static_cast<double>(survivors);
    }
    r.auc = curve_auc(r.mean_relative_scores);
    r.accuracy_auc = curve_auc(r.accuracy);
  }
  return cmp;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header `step,method,mean_relative_score,n_samples`.
inline std::string curves_csv(const Comparison& cmp) {
  std::string out = "step,method,mean_relative_score,n_samples\n";
  for (const MethodResult& r : cmp.methods) {
    for (std::size_t t = 0; t < r.mean_relative_scores.size(); ++t) {
      out += std::to_string(t) + "," + r.label + "," + format_number(r.mean_relative_scores[t]) + "," +
             std::to_string(r.n_samples) + "\n";
    }
  }
  return out;
}

inline nlohmann::json comparison_summary(const Comparison& cmp, const PerturbationPlan& plan) {
  nlohmann::json j;
  nlohmann::json aucs = nlohmann::json::object();
  nlohmann::json methods = nlohmann::json::array();
  for (const MethodResult& r : cmp.methods) {
    aucs[r.label] = r.auc;
    methods.push_back({{"label", r.label},
                       {"auc", r.auc},
                       {"accuracy_auc", r.accuracy_auc},
                       {"n_samples", r.n_samples},
                       {"mean_relative_scores", r.mean_relative_scores},
                       {"accuracy", r.accuracy}});
  }
  nlohmann::json exclusions = nlohmann::json::array();
  for (const auto& [sample, reason] : cmp.exclusions) exclusions.push_back({{"sample", sample}, {"reason", reason}});
  j["aucs"] = aucs;
  j["methods"] = methods;
  j["plan"] = {{"mode", to_string(plan.mode)},
               {"patch", {plan.patch[0], plan.patch[1]}},
               {"steps", plan.steps},
               {"value_range", {plan.low, plan.high}},
               {"seed", plan.seed}};
  j["seed"] = plan.seed;
  j["n_samples_total"] = cmp.n_total;
  j["n_excluded"] = cmp.exclusions.size();
  j["exclusions"] = exclusions;
  j["tracked_score"] = "pre-softmax logit of the originally predicted class";
  j["auc_definition"] = "trapezoid over the mean relative curve, unit steps, divided by step count; lower is better";
  return j;
}

}  // namespace relprop
