#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relprop/error.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

enum class Rule { Epsilon, AlphaBeta };

struct RuleConfig {
  Rule rule = Rule::Epsilon;
  double epsilon = 0.0;
  double alpha = 1.0;
  double beta = 0.0;

  static RuleConfig make_epsilon(double epsilon) {
    RuleConfig c{Rule::Epsilon, epsilon, 1.0, 0.0};
    c.validate();
    return c;
  }

  static RuleConfig make_alpha_beta(double alpha, double beta) {
    RuleConfig c{Rule::AlphaBeta, 0.0, alpha, beta};
    c.validate();
    return c;
  }

  void validate() const {
    if (rule == Rule::Epsilon) {
      if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw Error(ErrorKind::Config, "epsilon must be a finite non-negative number");
      }
      return;
    }
    if (!(alpha >= 1.0) || !(beta >= 0.0) || !std::isfinite(alpha)) {
      throw Error(ErrorKind::Config, "alpha-beta rule needs alpha >= 1 and beta >= 0");
    }
    if (alpha - beta != 1.0) {
      throw Error(ErrorKind::Config, "alpha-beta rule requires alpha - beta == 1, got alpha=" +
                                         std::to_string(alpha) + " beta=" + std::to_string(beta));
    }
  }

  std::string method_name() const { return rule == Rule::Epsilon ? "lrp-eps" : "lrp-ab"; }
};

enum class ChannelNorm { Abs, L2OverChannels };

inline std::string to_string(ChannelNorm n) { return n == ChannelNorm::Abs ? "abs" : "l2_over_channels"; }

/// Relevance bookkeeping for one LRP pass. Sums run from the output layer
/// (index 0, equal to f_value) down to the explained variables.
struct ConservationReport {
  double f_value = 0.0;
  std::vector<double> layer_sums;
  std::vector<double> layer_bias_absorbed;  // per propagated layer, output -> input
  std::vector<double> layer_epsilon_leaked;
  double bias_absorbed = 0.0;
  double epsilon_leaked = 0.0;
  double max_relative_deviation = 0.0;  // max_l |sum_l - f| / |f|  (absolute when f == 0)
  double accounting_residual = 0.0;     // max_l |f - sum_l - absorbed_l - leaked_l| / max(1, |f|)
};

struct RelevanceMap {
  Tensor values;
  std::size_t target_class = 0;
  std::optional<RuleConfig> rule;  // empty for sensitivity analysis
  std::optional<ChannelNorm> sa_norm;
  std::optional<ConservationReport> conservation;
  std::vector<Tensor> layer_relevances;  // output -> input, LRP only; not serialized
  std::vector<std::string> tokens;       // set when the input was a token document

  bool is_sensitivity() const { return !rule.has_value(); }
  std::string method() const { return rule ? rule->method_name() : "sa"; }
};

inline nlohmann::json rule_to_json(const RuleConfig& r) {
  if (r.rule == Rule::Epsilon) return {{"rule", "epsilon"}, {"epsilon", r.epsilon}};
  return {{"rule", "alpha_beta"}, {"alpha", r.alpha}, {"beta", r.beta}};
}

inline RuleConfig rule_from_json(const nlohmann::json& j) {
  const auto name = j.at("rule").get<std::string>();
  if (name == "epsilon") return RuleConfig::make_epsilon(j.at("epsilon").get<double>());
  if (name == "alpha_beta") return RuleConfig::make_alpha_beta(j.at("alpha").get<double>(), j.at("beta").get<double>());
  throw Error(ErrorKind::Format, "unknown rule '" + name + "'");
}

inline nlohmann::json conservation_to_json(const ConservationReport& c) {
  return {{"f_value", c.f_value},
          {"layer_sums", c.layer_sums},
          {"bias_absorbed", c.bias_absorbed},
          {"epsilon_leaked", c.epsilon_leaked},
          {"max_relative_deviation", c.max_relative_deviation},
          {"accounting_residual", c.accounting_residual}};
}

inline nlohmann::json relevance_to_json(const RelevanceMap& map) {
  nlohmann::json j;
  j["shape"] = map.values.shape();
  j["values"] = map.values.vec();
  j["target_class"] = map.target_class;
  j["method"] = map.method();
  j["rule"] = map.rule ? rule_to_json(*map.rule) : nlohmann::json(nullptr);
  j["sa_norm"] = map.sa_norm ? nlohmann::json(to_string(*map.sa_norm)) : nlohmann::json(nullptr);
  j["conserving"] = !map.is_sensitivity();
  j["conservation"] = map.conservation ? conservation_to_json(*map.conservation) : nlohmann::json(nullptr);
  if (!map.tokens.empty()) j["tokens"] = map.tokens;
  return j;
}

inline RelevanceMap relevance_from_json(const nlohmann::json& j) {
  try {
    RelevanceMap map;
    map.values = Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
    map.target_class = j.at("target_class").get<std::size_t>();
    if (!j.at("rule").is_null()) map.rule = rule_from_json(j.at("rule"));
    if (j.contains("sa_norm") && !j.at("sa_norm").is_null()) {
      map.sa_norm = j.at("sa_norm").get<std::string>() == "abs" ? ChannelNorm::Abs : ChannelNorm::L2OverChannels;
    }
    if (!j.at("conservation").is_null()) {
      const auto& c = j.at("conservation");
      ConservationReport r;
      r.f_value = c.at("f_value").get<double>();
      r.layer_sums = c.at("layer_sums").get<std::vector<double>>();
      r.bias_absorbed = c.at("bias_absorbed").get<double>();
      r.epsilon_leaked = c.at("epsilon_leaked").get<double>();
      r.max_relative_deviation = c.at("max_relative_deviation").get<double>();
      r.accounting_residual = c.at("accounting_residual").get<double>();
      map.conservation = r;
    }
    if (j.contains("tokens")) map.tokens = j.at("tokens").get<std::vector<std::string>>();
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed relevance JSON: ") + e.what());
  }
}

}  // namespace relprop
