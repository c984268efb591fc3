// relprop: train desk-scale classifiers, explain predictions (SA / LRP),
// score explanations by perturbation, and render heatmaps.
//
// Exit codes: 0 success, 1 runtime error, 2 usage / configuration error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relprop/relprop.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relprop;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string lowercase_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

bool is_idx(const fs::path& p) {
  const std::string name = p.filename().string();
  return lowercase_ext(p) == ".idx" || name.find("-ubyte") != std::string::npos;
}

// SHA-256 of every regular file an input path refers to (model directories
// contribute their manifest and blob).
json hash_inputs(const std::vector<fs::path>& paths) {
  json out = json::object();
  for (const fs::path& p : paths) {
    if (p.empty()) continue;
    if (fs::is_directory(p)) {
      for (const char* name : {kManifestName, kWeightsName}) {
        const fs::path f = p / name;
        if (fs::exists(f)) out[f.string()] = sha256_hex(read_file(f));
      }
    } else if (fs::exists(p)) {
      out[p.string()] = sha256_hex(read_file(p));
    }
  }
  return out;
}

void write_run_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                        const json& config, const std::vector<fs::path>& inputs,
                        const std::vector<fs::path>& outputs) {
  json j;
  j["tool"] = "relprop";
  j["manifest_version"] = 1;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config;
  j["input_sha256"] = hash_inputs(inputs);
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back(o.string());
  j["outputs"] = outs;
  write_file_atomic(path, dump(j));
}

fs::path sidecar(const fs::path& output) { return output.string() + ".manifest.json"; }

struct LoadedData {
  Dataset data;
  std::string format;
};

// Dispatches on file type: .csv, IDX images (+ optional IDX labels), or a
// token document file (needs a vocabulary).
LoadedData load_dataset(const fs::path& path, const std::string& label_column, const fs::path& labels_path,
                        const fs::path& vocab, std::optional<std::size_t> max_len, std::optional<std::size_t> limit) {
  LoadedData out;
  if (lowercase_ext(path) == ".csv") {
    out.format = "csv";
    out.data = load_csv(path, label_column.empty() ? std::nullopt : std::optional<std::string>(label_column));
  } else if (is_idx(path)) {
    out.format = "idx";
    out.data = labels_path.empty() ? load_idx_images(path, limit) : load_idx(path, labels_path, limit);
  } else if (lowercase_ext(path) == ".txt" || lowercase_ext(path) == ".tok") {
    out.format = "tokens";
    if (vocab.empty()) throw Error(ErrorKind::Config, "token input " + path.string() + " needs --vocab");
    if (!max_len) throw Error(ErrorKind::Config, "token input needs a sequence length");
    out.data = load_tokens(path, vocab, *max_len);
  } else if (lowercase_ext(path) == ".json") {
    out.format = "tensor-json";
    const json j = json::parse(read_file(path));
    out.data.inputs.emplace_back(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
  } else {
    throw Error(ErrorKind::Config, "cannot infer the format of " + path.string() +
                                       " (expected .csv, .idx / *-ubyte, .txt or .json)");
  }
  if (limit && out.data.inputs.size() > *limit) {
    out.data.inputs.resize(*limit);
    if (out.data.labeled()) out.data.labels.resize(*limit);
    if (!out.data.tokens.empty()) out.data.tokens.resize(*limit);
  }
  if (out.data.inputs.empty()) throw Error(ErrorKind::Config, path.string() + " holds no samples");
  return out;
}

std::optional<std::size_t> token_length(const Model& model) {
  if (model.embeds_tokens()) return model.input_shape.at(0);
  return std::nullopt;
}

RuleConfig parse_rule(const std::string& method, double epsilon, double alpha, std::optional<double> beta) {
  if (method == "lrp-eps") return RuleConfig::make_epsilon(epsilon);
  if (method == "lrp-ab") return RuleConfig::make_alpha_beta(alpha, beta.value_or(alpha - 1.0));
  throw Error(ErrorKind::Config, "unknown LRP method '" + method + "'");
}

std::optional<ChannelNorm> parse_norm(const std::string& s) {
  if (s.empty() || s == "auto") return std::nullopt;
  if (s == "abs") return ChannelNorm::Abs;
  if (s == "l2" || s == "l2_over_channels") return ChannelNorm::L2OverChannels;
  throw Error(ErrorKind::Config, "unknown channel norm '" + s + "' (abs | l2)");
}

ColorMapSpec parse_colormap(const std::string& kind, std::optional<double> saturation) {
  ColorMapSpec spec;
  if (kind == "diverging") spec.kind = ColorMapKind::DivergingSigned;
  else if (kind == "magnitude") spec.kind = ColorMapKind::SequentialMagnitude;
  else throw Error(ErrorKind::Config, "unknown colormap '" + kind + "' (diverging | magnitude)");
  if (saturation && !(*saturation > 0.0)) throw Error(ErrorKind::Config, "--saturation must be positive");
  spec.saturation = saturation;
  return spec;
}

// Writes a heatmap (PPM) or token page (HTML) for a relevance map, chosen by
// the output extension.
void render_map(const RelevanceMap& map, const ColorMapSpec& spec, const fs::path& out) {
  if (lowercase_ext(out) == ".html" || lowercase_ext(out) == ".htm") {
    if (map.tokens.empty()) throw Error(ErrorKind::Config, "HTML rendering needs a map explaining a token document");
    std::vector<double> rel = token_relevance(map);
    rel.resize(map.tokens.size());
    render_text_html(map.tokens, rel, spec, out);
    return;
  }
  if (map.values.rank() == 1) {
    render_heatmap_image(map.values.reshaped({1, map.values.size()}), spec, out);
  } else {
    render_heatmap_image(display_map(map), spec, out);
  }
}

Extent2 parse_patch(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto w = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::exception&) {
    throw Error(ErrorKind::Config, "--patch expects HxW, got '" + s + "'");
  }
}

struct TrainFlags {
  std::string data, label, labels, out;
  std::vector<std::size_t> layers;
  std::size_t epochs = 50;
  double lr = 0.1;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  bool no_bias = false;
};

int cmd_train(const TrainFlags& f, const std::vector<std::string>& argv) {
  const auto loaded = load_dataset(f.data, f.label, f.labels, {}, std::nullopt, std::nullopt);
  if (!loaded.data.labeled()) throw Error(ErrorKind::Config, "training data needs labels (--label / --labels)");
  const MlpArchitecture arch{f.layers, !f.no_bias};
  const TrainOptions opt{f.epochs, f.lr, f.seed, f.batch_size};
  const TrainResult result = train_mlp(loaded.data, arch, opt);

  const fs::path dir = f.out;
  save_model(result.model, dir);
  json report;
  report["train_accuracy"] = result.train_accuracy;
  report["initial_loss"] = result.initial_loss;
  report["epoch_losses"] = result.epoch_losses;
  report["n_samples"] = loaded.data.size();
  write_file_atomic(dir / "train_report.json", dump(report));

  json config = {{"data", f.data},     {"data_format", loaded.format}, {"label", f.label},
                 {"labels", f.labels}, {"layers", f.layers},           {"epochs", f.epochs},
                 {"lr", f.lr},         {"seed", f.seed},               {"batch_size", f.batch_size},
                 {"bias", !f.no_bias}, {"loss", "softmax cross-entropy"}, {"optimizer", "sgd"},
                 {"out", f.out}};
  write_run_manifest(dir / "run_manifest.json", "train", argv, config, {f.data, f.labels},
                     {dir / kManifestName, dir / kWeightsName, dir / "train_report.json"});
  std::cout << "train accuracy: " << result.train_accuracy << "\n";
  return kExitOk;
}

struct ExplainFlags {
  std::string model, input, label, vocab, method = "lrp-eps", channel_norm, render, colormap = "diverging", out = "relevance.json";
  std::size_t index = 0;
  double epsilon = 0.01;
  double alpha = 1.0;
  std::optional<double> beta;
  std::optional<std::size_t> target;
  std::optional<double> saturation;
};

int cmd_explain(const ExplainFlags& f, const std::vector<std::string>& argv) {
  if (f.method != "sa" && f.method != "lrp-eps" && f.method != "lrp-ab") {
    throw Error(ErrorKind::Config, "unknown method '" + f.method + "' (sa | lrp-eps | lrp-ab)");
  }
  const Model model = load_model(f.model);
  const auto loaded = load_dataset(f.input, f.label, {}, f.vocab, token_length(model), std::nullopt);
  if (f.index >= loaded.data.size()) {
    throw Error(ErrorKind::Config, "--index " + std::to_string(f.index) + " but input holds " +
                                       std::to_string(loaded.data.size()) + " samples");
  }
  const Tensor& x = loaded.data.inputs[f.index];
  const ForwardTrace trace = forward(model, x);
  const std::size_t target = f.target.value_or(trace.predicted_class);

  json config = {{"model", f.model}, {"input", f.input}, {"index", f.index}, {"method", f.method},
                 {"target_class", target}, {"target_source", f.target ? "flag" : "predicted"},
                 {"explained_score", "pre-softmax logit"}, {"out", f.out}};
  RelevanceMap map;
  json audit;
  if (f.method == "sa") {
    const GradientMap g = backward_gradient(model, trace, target);
    const ChannelNorm norm = parse_norm(f.channel_norm).value_or(default_channel_norm(g.values));
    map = sensitivity_map(g, norm);
    config["channel_norm"] = to_string(norm);
    audit = {{"performed", false}, {"reason", "sensitivity maps explain a variation of f(x), not f(x)"}};
  } else {
    const RuleConfig rule = parse_rule(f.method, f.epsilon, f.alpha, f.beta);
    map = lrp_explain(model, trace, target, rule);
    config["rule"] = rule_to_json(rule);
    const ConservationReport r = conservation_audit(map);
    audit = {{"performed", true},
             {"max_relative_deviation", r.max_relative_deviation},
             {"accounting_residual", r.accounting_residual},
             {"input_sum", r.layer_sums.back()}};
  }
  if (!loaded.data.tokens.empty()) map.tokens = loaded.data.tokens[f.index];

  json j = relevance_to_json(map);
  j["audit"] = audit;
  j["logits"] = trace.logits.vec();
  j["predicted_class"] = trace.predicted_class;
  j["class_name"] = model.class_names.at(target);
  if (map.values.rank() == 2 && model.embeds_tokens()) j["token_relevance"] = token_relevance(map);

  std::vector<fs::path> outputs{f.out};
  write_file_atomic(f.out, dump(j));
  if (!f.render.empty()) {
    const ColorMapSpec spec = parse_colormap(f.colormap, f.saturation);
    render_map(map, spec, f.render);
    config["render"] = {{"path", f.render}, {"colormap", f.colormap},
                        {"saturation", f.saturation ? json(*f.saturation) : json("max |R|")}};
    outputs.push_back(f.render);
  }
  write_run_manifest(sidecar(f.out), "explain", argv, config, {f.model, f.input, f.vocab}, outputs);
  return kExitOk;
}

struct EvaluateFlags {
  std::string model, data, label, labels, vocab, methods = "lrp-eps,sa,random", perturb, patch = "9x9",
      channel_norm, out = "curves.csv", summary;
  std::size_t steps = 10;
  std::uint64_t seed = 0;
  double epsilon = 0.01;
  double alpha = 1.0;
  std::optional<double> beta, low, high;
  std::optional<std::size_t> limit;
  std::size_t threads = 1;
};

int cmd_evaluate(const EvaluateFlags& f, const std::vector<std::string>& argv) {
  const Model model = load_model(f.model);
  const auto loaded = load_dataset(f.data, f.label, f.labels, f.vocab, token_length(model), f.limit);

  std::vector<MethodSpec> methods;
  std::stringstream ss(f.methods);
  for (std::string name; std::getline(ss, name, ',');) {
    if (name == "sa") methods.push_back(MethodSpec::sensitivity(parse_norm(f.channel_norm)));
    else if (name == "random") methods.push_back(MethodSpec::random());
    else if (name == "lrp-eps" || name == "lrp-ab") methods.push_back(MethodSpec::lrp(parse_rule(name, f.epsilon, f.alpha, f.beta)));
    else throw Error(ErrorKind::Config, "unknown method '" + name + "' (sa | lrp-eps | lrp-ab | random)");
  }

  PerturbationPlan plan;
  const std::string perturb = f.perturb.empty() ? (model.input_shape.size() == 3 ? "patch" : "zero") : f.perturb;
  if (perturb == "patch") plan.mode = PerturbMode::PatchUniform;
  else if (perturb == "zero") plan.mode = PerturbMode::ZeroDelete;
  else throw Error(ErrorKind::Config, "--perturb must be patch or zero");
  plan.patch = parse_patch(f.patch);
  plan.steps = f.steps;
  plan.seed = f.seed;
  double lo = loaded.data.inputs.front()[0], hi = lo;
  for (const Tensor& t : loaded.data.inputs) {
    for (double v : t.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  plan.low = f.low.value_or(lo);
  plan.high = f.high.value_or(hi);
  plan.validate_for(model.input_shape);

  const Comparison cmp = compare_methods(model, loaded.data.inputs, methods, plan, f.threads);

  const fs::path csv = f.out;
  const fs::path summary = f.summary.empty() ? fs::path(csv).replace_extension(".summary.json") : fs::path(f.summary);
  write_file_atomic(csv, curves_csv(cmp));
  json s = comparison_summary(cmp, plan);
  json methods_cfg = json::array();
  for (const auto& m : methods) {
    json mj = {{"label", m.label}};
    if (m.kind == MethodKind::Lrp) mj["rule"] = rule_to_json(m.rule);
    if (m.kind == MethodKind::Sensitivity) mj["channel_norm"] = m.norm ? to_string(*m.norm) : "auto (l2 for c x h x w, abs otherwise)";
    methods_cfg.push_back(mj);
  }
  s["method_config"] = methods_cfg;
  s["value_range_source"] = f.low || f.high ? "flags" : "observed min/max of the evaluated inputs";
  write_file_atomic(summary, dump(s));

  json config = {{"model", f.model}, {"data", f.data}, {"perturb", perturb}, {"patch", f.patch},
                 {"steps", f.steps}, {"seed", f.seed}, {"epsilon", f.epsilon}, {"alpha", f.alpha},
                 {"beta", f.beta.value_or(f.alpha - 1.0)}, {"value_range", {plan.low, plan.high}},
                 {"limit", f.limit ? json(*f.limit) : json(nullptr)}, {"methods", methods_cfg},
                 {"out", f.out}, {"summary", summary.string()}};
  // thread count does not affect outputs, so it stays out of the manifest config
  write_run_manifest(sidecar(csv), "evaluate", argv, config, {f.model, f.data, f.labels, f.vocab}, {csv, summary});
  for (const auto& m : cmp.methods) std::cout << m.label << " auc=" << m.auc << " n=" << m.n_samples << "\n";
  return kExitOk;
}

struct RenderFlags {
  std::string input, out, colormap = "diverging";
  std::optional<double> saturation;
};

int cmd_render(const RenderFlags& f, const std::vector<std::string>& argv) {
  const RelevanceMap map = relevance_from_json(json::parse(read_file(f.input)));
  const ColorMapSpec spec = parse_colormap(f.colormap, f.saturation);
  render_map(map, spec, f.out);
  json config = {{"input", f.input}, {"out", f.out}, {"colormap", f.colormap},
                 {"saturation", f.saturation ? json(*f.saturation) : json("max |R|")}};
  write_run_manifest(sidecar(f.out), "render", argv, config, {f.input}, {f.out});
  return kExitOk;
}

int run(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path) {
  const json m = json::parse(read_file(manifest_path));
  const auto argv = m.at("argv").get<std::vector<std::string>>();
  if (argv.size() < 2 || argv[1] == "replay") throw Error(ErrorKind::Config, "manifest has no replayable command");
  for (const auto& [path, digest] : m.at("input_sha256").items()) {
    if (!fs::exists(path)) throw Error(ErrorKind::Io, "recorded input " + path + " is missing");
    if (sha256_hex(read_file(path)) != digest.get<std::string>()) {
      throw Error(ErrorKind::Checksum, "recorded input " + path + " changed since the run");
    }
  }
  return run(argv);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"relprop: relevance propagation and sensitivity explanations for feed-forward classifiers"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train a Dense/ReLU classifier");
  train->add_option("--data", tf.data, "training data (.csv or IDX images)")->required();
  train->add_option("--label", tf.label, "label column (CSV)");
  train->add_option("--labels", tf.labels, "IDX label file");
  train->add_option("--layers", tf.layers, "widths, e.g. 2,8,2")->delimiter(',')->required();
  train->add_option("--epochs", tf.epochs, "epochs")->capture_default_str();
  train->add_option("--lr", tf.lr, "learning rate")->capture_default_str();
  train->add_option("--seed", tf.seed, "PRNG seed")->required();
  train->add_option("--batch-size", tf.batch_size, "minibatch size")->capture_default_str();
  train->add_flag("--no-bias", tf.no_bias, "keep all biases at zero");
  train->add_option("--out", tf.out, "output model directory")->required();

  ExplainFlags ef;
  auto* explain = app.add_subcommand("explain", "explain one prediction");
  explain->add_option("--model", ef.model, "model directory or manifest")->required();
  explain->add_option("--input", ef.input, "input (.idx, .csv, .txt tokens, .json tensor)")->required();
  explain->add_option("--index", ef.index, "sample index within the input file")->capture_default_str();
  explain->add_option("--label", ef.label, "CSV label column to drop");
  explain->add_option("--vocab", ef.vocab, "vocabulary TSV for token input");
  explain->add_option("--method", ef.method, "sa | lrp-eps | lrp-ab")->capture_default_str();
  explain->add_option("--epsilon", ef.epsilon, "epsilon-rule stabilizer")->capture_default_str();
  explain->add_option("--alpha", ef.alpha, "alpha of the alpha-beta rule")->capture_default_str();
  explain->add_option("--beta", ef.beta, "beta of the alpha-beta rule (default alpha - 1)");
  explain->add_option("--class", ef.target, "class to explain (default: predicted)");
  explain->add_option("--channel-norm", ef.channel_norm, "SA norm: abs | l2 (default l2 for c x h x w)");
  explain->add_option("--render", ef.render, "also render to .ppm or .html");
  explain->add_option("--colormap", ef.colormap, "diverging | magnitude")->capture_default_str();
  explain->add_option("--saturation", ef.saturation, "colormap saturation (default max |R|)");
  explain->add_option("--out", ef.out, "relevance JSON output")->capture_default_str();

  EvaluateFlags vf;
  auto* evaluate = app.add_subcommand("evaluate", "perturbation analysis of explanation methods");
  evaluate->add_option("--model", vf.model, "model directory or manifest")->required();
  evaluate->add_option("--data", vf.data, "inputs (.csv, IDX images, .txt tokens)")->required();
  evaluate->add_option("--label", vf.label, "CSV label column to drop");
  evaluate->add_option("--labels", vf.labels, "IDX label file (unused by the analysis)");
  evaluate->add_option("--vocab", vf.vocab, "vocabulary TSV for token input");
  evaluate->add_option("--limit", vf.limit, "use the first N samples");
  evaluate->add_option("--methods", vf.methods, "comma list of sa, lrp-eps, lrp-ab, random")->capture_default_str();
  evaluate->add_option("--perturb", vf.perturb, "patch | zero (default patch for c x h x w inputs)");
  evaluate->add_option("--patch", vf.patch, "patch size HxW")->capture_default_str();
  evaluate->add_option("--steps", vf.steps, "perturbation steps")->capture_default_str();
  evaluate->add_option("--seed", vf.seed, "PRNG seed")->required();
  evaluate->add_option("--epsilon", vf.epsilon, "epsilon for lrp-eps")->capture_default_str();
  evaluate->add_option("--alpha", vf.alpha, "alpha for lrp-ab")->capture_default_str();
  evaluate->add_option("--beta", vf.beta, "beta for lrp-ab (default alpha - 1)");
  evaluate->add_option("--channel-norm", vf.channel_norm, "SA norm: abs | l2");
  evaluate->add_option("--low", vf.low, "uniform replacement lower bound");
  evaluate->add_option("--high", vf.high, "uniform replacement upper bound");
  evaluate->add_option("--threads", vf.threads, "worker threads")->capture_default_str();
  evaluate->add_option("--out", vf.out, "curve CSV output")->capture_default_str();
  evaluate->add_option("--summary", vf.summary, "summary JSON (default <out>.summary.json)");

  RenderFlags rf;
  auto* render = app.add_subcommand("render", "render a saved relevance JSON");
  render->add_option("--input", rf.input, "relevance JSON")->required();
  render->add_option("--out", rf.out, "output .ppm or .html")->required();
  render->add_option("--colormap", rf.colormap, "diverging | magnitude")->capture_default_str();
  render->add_option("--saturation", rf.saturation, "colormap saturation (default max |R|)");

  std::string replay_path;
  auto* replay = app.add_subcommand("replay", "re-run the command recorded in a run manifest");
  replay->add_option("manifest", replay_path, "run manifest JSON")->required();

  std::vector<const char*> cargv;
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(tf, args);
    if (*explain) return cmd_explain(ef, args);
    if (*evaluate) return cmd_evaluate(vf, args);
    if (*render) return cmd_render(rf, args);
    if (*replay) return cmd_replay(replay_path);
  } catch (const Error& e) {
    std::cerr << "relprop: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? kExitUsage : kExitRuntime;
  } catch (const json::exception& e) {
    std::cerr << "relprop: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "relprop: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  args[0] = "relprop";
  return run(args);
}
