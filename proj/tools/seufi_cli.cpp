// seufi: command-line front end for model generation, fault-injection campaigns,
// analytical predictions and compression.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seufi/seufi.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace seufi;

namespace {

/// Two decimals, halves rounded up. A value such as 51.745 is stored just below
/// itself, and plain %.2f would print 51.74.
std::string percent_2dp(double v) {
  const double cents = std::floor(v * 100.0 + 0.5 + 1e-9 * std::abs(v * 100.0));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", cents / 100.0);
  return buf;
}

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

constexpr const char* kOutDirEnv = "SEUFI_OUT_DIR";

fs::path default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path out_path(const std::string& given, const char* fallback) {
  return given.empty() ? default_out_dir() / fallback : fs::path(given);
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_file(p);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, std::as_bytes(std::span(text.data(), text.size())));
}

void save_model_file(const ModelGraph& m, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  save_model(m, p);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

std::vector<double> real_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ValidationError(std::string("bad ") + what + " entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

BiasSignVector sign_list(const std::string& s) {
  BiasSignVector out;
  for (const auto& item : split_list(s)) {
    if (item == "-" || item == "neg") {
      out.push_back(BiasSign::Negative);
    } else if (item == "+" || item == "pos") {
      out.push_back(BiasSign::Positive);
    } else {
      throw ValidationError("bad sign '" + item + "' (use + or -)");
    }
  }
  return out;
}

std::vector<InputSpec> input_specs(const std::string& s) {
  std::vector<InputSpec> out;
  for (const auto& item : split_list(s)) out.push_back(parse_input_spec(item));
  return out;
}

void print_plan(const ModelGraph& model, const CampaignPlan& p) {
  std::printf("%-8s %-12s %14s %8s\n", "layer", "kind", "fault_space", "n");
  for (const auto& l : p.layers) {
    std::printf("%-8d %-12s %14llu %8llu\n", l.layer_id, std::string(to_string(model.node(l.layer_id).kind)).c_str(),
                static_cast<unsigned long long>(l.fault_space), static_cast<unsigned long long>(l.injections));
  }
  std::printf("total    %-12s %14llu %8llu\n", "", static_cast<unsigned long long>(p.total_fault_space()),
              static_cast<unsigned long long>(p.total_injections()));
}

std::uint64_t default_fault_space(const ModelGraph& m) {
  KindSet kinds = default_campaign_kinds();
  return enumerate_fault_space(m, kinds).total();
}

void print_model_summary(const ModelGraph& m) {
  std::printf("model %s: %zu layers, %zu parameters, %u classes, %s, %s\n", model_digest(m).substr(0, 16).c_str(),
              m.nodes.size(), m.parameter_count(), m.n_classes, std::string(to_string(m.activation)).c_str(),
              m.dtype_mode == DTypeMode::Int8 ? "int8" : "float32");
}

json cell_json(const CellStats& c) {
  return json{{"count", c.count},   {"count_nonzero", c.count_nonzero}, {"mean", c.mean},
              {"std", c.std},       {"mean_nonzero", c.mean_nonzero},   {"max", c.max}};
}

// ---------------------------------------------------------------- gen

struct GenOptions {
  int depth = 2;
  int channels = 8;
  std::uint32_t classes = 4;
  std::uint32_t in_channels = 3;
  std::string activation = "relu";
  std::uint64_t seed = 0;
  std::string out;
  bool no_calibration = false;
  std::string probe_biases;
  std::string probe_freqs;
  std::size_t probe_size = 64;
  std::string input_out;
};

int cmd_gen(const GenOptions& o) {
  const auto act = parse_activation(o.activation);
  ModelGraph model;
  if (!o.probe_biases.empty()) {
    const auto biases_d = real_list(o.probe_biases, "bias");
    const auto freqs = real_list(o.probe_freqs, "frequency");
    std::vector<float> biases(biases_d.begin(), biases_d.end());
    auto probe = build_bias_probe_model(biases, freqs, o.seed, o.probe_size, o.probe_size, act);
    model = std::move(probe.model);
    if (!o.input_out.empty()) {
      const fs::path ip(o.input_out);
      if (ip.has_parent_path()) fs::create_directories(ip.parent_path());
      save_tensor(probe.input, ip);
      std::printf("wrote probe input %s\n", ip.string().c_str());
    }
  } else {
    UNetOptions uo;
    uo.calibrate_batch_norm = !o.no_calibration;
    model = build_unet(o.depth, o.channels, o.in_channels, o.classes, act, o.seed, uo);
  }
  const auto path = out_path(o.out, "model.seufi");
  save_model_file(model, path);
  print_model_summary(model);
  CampaignConfig defaults;
  print_plan(model, plan(model, defaults));
  std::printf("wrote %s (sha256 %s)\n", path.string().c_str(), file_sha256(path).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- plan / run

struct CampaignOptions {
  std::string model;
  std::string config;
  std::string out_dir;
  unsigned jobs = 1;
};

CampaignConfigFile load_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_campaign_config(read_text(path));
}

int cmd_plan(const CampaignOptions& o) {
  const auto model = load_model(o.model);
  const auto cfg = load_config(o.config);
  print_model_summary(model);
  print_plan(model, plan(model, cfg.config));
  return kExitOk;
}

json config_json(const CampaignConfigFile& f) {
  const auto& c = f.config;
  json kinds = json::array(), inputs = json::array();
  for (auto k : c.included_kinds) kinds.push_back(std::string(to_string(k)));
  for (const auto& s : f.inputs) inputs.push_back(to_string(s));
  return json{{"e", c.e},
              {"t", c.t},
              {"p", c.p},
              {"cap", c.cap},
              {"included_kinds", kinds},
              {"sampling", std::string(to_string(c.sampling))},
              {"seed", c.seed},
              {"inputs", inputs},
              {"bits", c.bits},
              {"layers", c.layers},
              {"input_mode", std::string(to_string(c.input_mode))},
              {"text", format_campaign_config(f)}};
}

int cmd_run(const CampaignOptions& o) {
  const auto started = std::chrono::steady_clock::now();
  const auto model = load_model(o.model);
  auto cfg = load_config(o.config);
  if (cfg.inputs.empty()) throw ValidationError("config lists no inputs (inputs = synthetic:SEED:HxW, ...)");
  cfg.config.inputs = resolve_inputs(cfg.inputs, model, fs::path(o.config).parent_path());
  const auto result = run_campaign(model, cfg.config, o.jobs);

  const fs::path dir = o.out_dir.empty() ? default_out_dir() : fs::path(o.out_dir);
  fs::create_directories(dir);
  const auto rows = matrix_rows(result.matrix);
  write_text(dir / "records.csv", format_records_csv(result.records));
  write_text(dir / "matrix.csv", format_matrix_csv(rows));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  json layers = json::array();
  for (const auto& l : result.plan.layers) {
    layers.push_back({{"layer_id", l.layer_id}, {"fault_space", l.fault_space}, {"injections", l.injections}});
  }
  json outputs = json::array();
  for (const char* name : {"records.csv", "matrix.csv"}) {
    outputs.push_back({{"file", name}, {"sha256", file_sha256(dir / name)}, {"bytes", fs::file_size(dir / name)}});
  }
  json manifest{
      {"tool", "seufi"},
      {"version", kVersion},
      {"command", "run"},
      {"model", {{"path", o.model}, {"file_sha256", file_sha256(o.model)}, {"digest", model_digest(model)}}},
      {"seed", cfg.config.seed},
      {"jobs", o.jobs},
      {"config", config_json(cfg)},
      {"sampling",
       {{"method", std::string(to_string(cfg.config.sampling))},
        {"total_fault_space", result.plan.total_fault_space()},
        {"total_injections", result.plan.total_injections()},
        {"layers", layers}}},
      {"summary", cell_json(result.matrix.global)},
      {"records", result.records.size()},
      {"timing", {{"wall_seconds", seconds}}},
      {"outputs", outputs},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::printf("%zu injections over %zu layers, mean error %.4f%% (max %.4f%%)\n", result.records.size(),
              result.plan.layers.size(), 100.0 * result.matrix.global.mean, 100.0 * result.matrix.global.max);
  std::printf("wrote %s\n", dir.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
  std::string freqs;
  std::string signs;
  std::string biases;
  std::string contributions;
  std::string p_fi;
  std::string model;
  std::string input = "synthetic:0:64x64";
  std::optional<int> layer;
  std::string activation;
  std::optional<int> k_sat;
  std::optional<int> k_min;
  std::string weighting = "saturated_only";
  std::string out;
};

int cmd_predict(const PredictOptions& o) {
  PredictionReport report;
  const auto p_fi = o.p_fi.empty() ? std::vector<double>{} : real_list(o.p_fi, "p_fi");
  int layer = o.layer.value_or(0);
  ActivationKind act = ActivationKind::ReLU;
  std::vector<double> contributions;
  ClassFrequencies freqs;
  BiasSignVector signs;

  if (!o.contributions.empty()) {
    for (double c : real_list(o.contributions, "contribution")) contributions.push_back(c / 100.0);
  } else {
    if (!o.model.empty()) {
      const auto model = load_model(o.model);
      const auto& head = model.node(model.output_id());
      if (head.kind != LayerKind::Conv) throw ValidationError("the output layer is not a conv; no final biases");
      const auto specs = input_specs(o.input);
      const auto inputs = resolve_inputs(specs, model);
      const auto golden = golden_run(model, inputs.at(0));
      freqs = class_frequencies(golden, model.n_classes);
      const auto& bias = head.param(ParamKind::ConvBias);
      std::vector<float> real;
      for (std::size_t i = 0; i < bias.size(); ++i) real.push_back(static_cast<float>(bias.real_at(i)));
      signs = bias_signs(real);
      if (!o.layer) layer = head.id;
      act = model.activation;
    } else {
      if (o.freqs.empty()) throw ValidationError("give --freqs with --signs/--biases, --contributions, or --model");
      freqs = real_list(o.freqs, "frequency");
      double total = 0.0;
      for (double f : freqs) {
        if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("class frequencies must lie in [0, 1]");
        total += f;
      }
      if (std::abs(total - 1.0) > 1e-3) {
        throw ValidationError("class frequencies must sum to 1 (got " + std::to_string(total) + ")");
      }
      if (!o.biases.empty()) {
        const auto b = real_list(o.biases, "bias");
        signs = bias_signs(std::vector<float>(b.begin(), b.end()));
      } else {
        signs = sign_list(o.signs);
      }
    }
    contributions = bias_flip_contributions(freqs, signs);
  }
  if (!o.activation.empty()) act = parse_activation(o.activation);

  report.frequencies = freqs;
  for (auto s : signs) report.signs.push_back(s == BiasSign::Negative ? "-" : "+");
  for (double c : contributions) report.contributions.push_back(100.0 * c);

  const double fp32 = expected_error_from_contributions(contributions, p_fi);
  report.entries.push_back({"fp32_msb", layer, {30}, {1.0}, 100.0 * fp32});

  auto profile = act == ActivationKind::ReLU ? SaturationProfile::relu_preset()
                 : act == ActivationKind::Sigmoid ? SaturationProfile::sigmoid_preset()
                                                  : SaturationProfile::hard_sigmoid_preset();
  profile.weighting = parse_weighting(o.weighting);
  if (o.k_sat) profile.k_sat = *o.k_sat;
  if (o.k_min) profile.k_min = *o.k_min;
  profile.validate();
  report.p_fi = p_fi;
  report.profile = profile;
  PredictionEntry q;
  q.name = "int8_bias_" + std::string(to_string(profile.weighting));
  q.layer_id = layer;
  double wsum = 0.0;
  for (int k = profile.bit_lo; k <= profile.bit_hi; ++k) {
    if (profile.weight(k) == 0.0) continue;
    q.bits.push_back(k);
    q.weights.push_back(profile.weight(k));
    wsum += profile.weight(k);
  }
  const double mean_w = wsum / static_cast<double>(profile.bit_hi - profile.bit_lo + 1);
  q.expected_error = 100.0 * fp32 * (profile.weighting == Weighting::SaturatedOnly ? 1.0 : mean_w);
  report.entries.push_back(q);

  std::printf("%-6s %10s %5s %14s\n", "class", "freq", "sign", "contrib(%)");
  for (std::size_t j = 0; j < contributions.size(); ++j) {
    std::printf("%-6zu %10s %5s %14.4f\n", j, freqs.empty() ? "-" : std::to_string(freqs[j]).c_str(),
                signs.empty() ? "-" : report.signs[j].c_str(), report.contributions[j]);
  }
  for (const auto& e : report.entries) {
    std::printf("%-28s layer %d: expected error %s%% (%.4f)\n", e.name.c_str(), e.layer_id,
                percent_2dp(e.expected_error).c_str(), e.expected_error);
  }
  const auto path = out_path(o.out, "prediction.json");
  write_text(path, prediction_to_json(report));
  std::printf("wrote %s\n", path.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- compare

struct CompareOptions {
  std::string matrix;
  std::string prediction;
  double margin = 2.5;
  std::string out;
};

int cmd_compare(const CompareOptions& o) {
  const auto rows = parse_matrix_csv(read_text(o.matrix));
  const auto report = prediction_from_json(read_text(o.prediction));
  const auto cmp = compare_prediction(report, rows, o.margin);
  std::printf("%-28s %6s %10s %10s %10s %6s\n", "prediction", "layer", "predicted", "measured", "deviation", "flag");
  json out = json::array();
  std::size_t flagged = 0;
  for (const auto& c : cmp) {
    std::printf("%-28s %6d %10.4f %10.4f %10.4f %6s\n", c.name.c_str(), c.layer_id, c.predicted, c.measured,
                c.deviation, c.flagged ? "FLAG" : "ok");
    flagged += c.flagged;
    out.push_back({{"name", c.name},
                   {"layer_id", c.layer_id},
                   {"predicted", c.predicted},
                   {"measured", c.measured},
                   {"deviation", c.deviation},
                   {"cells", c.cells},
                   {"flagged", c.flagged}});
  }
  std::printf("%zu of %zu deviations exceed %.4g points\n", flagged, cmp.size(), o.margin);
  if (!o.out.empty()) write_text(o.out, json{{"margin", o.margin}, {"comparisons", out}}.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------- prune / quantize

struct PruneOptions {
  std::string model;
  std::optional<double> ratio;
  std::string plan_file;
  std::string exclude;
  std::string out;
  std::string sweep_out;
  std::string inputs = "synthetic:1:32x32";
};

PruningPlan read_plan(const std::string& path) {
  // Same key = value syntax as campaign configs: "<layer id> = <ratio>".
  PruningPlan plan;
  int line = 0;
  std::string text = read_text(path);
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string row = text.substr(start, end - start);
    start = end + 1;
    ++line;
    if (auto h = row.find('#'); h != std::string::npos) row.resize(h);
    if (row.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = row.find('=');
    if (eq == std::string::npos) throw ParseError("expected '<layer> = <ratio>'", line);
    try {
      std::size_t used = 0;
      const int id = std::stoi(row.substr(0, eq), &used);
      const double r = std::stod(row.substr(eq + 1));
      plan.ratios[id] = r;
    } catch (const std::logic_error&) {
      throw ParseError("expected '<layer> = <ratio>'", line);
    }
  }
  return plan;
}

void print_before_after(const ModelGraph& before, const ModelGraph& after) {
  std::printf("parameters:  %zu -> %zu\n", before.parameter_count(), after.parameter_count());
  std::printf("fault space: %llu -> %llu\n", static_cast<unsigned long long>(default_fault_space(before)),
              static_cast<unsigned long long>(default_fault_space(after)));
}

int cmd_prune(const PruneOptions& o) {
  const auto model = load_model(o.model);
  PruningPlan plan = o.plan_file.empty() ? PruningPlan{} : read_plan(o.plan_file);
  if (!o.exclude.empty()) {
    for (double v : real_list(o.exclude, "layer")) plan.excluded.insert(static_cast<int>(v));
  }
  if (o.ratio) {
    for (int id : prunable_layers(model)) {
      if (!plan.excluded.contains(id) && !plan.ratios.contains(id)) plan.ratios[id] = *o.ratio;
    }
  }
  if (!o.sweep_out.empty()) {
    const auto inputs = resolve_inputs(input_specs(o.inputs), model);
    const auto samples = self_labeled(model, inputs);
    std::string csv = "layer_id,ratio,giou,wiou\n";
    for (int id : prunable_layers(model)) {
      if (plan.excluded.contains(id)) continue;
      const auto curve = sensitivity_sweep(model, samples, id);
      for (std::size_t k = 0; k < curve.ratios.size(); ++k) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%d,%.1f,%.17g,%.17g\n", id, curve.ratios[k], curve.giou[k], curve.wiou[k]);
        csv += buf;
      }
    }
    write_text(o.sweep_out, csv);
    std::printf("wrote %s\n", o.sweep_out.c_str());
  }
  const auto pruned = apply_prune(model, plan);
  print_before_after(model, pruned);
  const auto path = out_path(o.out, "pruned.seufi");
  save_model_file(pruned, path);
  std::printf("wrote %s (sha256 %s)\n", path.string().c_str(), file_sha256(path).c_str());
  return kExitOk;
}

struct QuantizeOptions {
  std::string model;
  std::string calib = "synthetic:1:32x32,synthetic:2:32x32,synthetic:3:32x32";
  std::string out;
};

int cmd_quantize(const QuantizeOptions& o) {
  const auto model = load_model(o.model);
  const bool has_bn = std::any_of(model.nodes.begin(), model.nodes.end(),
                                  [](const LayerNode& n) { return n.kind == LayerKind::BatchNorm; });
  const auto folded = has_bn ? fold_batch_norm(model) : model;
  const auto calibration = resolve_inputs(input_specs(o.calib), model);
  const auto q = quantize_model(folded, calibration);
  print_before_after(model, q);
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    const double mm = pixel_mismatch_rate(golden_run(model, calibration[i]), golden_run(q, calibration[i]));
    std::printf("calibration input %zu: float vs int8 pixel mismatch %.3f%%\n", i, 100.0 * mm);
  }
  const auto path = out_path(o.out, "quantized.seufi");
  save_model_file(q, path);
  std::printf("wrote %s (sha256 %s)\n", path.string().c_str(), file_sha256(path).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- census

struct CensusOptions {
  std::string model;
  std::vector<int> bits;
  std::string out_dir;
};

int cmd_census(const CensusOptions& o) {
  const auto model = load_model(o.model);
  const auto ranges = value_range_census(model);
  std::string csv = "layer_id,count,below_one,one_to_two,two_or_more,zero\n";
  std::printf("%-8s %8s %10s %10s %10s %10s\n", "layer", "count", "<1", "[1,2)", ">=2", "zero");
  for (const auto& c : ranges) {
    std::printf("%-8d %8zu %10.4f %10.4f %10.4f %10.4f\n", c.layer_id, c.count, c.below_one, c.one_to_two,
                c.two_or_more, c.zero);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g,%.17g,%.17g\n", c.layer_id, c.count, c.below_one,
                  c.one_to_two, c.two_or_more, c.zero);
    csv += buf;
  }
  std::vector<int> bits = o.bits;
  if (bits.empty()) bits = {23, 24, 25, 26, 27, 28, 29};
  std::string pcsv = "layer_id,bit,count,zero_at_bit,one_flip_from_filled,frac_zero_at_bit,frac_one_flip_from_filled\n";
  std::printf("\n%-8s %4s %10s %14s\n", "layer", "bit", "zero@bit", "->filled");
  for (int bit : bits) {
    for (const auto& c : partial_exponent_census(model, bit)) {
      std::printf("%-8d %4d %10.4f %14.4f\n", c.layer_id, c.bit, c.frac_zero_at_bit, c.frac_one_flip_from_filled);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%d,%d,%zu,%zu,%zu,%.17g,%.17g\n", c.layer_id, c.bit, c.count, c.zero_at_bit,
                    c.one_flip_from_filled, c.frac_zero_at_bit, c.frac_one_flip_from_filled);
      pcsv += buf;
    }
  }
  if (!o.out_dir.empty()) {
    write_text(fs::path(o.out_dir) / "value_range.csv", csv);
    write_text(fs::path(o.out_dir) / "partial_exponent.csv", pcsv);
    std::printf("wrote %s\n", o.out_dir.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-bit-upset fault injection for segmentation networks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a seeded synthetic model");
  g->add_option("--depth", gen.depth, "Encoder stages")->check(CLI::Range(1, 6));
  g->add_option("--channels", gen.channels, "Channels of the first stage")->check(CLI::Range(1, 512));
  g->add_option("--classes", gen.classes, "Output classes")->check(CLI::Range(1, 1000));
  g->add_option("--in-channels", gen.in_channels, "Input channels")->check(CLI::Range(1, 64));
  g->add_option("--activation", gen.activation, "relu, sigmoid or hard_sigmoid")
      ->check(CLI::IsMember({"relu", "sigmoid", "hard_sigmoid"}));
  g->add_option("--seed", gen.seed, "Seed");
  g->add_option("--out", gen.out, "Model file (default $SEUFI_OUT_DIR/model.seufi)");
  g->add_flag("--no-bn-calibration", gen.no_calibration, "Keep BN running stats at mean 0, var 1");
  g->add_option("--probe-biases", gen.probe_biases, "Build a bias probe model with these final biases");
  g->add_option("--probe-freqs", gen.probe_freqs, "Class frequencies of the probe model");
  g->add_option("--probe-size", gen.probe_size, "Probe image side")->check(CLI::Range(1, 4096));
  g->add_option("--input-out", gen.input_out, "Where to write the probe input tensor");

  CampaignOptions pl;
  auto* p = app.add_subcommand("plan", "Print per-layer fault space and sample sizes");
  p->add_option("--model", pl.model, "Model file")->required();
  p->add_option("--config", pl.config, "Campaign config file");

  CampaignOptions rn;
  auto* r = app.add_subcommand("run", "Run a fault-injection campaign");
  r->add_option("--model", rn.model, "Model file")->required();
  r->add_option("--config", rn.config, "Campaign config file")->required();
  r->add_option("--out-dir", rn.out_dir, "Output directory (default $SEUFI_OUT_DIR or .)");
  r->add_option("--jobs,-j", rn.jobs, "Worker threads")->check(CLI::Range(1u, 1024u));

  PredictOptions pr;
  auto* d = app.add_subcommand("predict", "Analytical error of final-layer bias MSB flips");
  d->add_option("--freqs", pr.freqs, "Class frequencies");
  d->add_option("--signs", pr.signs, "Bias signs (+/-)");
  d->add_option("--biases", pr.biases, "Bias values (signs are taken from them)");
  d->add_option("--contributions", pr.contributions, "Per-class contributions in percent");
  d->add_option("--p-fi", pr.p_fi, "Injection probability per class (default uniform)");
  d->add_option("--model", pr.model, "Derive frequencies and signs from a model");
  d->add_option("--input", pr.input, "Input spec for --model");
  d->add_option("--layer", pr.layer, "Layer id recorded in the prediction");
  d->add_option("--activation", pr.activation, "Saturation preset")->check(CLI::IsMember({"relu", "sigmoid", "hard_sigmoid"}));
  d->add_option("--k-sat", pr.k_sat, "Saturation bit")->check(CLI::Range(0, 31));
  d->add_option("--k-min", pr.k_min, "Ramp origin")->check(CLI::Range(0, 31));
  d->add_option("--weighting", pr.weighting, "saturated_only or linear_ramp")
      ->check(CLI::IsMember({"saturated_only", "linear_ramp"}));
  d->add_option("--out", pr.out, "Prediction JSON (default $SEUFI_OUT_DIR/prediction.json)");

  CompareOptions cm;
  auto* c = app.add_subcommand("compare", "Compare measured matrix cells with a prediction");
  c->add_option("--matrix", cm.matrix, "matrix.csv")->required();
  c->add_option("--prediction", cm.prediction, "prediction.json")->required();
  c->add_option("--margin", cm.margin, "Flag threshold in percentage points")->check(CLI::NonNegativeNumber);
  c->add_option("--out", cm.out, "Optional JSON report");

  PruneOptions pn;
  auto* n = app.add_subcommand("prune", "Structured L1 filter pruning");
  n->add_option("--model", pn.model, "Model file")->required();
  n->add_option("--ratio", pn.ratio, "Ratio for every prunable layer")->check(CLI::Range(0.0, 0.9));
  n->add_option("--plan", pn.plan_file, "Per-layer plan file ('<layer> = <ratio>' lines)");
  n->add_option("--exclude", pn.exclude, "Layer ids left untouched");
  n->add_option("--out", pn.out, "Model file (default $SEUFI_OUT_DIR/pruned.seufi)");
  n->add_option("--sweep-out", pn.sweep_out, "Write sensitivity curves as CSV");
  n->add_option("--inputs", pn.inputs, "Input specs for the sweep");

  QuantizeOptions qn;
  auto* q = app.add_subcommand("quantize", "Fold batch-norm and quantize to int8");
  q->add_option("--model", qn.model, "Model file")->required();
  q->add_option("--calib", qn.calib, "Calibration input specs");
  q->add_option("--out", qn.out, "Model file (default $SEUFI_OUT_DIR/quantized.seufi)");

  CensusOptions cs;
  auto* s = app.add_subcommand("census", "Value-range and partial-exponent reports");
  s->add_option("--model", cs.model, "Model file")->required();
  s->add_option("--bit", cs.bits, "Exponent bits to report (23..29)")->check(CLI::Range(23, 29));
  s->add_option("--out-dir", cs.out_dir, "Also write CSV files here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (p->parsed()) return cmd_plan(pl);
    if (r->parsed()) return cmd_run(rn);
    if (d->parsed()) return cmd_predict(pr);
    if (c->parsed()) return cmd_compare(cm);
    if (n->parsed()) return cmd_prune(pn);
    if (q->parsed()) return cmd_quantize(qn);
    if (s->parsed()) return cmd_census(cs);
  } catch (const seufi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
