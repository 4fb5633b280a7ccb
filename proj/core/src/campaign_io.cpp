#include "seufi/campaign_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <tuple>

#include "json.hpp"

#include "seufi/error.hpp"
#include "seufi/model_io.hpp"

namespace seufi {

namespace {

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Lines with trailing '\r' removed; a final empty line after the last newline is dropped.
std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

template <typename T>
T parse_int(std::string_view s, int line, std::string_view what, int base = 10) {
  T v{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v, base);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ParseError("bad " + std::string(what) + " '" + std::string(s) + "'", line);
  }
  return v;
}

double parse_real(std::string_view s, int line, std::string_view what) {
  const std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) {
    throw ParseError("bad " + std::string(what) + " '" + tmp + "'", line);
  }
  return v;
}

std::uint32_t parse_hex(std::string_view s, int line, std::string_view what) {
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
    throw ParseError("expected 0x-prefixed " + std::string(what) + ", got '" + std::string(s) + "'", line);
  }
  return parse_int<std::uint32_t>(s.substr(2), line, what, 16);
}

template <typename F>
auto wrap(int line, F&& f) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), line);
  }
}

std::vector<std::string_view> csv_body(std::string_view text, std::string_view header, std::size_t columns) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("missing header", 1);
  if (lines[0] != header) throw ParseError("unexpected header; expected '" + std::string(header) + "'", 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (split(lines[i], ',').size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " fields", static_cast<int>(i + 1));
    }
  }
  return {lines.begin() + 1, lines.end()};
}

}  // namespace

std::string format_records_csv(std::span<const InjectionRecord> records) {
  std::string out(kRecordsHeader);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.location.layer_id) + ',' + std::string(to_string(r.location.kind)) + ',' +
           std::to_string(r.location.index) + ',' + std::to_string(r.location.bit) + ',' +
           std::string(to_string(r.direction)) + ',' + std::string(to_string(r.field)) + ',' + fmt_hex(r.pre_bits) +
           ',' + fmt_hex(r.post_bits) + ',' + std::string(to_string(r.post_kind)) + ',' +
           std::to_string(r.input_id) + ',' + fmt_real(r.error_rate) + '\n';
  }
  return out;
}

std::vector<InjectionRecord> parse_records_csv(std::string_view text) {
  const auto body = csv_body(text, kRecordsHeader, 11);
  std::vector<InjectionRecord> out;
  out.reserve(body.size());
  int line = 1;
  for (auto row : body) {
    ++line;
    const auto f = split(row, ',');
    InjectionRecord r;
    r.location.layer_id = parse_int<int>(f[0], line, "layer_id");
    r.location.kind = wrap(line, [&] { return parse_param_kind(f[1]); });
    r.location.index = parse_int<std::size_t>(f[2], line, "index");
    r.location.bit = parse_int<int>(f[3], line, "bit");
    r.direction = wrap(line, [&] { return parse_flip_direction(f[4]); });
    r.field = wrap(line, [&] { return parse_bit_field(f[5]); });
    r.pre_bits = parse_hex(f[6], line, "pre_bits");
    r.post_bits = parse_hex(f[7], line, "post_bits");
    r.post_kind = wrap(line, [&] { return parse_value_kind(f[8]); });
    r.input_id = parse_int<std::size_t>(f[9], line, "input_id");
    r.error_rate = parse_real(f[10], line, "error_rate");
    if (r.location.bit < 0 || r.location.bit > 31) throw ParseError("bit out of range", line);
    if ((r.pre_bits ^ r.post_bits) != (std::uint32_t{1} << r.location.bit)) {
      throw ParseError("pre_bits and post_bits must differ in exactly the recorded bit", line);
    }
    if (!(r.error_rate >= 0.0 && r.error_rate <= 1.0)) throw ParseError("error_rate outside [0, 1]", line);
    out.push_back(r);
  }
  return out;
}

std::vector<MatrixRow> matrix_rows(const ErrorMatrix& matrix) {
  std::vector<MatrixRow> rows;
  for (const auto& [key, c] : matrix.cells) {
    rows.push_back({key.first, key.second, c.count, c.mean, c.std, c.mean_nonzero, c.max});
  }
  return rows;
}

std::string format_matrix_csv(std::span<const MatrixRow> rows) {
  std::string out(kMatrixHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.layer_id) + ',' + std::to_string(r.bit) + ',' + std::to_string(r.count) + ',' +
           fmt_real(r.mean) + ',' + fmt_real(r.std) + ',' + fmt_real(r.mean_nonzero) + ',' + fmt_real(r.max) + '\n';
  }
  return out;
}

std::vector<MatrixRow> parse_matrix_csv(std::string_view text) {
  const auto body = csv_body(text, kMatrixHeader, 7);
  std::vector<MatrixRow> out;
  int line = 1;
  for (auto row : body) {
    ++line;
    const auto f = split(row, ',');
    MatrixRow r;
    r.layer_id = parse_int<int>(f[0], line, "layer_id");
    r.bit = parse_int<int>(f[1], line, "bit");
    r.count = parse_int<std::size_t>(f[2], line, "count");
    r.mean = parse_real(f[3], line, "mean");
    r.std = parse_real(f[4], line, "std");
    r.mean_nonzero = parse_real(f[5], line, "mean_nonzero");
    r.max = parse_real(f[6], line, "max");
    for (double v : {r.mean, r.mean_nonzero, r.max}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError("rate outside [0, 1]", line);
    }
    out.push_back(r);
  }
  return out;
}

InputSpec parse_input_spec(std::string_view text) {
  text = trim(text);
  InputSpec s;
  if (text.starts_with("file:")) {
    s.kind = InputSpec::Kind::File;
    s.path = std::string(text.substr(5));
    if (s.path.empty()) throw ValidationError("file input needs a path");
    return s;
  }
  if (!text.starts_with("synthetic:")) {
    throw ValidationError("input spec must be synthetic:SEED:HxW or file:PATH, got '" + std::string(text) + "'");
  }
  const auto parts = split(text.substr(10), ':');
  if (parts.size() != 2) throw ValidationError("synthetic input spec is synthetic:SEED:HxW");
  const auto dims = split(parts[1], 'x');
  if (dims.size() != 2) throw ValidationError("synthetic input size must be HxW");
  try {
    s.seed = parse_int<std::uint64_t>(parts[0], 0, "seed");
    s.height = parse_int<std::size_t>(dims[0], 0, "height");
    s.width = parse_int<std::size_t>(dims[1], 0, "width");
  } catch (const ParseError& e) {
    throw ValidationError(e.what());
  }
  if (s.height == 0 || s.width == 0) throw ValidationError("synthetic input size must be positive");
  return s;
}

std::string to_string(const InputSpec& spec) {
  if (spec.kind == InputSpec::Kind::File) return "file:" + spec.path;
  return "synthetic:" + std::to_string(spec.seed) + ':' + std::to_string(spec.height) + 'x' +
         std::to_string(spec.width);
}

namespace {

std::set<int> parse_int_set(std::string_view value, int line) {
  std::set<int> out;
  for (auto item : split(value, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash == std::string_view::npos) {
      out.insert(parse_int<int>(item, line, "integer"));
      continue;
    }
    const int lo = parse_int<int>(trim(item.substr(0, dash)), line, "range start");
    const int hi = parse_int<int>(trim(item.substr(dash + 1)), line, "range end");
    if (lo > hi) throw ParseError("empty range '" + std::string(item) + "'", line);
    for (int v = lo; v <= hi; ++v) out.insert(v);
  }
  return out;
}

std::string join_ints(const std::set<int>& v) {
  std::string out;
  for (int x : v) {
    if (!out.empty()) out += ", ";
    out += std::to_string(x);
  }
  return out;
}

}  // namespace

CampaignConfigFile parse_campaign_config(std::string_view text) {
  CampaignConfigFile file;
  auto& c = file.config;
  std::set<std::string, std::less<>> seen;
  int line = 0;
  for (auto raw : lines_of(text)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    raw = trim(raw);
    if (raw.empty()) continue;
    const auto eq = raw.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line);
    const auto key = trim(raw.substr(0, eq));
    const auto value = trim(raw.substr(eq + 1));
    if (!seen.emplace(key).second) throw ParseError("duplicate key '" + std::string(key) + "'", line);
    wrap(line, [&] {
      if (key == "e") {
        c.e = parse_real(value, line, "e");
      } else if (key == "t") {
        c.t = parse_real(value, line, "t");
      } else if (key == "p") {
        c.p = parse_real(value, line, "p");
      } else if (key == "cap") {
        c.cap = parse_int<std::uint64_t>(value, line, "cap");
      } else if (key == "included_kinds") {
        c.included_kinds.clear();
        for (auto k : split(value, ',')) {
          if (!trim(k).empty()) c.included_kinds.insert(parse_param_kind(trim(k)));
        }
      } else if (key == "sampling") {
        c.sampling = parse_sampling(value);
      } else if (key == "seed") {
        c.seed = parse_int<std::uint64_t>(value, line, "seed");
      } else if (key == "inputs") {
        for (auto s : split(value, ',')) {
          if (!trim(s).empty()) file.inputs.push_back(parse_input_spec(s));
        }
      } else if (key == "bits") {
        c.bits = parse_int_set(value, line);
      } else if (key == "layers") {
        c.layers = parse_int_set(value, line);
      } else if (key == "input_mode") {
        c.input_mode = parse_input_mode(value);
      } else {
        throw ParseError("unknown key '" + std::string(key) + "'", line);
      }
      return 0;
    });
  }
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), 0);
  }
  return file;
}

std::string format_campaign_config(const CampaignConfigFile& file) {
  const auto& c = file.config;
  std::string kinds, inputs;
  for (auto k : c.included_kinds) kinds += (kinds.empty() ? "" : ", ") + std::string(to_string(k));
  for (const auto& s : file.inputs) inputs += (inputs.empty() ? "" : ", ") + to_string(s);
  std::string out;
  out += "e = " + fmt_real(c.e) + '\n';
  out += "t = " + fmt_real(c.t) + '\n';
  out += "p = " + fmt_real(c.p) + '\n';
  out += "cap = " + std::to_string(c.cap) + '\n';
  out += "included_kinds = " + kinds + '\n';
  out += "sampling = " + std::string(to_string(c.sampling)) + '\n';
  out += "seed = " + std::to_string(c.seed) + '\n';
  out += "inputs = " + inputs + '\n';
  out += "bits = " + join_ints(c.bits) + '\n';
  out += "layers = " + join_ints(c.layers) + '\n';
  out += "input_mode = " + std::string(to_string(c.input_mode)) + '\n';
  return out;
}

std::vector<Tensor> resolve_inputs(std::span<const InputSpec> specs, const ModelGraph& model,
                                   const std::filesystem::path& base_dir) {
  std::vector<Tensor> out;
  for (const auto& s : specs) {
    if (s.kind == InputSpec::Kind::Synthetic) {
      out.push_back(synthetic_input(model.n_input_channels, s.height, s.width, s.seed));
      continue;
    }
    std::filesystem::path p(s.path);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    auto t = load_tensor(p);
    if (t.rank() != 3 || t.dim(0) != model.n_input_channels || t.dtype() != DType::F32) {
      throw ValidationError("input " + p.string() + " must be an f32 tensor [" +
                            std::to_string(model.n_input_channels) + ", H, W]");
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::string prediction_to_json(const PredictionReport& report) {
  nlohmann::ordered_json j;
  j["frequencies"] = report.frequencies;
  j["signs"] = report.signs;
  j["contributions"] = report.contributions;
  j["p_fi"] = report.p_fi;
  j["profile"] = {{"k_sat", report.profile.k_sat},
                  {"k_min", report.profile.k_min},
                  {"bit_lo", report.profile.bit_lo},
                  {"bit_hi", report.profile.bit_hi},
                  {"bit_width", report.profile.bit_width},
                  {"weighting", std::string(to_string(report.profile.weighting))}};
  j["predictions"] = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json p;
    p["name"] = e.name;
    p["layer_id"] = e.layer_id;
    p["bits"] = e.bits;
    p["weights"] = e.weights;
    p["expected_error"] = e.expected_error;
    j["predictions"].push_back(std::move(p));
  }
  return j.dump(2) + '\n';
}

PredictionReport prediction_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PredictionReport r;
    r.frequencies = j.value("frequencies", std::vector<double>{});
    r.signs = j.value("signs", std::vector<std::string>{});
    r.contributions = j.value("contributions", std::vector<double>{});
    r.p_fi = j.value("p_fi", std::vector<double>{});
    if (j.contains("profile")) {
      const auto& p = j.at("profile");
      r.profile.k_sat = p.at("k_sat").get<int>();
      r.profile.k_min = p.at("k_min").get<int>();
      r.profile.bit_lo = p.at("bit_lo").get<int>();
      r.profile.bit_hi = p.at("bit_hi").get<int>();
      r.profile.bit_width = p.at("bit_width").get<int>();
      r.profile.weighting = parse_weighting(p.at("weighting").get<std::string>());
    }
    for (const auto& p : j.at("predictions")) {
      PredictionEntry e;
      e.name = p.at("name").get<std::string>();
      e.layer_id = p.at("layer_id").get<int>();
      e.bits = p.at("bits").get<std::vector<int>>();
      e.weights = p.value("weights", std::vector<double>(e.bits.size(), 1.0));
      e.expected_error = p.at("expected_error").get<double>();
      if (e.weights.size() != e.bits.size()) throw ValidationError("prediction '" + e.name + "': weights and bits differ in length");
      r.entries.push_back(std::move(e));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prediction JSON: ") + e.what(), 0);
  }
}

bool PredictionReport::operator==(const PredictionReport& o) const {
  const auto key = [](const SaturationProfile& p) {
    return std::tuple(p.k_sat, p.k_min, p.bit_lo, p.bit_hi, p.bit_width, p.weighting);
  };
  return frequencies == o.frequencies && signs == o.signs && contributions == o.contributions && p_fi == o.p_fi &&
         key(profile) == key(o.profile) && entries == o.entries;
}

std::vector<Comparison> compare_prediction(const PredictionReport& report, std::span<const MatrixRow> rows,
                                           double margin) {
  std::map<std::pair<int, int>, const MatrixRow*> cells;
  for (const auto& r : rows) cells[{r.layer_id, r.bit}] = &r;
  std::vector<Comparison> out;
  for (const auto& e : report.entries) {
    double num = 0.0, den = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < e.bits.size(); ++k) {
      auto it = cells.find({e.layer_id, e.bits[k]});
      if (it == cells.end() || it->second->count == 0 || e.weights[k] == 0.0) continue;
      const double w = e.weights[k] * static_cast<double>(it->second->count);
      num += w * it->second->mean;
      den += w;
      ++used;
    }
    if (used == 0) continue;
    Comparison c;
    c.name = e.name;
    c.layer_id = e.layer_id;
    c.predicted = e.expected_error;
    c.measured = 100.0 * num / den;
    c.deviation = std::abs(c.predicted - c.measured);
    c.cells = used;
    c.flagged = c.deviation > margin;
    out.push_back(std::move(c));
  }
  if (out.empty()) throw ValidationError("prediction and matrix share no (layer, bit) cells");
  return out;
}

}  // namespace seufi
