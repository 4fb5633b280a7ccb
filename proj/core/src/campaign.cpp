#include "seufi/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>
#include <unordered_set>

#include "seufi/error.hpp"
#include "seufi/model_io.hpp"
#include "seufi/random.hpp"

namespace seufi {

std::string_view to_string(Sampling s) noexcept {
  return s == Sampling::UniformLayer ? "uniform_layer" : "stratified_per_bit";
}

std::string_view to_string(InputMode m) noexcept { return m == InputMode::Single ? "single" : "all"; }

Sampling parse_sampling(std::string_view s) {
  if (s == "uniform_layer") return Sampling::UniformLayer;
  if (s == "stratified_per_bit") return Sampling::StratifiedPerBit;
  throw ValidationError("unknown sampling '" + std::string(s) + "'");
}

InputMode parse_input_mode(std::string_view s) {
  if (s == "single") return InputMode::Single;
  if (s == "all") return InputMode::All;
  throw ValidationError("unknown input mode '" + std::string(s) + "'");
}

void CampaignConfig::validate() const {
  if (!(e > 0.0 && e < 1.0)) throw ValidationError("error margin e must lie in (0, 1)");
  if (!(t > 0.0)) throw ValidationError("confidence coefficient t must be positive");
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("failure probability p must lie in (0, 1)");
  if (cap < 1) throw ValidationError("cap must be >= 1");
  for (int b : bits) {
    if (b < 0 || b > 31) throw ValidationError("bit filter entries must lie in 0..31");
  }
}

FaultSpaceFilter CampaignConfig::filter() const { return FaultSpaceFilter{included_kinds, bits, layers}; }

std::uint64_t sample_size(std::uint64_t n_faults, double e, double t, double p, std::uint64_t cap) {
  if (n_faults < 1) throw ValidationError("fault space size must be >= 1");
  CampaignConfig c;
  c.e = e;
  c.t = t;
  c.p = p;
  c.cap = cap;
  c.validate();
  const double n = static_cast<double>(n_faults);
  const double exact = n / (1.0 + e * e * (n - 1.0) / (t * t * p * (1.0 - p)));
  // Guard against exact integers landing a few ulps above themselves.
  const auto rounded = static_cast<std::uint64_t>(std::ceil(exact - 1e-9 * exact));
  return std::min({rounded, cap, n_faults});
}

std::uint64_t CampaignPlan::total_injections() const noexcept {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.injections;
  return n;
}

std::uint64_t CampaignPlan::total_fault_space() const noexcept {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.fault_space;
  return n;
}

CampaignPlan plan(const ModelGraph& model, const CampaignConfig& config) {
  config.validate();
  if (config.included_kinds.empty()) throw ValidationError("campaign includes no parameter kinds");
  const auto space = enumerate_fault_space(model, config.filter());
  if (space.layers.empty()) throw ValidationError("fault space is empty for the configured filter");
  CampaignPlan out;
  for (const auto& layer : space.layers) {
    out.layers.push_back(
        {layer.layer_id, layer.total, sample_size(layer.total, config.e, config.t, config.p, config.cap)});
  }
  return out;
}

namespace {

// Floyd's algorithm: k distinct values from [0, population), ascending.
std::vector<std::uint64_t> sample_distinct(std::uint64_t population, std::uint64_t k, Rng& rng) {
  if (k > population) throw ValidationError("cannot sample more locations than exist");
  std::vector<std::uint64_t> out;
  if (k == population) {
    out.resize(population);
    for (std::uint64_t i = 0; i < population; ++i) out[i] = i;
    return out;
  }
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k * 2));
  for (std::uint64_t j = population - k; j < population; ++j) {
    const auto t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<FaultLocation> stratified(const LayerFaultSpace& space, std::uint64_t n, Rng& rng) {
  // Strata are bit positions; a stratum's population is every element whose
  // tensor includes that bit.
  std::map<int, std::uint64_t> population;
  for (const auto& e : space.entries) {
    for (int b : e.bits) population[b] += e.elements;
  }
  std::vector<int> bits_desc;
  for (auto it = population.rbegin(); it != population.rend(); ++it) bits_desc.push_back(it->first);

  std::map<int, std::uint64_t> quota;
  std::uint64_t remaining = n;
  // Round-robin fill from the MSB down until the budget is spent; strata that
  // are exhausted drop out.
  while (remaining > 0) {
    std::uint64_t open = 0;
    for (int b : bits_desc) open += quota[b] < population[b];
    if (open == 0) break;
    const std::uint64_t share = std::max<std::uint64_t>(1, remaining / open);
    for (int b : bits_desc) {
      if (remaining == 0) break;
      const auto room = population[b] - quota[b];
      const auto take = std::min({share, room, remaining});
      quota[b] += take;
      remaining -= take;
    }
  }

  std::vector<FaultLocation> out;
  for (int b : bits_desc) {
    if (quota[b] == 0) continue;
    for (auto pos : sample_distinct(population[b], quota[b], rng)) {
      for (const auto& e : space.entries) {
        if (!std::binary_search(e.bits.begin(), e.bits.end(), b)) continue;
        if (pos < e.elements) {
          out.push_back({space.layer_id, e.kind, static_cast<std::size_t>(pos), b});
          break;
        }
        pos -= e.elements;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<FaultLocation> sample_locations(const LayerFaultSpace& space, std::uint64_t n, Sampling sampling,
                                            std::uint64_t seed) {
  if (n > space.total) throw ValidationError("cannot sample more locations than the layer holds");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(space.layer_id)));
  if (sampling == Sampling::StratifiedPerBit) return stratified(space, n, rng);
  std::vector<FaultLocation> out;
  out.reserve(static_cast<std::size_t>(n));
  for (auto ordinal : sample_distinct(space.total, n, rng)) out.push_back(space.at(ordinal));
  std::sort(out.begin(), out.end());
  return out;
}

ClassMap golden_run(const ModelGraph& model, const Tensor& input) { return argmax_classes(forward(model, input)); }

const ClassMap& GoldenCache::get(const ModelGraph& model, const Tensor& input, std::size_t input_id) {
  auto key = std::make_pair(model_digest(model), input_id);
  {
    std::lock_guard lock(mutex_);
    auto it = maps_.find(key);
    if (it != maps_.end()) return it->second;
  }
  auto map = golden_run(model, input);
  std::lock_guard lock(mutex_);
  return maps_.emplace(std::move(key), std::move(map)).first->second;
}

std::size_t GoldenCache::size() const {
  std::lock_guard lock(mutex_);
  return maps_.size();
}

double pixel_mismatch_rate(const ClassMap& golden, const ClassMap& faulty) {
  if (golden.height != faulty.height || golden.width != faulty.width || golden.size() != faulty.size()) {
    throw ShapeError("class maps differ in shape");
  }
  if (golden.size() == 0) throw ShapeError("class maps are empty");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < golden.size(); ++i) diff += golden.labels[i] != faulty.labels[i];
  return static_cast<double>(diff) / static_cast<double>(golden.size());
}

const CellStats* ErrorMatrix::cell(int layer_id, int bit) const {
  auto it = cells.find({layer_id, bit});
  return it == cells.end() ? nullptr : &it->second;
}

std::vector<int> ErrorMatrix::layer_ids() const {
  std::vector<int> ids;
  for (const auto& [key, c] : cells) {
    if (ids.empty() || ids.back() != key.first) ids.push_back(key.first);
  }
  return ids;
}

CellStats summarize(std::span<const double> rates) {
  CellStats s;
  s.count = rates.size();
  if (rates.empty()) return s;
  double sum = 0.0, sum_nz = 0.0;
  for (double r : rates) {
    sum += r;
    if (r > 0.0) {
      ++s.count_nonzero;
      sum_nz += r;
    }
    s.max = std::max(s.max, r);
  }
  s.mean = sum / static_cast<double>(s.count);
  double ss = 0.0;
  for (double r : rates) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.count));
  s.mean_nonzero = s.count_nonzero ? sum_nz / static_cast<double>(s.count_nonzero) : 0.0;
  return s;
}

ErrorMatrix aggregate(std::span<const InjectionRecord> records) {
  if (records.empty()) throw ValidationError("cannot aggregate an empty record set");
  std::map<std::pair<int, int>, std::vector<double>> by_cell;
  std::vector<double> all;
  all.reserve(records.size());
  for (const auto& r : records) {
    if (!(r.error_rate >= 0.0 && r.error_rate <= 1.0)) throw ValidationError("error rate outside [0, 1]");
    by_cell[{r.location.layer_id, r.location.bit}].push_back(r.error_rate);
    all.push_back(r.error_rate);
  }
  ErrorMatrix m;
  for (const auto& [key, rates] : by_cell) m.cells.emplace(key, summarize(rates));
  m.global = summarize(all);
  return m;
}

namespace {

struct Task {
  FaultLocation location;
  std::vector<std::size_t> input_ids;
  std::size_t first_record = 0;
};

}  // namespace

CampaignResult run_campaign(const ModelGraph& model, const CampaignConfig& config, unsigned jobs) {
  validate(model);
  if (config.inputs.empty()) throw ValidationError("campaign needs at least one input");
  CampaignResult result;
  result.plan = plan(model, config);
  const auto space = enumerate_fault_space(model, config.filter());

  std::vector<Activations> golden_acts;
  std::vector<ClassMap> golden_maps;
  for (const auto& input : config.inputs) {
    golden_acts.push_back(forward_all(model, input));
    golden_maps.push_back(argmax_classes(golden_acts.back().back()));
  }

  std::vector<Task> tasks;
  std::size_t n_records = 0;
  std::size_t ordinal = 0;
  for (const auto& lp : result.plan.layers) {
    const auto* layer = space.find(lp.layer_id);
    for (const auto& loc : sample_locations(*layer, lp.injections, config.sampling, config.seed)) {
      Task task{loc, {}, n_records};
      if (config.input_mode == InputMode::All) {
        for (std::size_t i = 0; i < config.inputs.size(); ++i) task.input_ids.push_back(i);
      } else {
        task.input_ids.push_back(ordinal % config.inputs.size());
      }
      n_records += task.input_ids.size();
      ++ordinal;
      tasks.push_back(std::move(task));
    }
  }

  result.records.resize(n_records);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    try {
      FaultableModel view(model);
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= tasks.size()) break;
        const auto& task = tasks[i];
        const auto handle = view.apply(task.location);
        for (std::size_t k = 0; k < task.input_ids.size(); ++k) {
          const auto id = task.input_ids[k];
          const auto logits = forward_from(view.model(), golden_acts[id], task.location.layer_id);
          const auto& flip = handle.flip();
          result.records[task.first_record + k] =
              InjectionRecord{task.location, flip.direction, flip.field, flip.pre_bits, flip.post_bits,
                              flip.post_kind, id, pixel_mismatch_rate(golden_maps[id], argmax_classes(logits))};
        }
        view.revert(handle);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(tasks.size());
    }
  };

  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(tasks.size(), 1)));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  result.matrix = aggregate(result.records);
  return result;
}

}  // namespace seufi
