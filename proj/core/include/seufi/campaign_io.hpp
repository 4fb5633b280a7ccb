#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seufi/campaign.hpp"
#include "seufi/error_model.hpp"

// Text formats around a campaign: records and matrix CSV, the key = value
// campaign config, and prediction JSON. CSV columns are fixed; bit patterns are
// hex and reals use 17 significant digits, so parse(format(x)) == x exactly.

namespace seufi {

inline constexpr std::string_view kRecordsHeader =
    "layer_id,kind,index,bit,direction,field,pre_bits,post_bits,post_kind,input_id,error_rate";
inline constexpr std::string_view kMatrixHeader = "layer_id,bit,count,mean,std,mean_nonzero,max";

std::string format_records_csv(std::span<const InjectionRecord> records);
/// Throws ParseError with the offending line number.
std::vector<InjectionRecord> parse_records_csv(std::string_view text);

struct MatrixRow {
  int layer_id = 0;
  int bit = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  double mean_nonzero = 0.0;
  double max = 0.0;

  bool operator==(const MatrixRow&) const = default;
};

std::vector<MatrixRow> matrix_rows(const ErrorMatrix& matrix);
std::string format_matrix_csv(std::span<const MatrixRow> rows);
std::vector<MatrixRow> parse_matrix_csv(std::string_view text);

/// "synthetic:SEED:HxW" or "file:PATH" (a tensor file, relative to the config).
struct InputSpec {
  enum class Kind : std::uint8_t { Synthetic, File };
  Kind kind = Kind::Synthetic;
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::string path;

  bool operator==(const InputSpec&) const = default;
};

InputSpec parse_input_spec(std::string_view text);
std::string to_string(const InputSpec& spec);

/// CampaignConfig as read from disk; inputs stay symbolic until a model is known.
struct CampaignConfigFile {
  CampaignConfig config;
  std::vector<InputSpec> inputs;
};

/// Lines of `key = value`; '#' starts a comment. Lists are comma separated and
/// integer lists accept ranges such as 23-30. Unknown or repeated keys are errors.
CampaignConfigFile parse_campaign_config(std::string_view text);
std::string format_campaign_config(const CampaignConfigFile& file);

/// Materializes the input tensors for `model`. File paths resolve against `base_dir`.
std::vector<Tensor> resolve_inputs(std::span<const InputSpec> specs, const ModelGraph& model,
                                   const std::filesystem::path& base_dir = {});

/// One analytical estimate to hold against measured matrix cells.
struct PredictionEntry {
  std::string name;
  int layer_id = 0;
  /// Bits the estimate covers, with the weight each bit's measured mean gets.
  std::vector<int> bits;
  std::vector<double> weights;
  /// Percent.
  double expected_error = 0.0;

  bool operator==(const PredictionEntry&) const = default;
};

struct PredictionReport {
  std::vector<double> frequencies;
  /// "+" or "-" per class.
  std::vector<std::string> signs;
  /// Percent, one per class.
  std::vector<double> contributions;
  /// Empty means uniform.
  std::vector<double> p_fi;
  SaturationProfile profile;
  std::vector<PredictionEntry> entries;

  bool operator==(const PredictionReport&) const;
};

std::string prediction_to_json(const PredictionReport& report);
PredictionReport prediction_from_json(std::string_view text);

struct Comparison {
  std::string name;
  int layer_id = 0;
  double predicted = 0.0;
  double measured = 0.0;
  double deviation = 0.0;
  std::size_t cells = 0;
  bool flagged = false;
};

/// Count-weighted measured mean (percent) over the cells each entry covers, with
/// deviations beyond `margin` points flagged. Entries without any matching cell
/// are skipped; throws ValidationError when nothing overlaps.
std::vector<Comparison> compare_prediction(const PredictionReport& report, std::span<const MatrixRow> rows,
                                           double margin);

}  // namespace seufi
