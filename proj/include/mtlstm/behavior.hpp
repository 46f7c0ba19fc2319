#pragma once

// Player-state records, semantic labels, numeric encoding, sliding windows,
// the line-delimited JSON trace format and the rule-based labeler.

#include "mtlstm/tensor.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtlstm {

enum class SemanticLabel : int {
  ST = 0,  // stationary
  NV = 1,  // navigate (corridor)
  SR = 2,  // search (room)
  OD = 3,  // open door
  TV = 4,  // transport victim
  PM = 5,  // place marker
  RM = 6,  // remove marker
  TU = 7,  // tool used
  RA = 8,  // role specific action
  IE = 9,  // item equipped
  AC = 10  // audio communication
};

inline constexpr std::array<std::string_view, 11> kLabelNames = {
    "ST", "NV", "SR", "OD", "TV", "PM", "RM", "TU", "RA", "IE", "AC"};

std::string_view label_name(SemanticLabel l);
SemanticLabel label_from_name(std::string_view name);
inline int label_index(SemanticLabel l) { return static_cast<int>(l); }
SemanticLabel label_from_index(int index);

enum class Location : int { Room, Corridor, TreatmentArea, Other };
enum class Item : int { None, Medkit, Hammer, Stretcher, Signal, Marker };
enum class Role : int { Medic, Engineer, Transporter };
enum class Tool : int { None, Medkit, Hammer, Stretcher, Signal };

inline constexpr std::array<std::string_view, 4> kLocationNames = {"room", "corridor",
                                                                   "treatment-area", "other"};
inline constexpr std::array<std::string_view, 6> kItemNames = {"none",      "medkit", "hammer",
                                                               "stretcher", "signal", "marker"};
inline constexpr std::array<std::string_view, 3> kRoleNames = {"medic", "engineer",
                                                               "transporter"};
inline constexpr std::array<std::string_view, 5> kToolNames = {"none", "medkit", "hammer",
                                                               "stretcher", "signal"};

std::string_view role_name(Role r);
Role role_from_name(std::string_view name);
/// The tool a role uses for its role-specific action.
Tool role_tool(Role r);

/// Proximity reported when no referent exists.
inline constexpr double kProximityCap = 100.0;
inline constexpr double kMissionSeconds = 900.0;

struct FeatureRecord {
  Location current_location = Location::Corridor;
  double current_velocity = 0.0;
  int critical_victims_triaged = 0;
  int critical_victims_saved = 0;
  double distance_traveled = 0.0;
  Item item_equipped = Item::None;
  double mission_time = 0.0;
  Role player_role = Role::Medic;
  double proximity_to_nearest_door = kProximityCap;
  double proximity_to_nearest_treatment_area = kProximityCap;
  double proximity_to_medic = kProximityCap;
  double proximity_to_engineer = kProximityCap;
  double proximity_to_transporter = kProximityCap;
  double proximity_to_nearest_regular = kProximityCap;
  double proximity_to_nearest_critical = kProximityCap;
  double proximity_to_nearest_marker = kProximityCap;
  int regular_victims_triaged = 0;
  int regular_victims_saved = 0;
  Tool tool_used = Tool::None;

  bool operator==(const FeatureRecord&) const = default;
};

/// Violations of the per-record invariants (empty when valid).
std::vector<std::string> record_violations(const FeatureRecord& r);

enum class FieldKind { Numeric, Categorical };

struct FieldInfo {
  std::string_view name;
  FieldKind kind;
  std::span<const std::string_view> vocabulary;  // categorical only
  bool monotone = false;                         // non-decreasing within a mission
};

/// The 19 record fields in declaration order.
std::span<const FieldInfo> record_fields();
double numeric_field(const FeatureRecord& r, std::size_t field);
void set_numeric_field(FeatureRecord& r, std::size_t field, double value);
int category_field(const FeatureRecord& r, std::size_t field);
void set_category_field(FeatureRecord& r, std::size_t field, int category);

struct FeatureSeries {
  std::string player_id;
  std::string mission_id;
  int team = 0;
  Role role = Role::Medic;
  std::int64_t period_ms = 100;
  std::int64_t start_ms = 0;
  std::vector<FeatureRecord> records;
  std::vector<SemanticLabel> labels;  // empty, or one per record
  std::vector<bool> audio_active;     // empty, or one per record

  std::size_t size() const { return records.size(); }
  std::int64_t timestamp(std::size_t i) const {
    return start_ms + static_cast<std::int64_t>(i) * period_ms;
  }
  bool operator==(const FeatureSeries&) const = default;
};

/// Keeps every `factor`-th record (and label); the period scales accordingly.
FeatureSeries downsample(const FeatureSeries& series, std::int64_t factor);

// ---------------------------------------------------------------------------
// Encoding

class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NumericStats {
  double mean = 0.0;
  double stddev = 1.0;
  bool normalized = false;  // false: zero variance, value passed through
  bool operator==(const NumericStats&) const = default;
};

/// Field layout of the flat encoded vector. Numeric fields take one slot and
/// are z-scored; categorical fields take a one-hot block over their vocabulary.
struct EncodingSpec {
  struct Slot {
    std::size_t field = 0;  // index into record_fields()
    Index offset = 0;
    Index width = 1;
    NumericStats stats;      // numeric only
    std::vector<int> vocab;  // categorical only: category indices in block order
    bool operator==(const Slot&) const = default;
  };
  std::vector<Slot> slots;
  Index dimension = 0;

  /// Declared field order and full vocabularies, identity statistics.
  static EncodingSpec declared();

  const Slot& slot_for(std::string_view field_name) const;
  bool operator==(const EncodingSpec&) const = default;
};

/// Statistics from the given record segments only.
EncodingSpec fit_encoding(std::span<const std::span<const FeatureRecord>> segments);
EncodingSpec fit_encoding(std::span<const FeatureSeries> training);

Vector encode(const FeatureRecord& record, const EncodingSpec& spec);
/// Rows are time steps.
Matrix encode_series(std::span<const FeatureRecord> records, const EncodingSpec& spec);
/// Inverse of encode: numerics un-normalized (counts rounded), categoricals by argmax.
FeatureRecord decode(const Vector& encoded, const EncodingSpec& spec);

// ---------------------------------------------------------------------------
// Windows

struct Window {
  Index start = 0;
  Index input_len = 0;
  Index horizon = 0;
  Index future_start() const { return start + input_len; }
};

/// Windows over a length-n series: starts 0, step, 2*step, ... while
/// input_len + horizon records remain.
std::vector<Window> windows(Index n, Index input_len, Index step, Index horizon);
std::vector<Window> windows(const FeatureSeries& series, Index input_len, Index step,
                            Index horizon);
/// floor((n - input_len - horizon) / step) + 1, or 0 when too short.
Index window_count(Index n, Index input_len, Index step, Index horizon);

// ---------------------------------------------------------------------------
// Labeling

inline constexpr double kStationarySpeed = 0.1;

/// Rule-based label; total and deterministic. First matching rule wins.
SemanticLabel heuristic_label(const FeatureRecord& record, const FeatureRecord* prev,
                              bool audio_active = false);
std::vector<SemanticLabel> heuristic_labels(const FeatureSeries& series);

// ---------------------------------------------------------------------------
// Trace files

class TraceError : public std::runtime_error {
 public:
  enum class Kind { Empty, Parse, Ordering, Format };
  TraceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

void write_trace(std::ostream& out, const FeatureSeries& series);
FeatureSeries parse_trace(std::istream& in, std::int64_t period_ms = 100);

}  // namespace mtlstm
