#include "mtlstm/behavior.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace mtlstm {

// ---------------------------------------------------------------------------
// Names

std::string_view label_name(SemanticLabel l) { return kLabelNames[static_cast<std::size_t>(l)]; }

SemanticLabel label_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (kLabelNames[i] == name) return static_cast<SemanticLabel>(i);
  }
  throw std::invalid_argument("unknown semantic label '" + std::string(name) + "'");
}

SemanticLabel label_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kLabelNames.size())) {
    throw std::out_of_range("semantic label index " + std::to_string(index) + " outside 0..10");
  }
  return static_cast<SemanticLabel>(index);
}

std::string_view role_name(Role r) { return kRoleNames[static_cast<std::size_t>(r)]; }

Role role_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    if (kRoleNames[i] == name) return static_cast<Role>(i);
  }
  throw std::invalid_argument("unknown role '" + std::string(name) + "'");
}

Tool role_tool(Role r) {
  switch (r) {
    case Role::Medic: return Tool::Medkit;
    case Role::Engineer: return Tool::Hammer;
    case Role::Transporter: return Tool::Signal;
  }
  return Tool::None;
}

// ---------------------------------------------------------------------------
// Fields

namespace {

constexpr std::size_t kLocation = 0, kVelocity = 1, kCritTriaged = 2, kCritSaved = 3,
                      kDistance = 4, kItem = 5, kMissionTime = 6, kRole = 7, kProxDoor = 8,
                      kProxTreatment = 9, kProxMedic = 10, kProxEngineer = 11,
                      kProxTransporter = 12, kProxRegular = 13, kProxCritical = 14,
                      kProxMarker = 15, kRegTriaged = 16, kRegSaved = 17, kTool = 18;

const std::array<FieldInfo, 19> kFields = {{
    {"CurrentLocation", FieldKind::Categorical, kLocationNames, false},
    {"CurrentVelocity", FieldKind::Numeric, {}, false},
    {"CriticalVictimsTriaged", FieldKind::Numeric, {}, true},
    {"CriticalVictimsSaved", FieldKind::Numeric, {}, true},
    {"DistanceTraveled", FieldKind::Numeric, {}, true},
    {"ItemEquipped", FieldKind::Categorical, kItemNames, false},
    {"MissionTime", FieldKind::Numeric, {}, true},
    {"PlayerRole", FieldKind::Categorical, kRoleNames, false},
    {"ProximityToNearestDoor", FieldKind::Numeric, {}, false},
    {"ProximityToNearestTreatmentArea", FieldKind::Numeric, {}, false},
    {"ProximityToMedic", FieldKind::Numeric, {}, false},
    {"ProximityToEngineer", FieldKind::Numeric, {}, false},
    {"ProximityToTransporter", FieldKind::Numeric, {}, false},
    {"ProximityToNearestRegular", FieldKind::Numeric, {}, false},
    {"ProximityToNearestCritical", FieldKind::Numeric, {}, false},
    {"ProximityToNearestMarker", FieldKind::Numeric, {}, false},
    {"RegularVictimsTriaged", FieldKind::Numeric, {}, true},
    {"RegularVictimsSaved", FieldKind::Numeric, {}, true},
    {"ToolUsed", FieldKind::Categorical, kToolNames, false},
}};

bool is_count_field(std::size_t f) {
  return f == kCritTriaged || f == kCritSaved || f == kRegTriaged || f == kRegSaved;
}

}  // namespace

std::span<const FieldInfo> record_fields() { return kFields; }

double numeric_field(const FeatureRecord& r, std::size_t field) {
  switch (field) {
    case kVelocity: return r.current_velocity;
    case kCritTriaged: return r.critical_victims_triaged;
    case kCritSaved: return r.critical_victims_saved;
    case kDistance: return r.distance_traveled;
    case kMissionTime: return r.mission_time;
    case kProxDoor: return r.proximity_to_nearest_door;
    case kProxTreatment: return r.proximity_to_nearest_treatment_area;
    case kProxMedic: return r.proximity_to_medic;
    case kProxEngineer: return r.proximity_to_engineer;
    case kProxTransporter: return r.proximity_to_transporter;
    case kProxRegular: return r.proximity_to_nearest_regular;
    case kProxCritical: return r.proximity_to_nearest_critical;
    case kProxMarker: return r.proximity_to_nearest_marker;
    case kRegTriaged: return r.regular_victims_triaged;
    case kRegSaved: return r.regular_victims_saved;
    default: throw std::invalid_argument("field " + std::to_string(field) + " is not numeric");
  }
}

void set_numeric_field(FeatureRecord& r, std::size_t field, double v) {
  auto count = [](double x) { return static_cast<int>(std::lround(x)); };
  switch (field) {
    case kVelocity: r.current_velocity = v; return;
    case kCritTriaged: r.critical_victims_triaged = count(v); return;
    case kCritSaved: r.critical_victims_saved = count(v); return;
    case kDistance: r.distance_traveled = v; return;
    case kMissionTime: r.mission_time = v; return;
    case kProxDoor: r.proximity_to_nearest_door = v; return;
    case kProxTreatment: r.proximity_to_nearest_treatment_area = v; return;
    case kProxMedic: r.proximity_to_medic = v; return;
    case kProxEngineer: r.proximity_to_engineer = v; return;
    case kProxTransporter: r.proximity_to_transporter = v; return;
    case kProxRegular: r.proximity_to_nearest_regular = v; return;
    case kProxCritical: r.proximity_to_nearest_critical = v; return;
    case kProxMarker: r.proximity_to_nearest_marker = v; return;
    case kRegTriaged: r.regular_victims_triaged = count(v); return;
    case kRegSaved: r.regular_victims_saved = count(v); return;
    default: throw std::invalid_argument("field " + std::to_string(field) + " is not numeric");
  }
}

int category_field(const FeatureRecord& r, std::size_t field) {
  switch (field) {
    case kLocation: return static_cast<int>(r.current_location);
    case kItem: return static_cast<int>(r.item_equipped);
    case kRole: return static_cast<int>(r.player_role);
    case kTool: return static_cast<int>(r.tool_used);
    default: throw std::invalid_argument("field " + std::to_string(field) + " is not categorical");
  }
}

void set_category_field(FeatureRecord& r, std::size_t field, int c) {
  const auto size = static_cast<int>(kFields.at(field).vocabulary.size());
  if (c < 0 || c >= size) {
    throw EncodingError(std::string(kFields.at(field).name) + ": category index out of range");
  }
  switch (field) {
    case kLocation: r.current_location = static_cast<Location>(c); return;
    case kItem: r.item_equipped = static_cast<Item>(c); return;
    case kRole: r.player_role = static_cast<Role>(c); return;
    case kTool: r.tool_used = static_cast<Tool>(c); return;
    default: throw std::invalid_argument("field " + std::to_string(field) + " is not categorical");
  }
}

std::vector<std::string> record_violations(const FeatureRecord& r) {
  std::vector<std::string> out;
  if (!(r.mission_time >= 0.0 && r.mission_time <= kMissionSeconds)) {
    out.emplace_back("MissionTime outside [0, 900]");
  }
  if (!(r.current_velocity >= 0.0)) out.emplace_back("CurrentVelocity negative");
  if (!(r.distance_traveled >= 0.0)) out.emplace_back("DistanceTraveled negative");
  for (std::size_t f = kProxDoor; f <= kProxMarker; ++f) {
    if (!(numeric_field(r, f) >= 0.0)) out.emplace_back(std::string(kFields[f].name) + " negative");
  }
  for (std::size_t f = 0; f < kFields.size(); ++f) {
    if (is_count_field(f) && numeric_field(r, f) < 0) {
      out.emplace_back(std::string(kFields[f].name) + " negative");
    }
  }
  return out;
}

FeatureSeries downsample(const FeatureSeries& series, std::int64_t factor) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  FeatureSeries out = series;
  out.period_ms = series.period_ms * factor;
  out.records.clear();
  out.labels.clear();
  out.audio_active.clear();
  for (std::size_t i = 0; i < series.records.size(); i += static_cast<std::size_t>(factor)) {
    out.records.push_back(series.records[i]);
    if (!series.labels.empty()) out.labels.push_back(series.labels[i]);
    if (!series.audio_active.empty()) out.audio_active.push_back(series.audio_active[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

EncodingSpec EncodingSpec::declared() {
  EncodingSpec spec;
  Index offset = 0;
  for (std::size_t f = 0; f < kFields.size(); ++f) {
    Slot slot;
    slot.field = f;
    slot.offset = offset;
    if (kFields[f].kind == FieldKind::Categorical) {
      for (std::size_t c = 0; c < kFields[f].vocabulary.size(); ++c) {
        slot.vocab.push_back(static_cast<int>(c));
      }
      slot.width = static_cast<Index>(slot.vocab.size());
    }
    offset += slot.width;
    spec.slots.push_back(std::move(slot));
  }
  spec.dimension = offset;
  return spec;
}

const EncodingSpec::Slot& EncodingSpec::slot_for(std::string_view field_name) const {
  for (const auto& s : slots) {
    if (kFields[s.field].name == field_name) return s;
  }
  throw EncodingError("encoding has no field '" + std::string(field_name) + "'");
}

EncodingSpec fit_encoding(std::span<const std::span<const FeatureRecord>> segments) {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.size();
  if (n == 0) throw std::invalid_argument("fit_encoding: no training records");

  EncodingSpec spec = EncodingSpec::declared();
  for (auto& slot : spec.slots) {
    if (kFields[slot.field].kind != FieldKind::Numeric) continue;
    double sum = 0.0;
    for (const auto& seg : segments) {
      for (const auto& r : seg) sum += numeric_field(r, slot.field);
    }
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto& seg : segments) {
      for (const auto& r : seg) {
        const double d = numeric_field(r, slot.field) - mean;
        sq += d * d;
      }
    }
    const double stddev = std::sqrt(sq / static_cast<double>(n));
    if (stddev > 1e-12 * std::max(1.0, std::abs(mean))) {
      slot.stats = {mean, stddev, true};
    } else {
      slot.stats = {0.0, 1.0, false};
    }
  }
  return spec;
}

EncodingSpec fit_encoding(std::span<const FeatureSeries> training) {
  std::vector<std::span<const FeatureRecord>> segments;
  for (const auto& s : training) segments.emplace_back(s.records);
  if (segments.empty()) throw std::invalid_argument("fit_encoding: empty collection");
  return fit_encoding(segments);
}

namespace {

void encode_into(const FeatureRecord& record, const EncodingSpec& spec,
                 Eigen::Ref<Eigen::RowVectorXd> out) {
  for (const auto& slot : spec.slots) {
    const auto& info = kFields[slot.field];
    if (info.kind == FieldKind::Numeric) {
      const double v = numeric_field(record, slot.field);
      out(slot.offset) = slot.stats.normalized ? (v - slot.stats.mean) / slot.stats.stddev : v;
    } else {
      const int category = category_field(record, slot.field);
      const auto it = std::find(slot.vocab.begin(), slot.vocab.end(), category);
      if (it == slot.vocab.end()) {
        throw EncodingError(std::string(info.name) + ": category '" +
                            std::string(info.vocabulary[static_cast<std::size_t>(category)]) +
                            "' not in encoding vocabulary");
      }
      out.segment(slot.offset, slot.width).setZero();
      out(slot.offset + (it - slot.vocab.begin())) = 1.0;
    }
  }
}

}  // namespace

Vector encode(const FeatureRecord& record, const EncodingSpec& spec) {
  Eigen::RowVectorXd row(spec.dimension);
  encode_into(record, spec, row);
  return row.transpose();
}

Matrix encode_series(std::span<const FeatureRecord> records, const EncodingSpec& spec) {
  Matrix out(static_cast<Index>(records.size()), spec.dimension);
  Eigen::RowVectorXd row(spec.dimension);
  for (std::size_t i = 0; i < records.size(); ++i) {
    encode_into(records[i], spec, row);
    out.row(static_cast<Index>(i)) = row;
  }
  return out;
}

FeatureRecord decode(const Vector& encoded, const EncodingSpec& spec) {
  if (encoded.size() != spec.dimension) throw ShapeError("decode: dimension mismatch");
  FeatureRecord r;
  for (const auto& slot : spec.slots) {
    if (kFields[slot.field].kind == FieldKind::Numeric) {
      const double z = encoded(slot.offset);
      set_numeric_field(r, slot.field,
                        slot.stats.normalized ? z * slot.stats.stddev + slot.stats.mean : z);
    } else {
      Index best = 0;
      encoded.segment(slot.offset, slot.width).maxCoeff(&best);
      set_category_field(r, slot.field, slot.vocab[static_cast<std::size_t>(best)]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Windows

Index window_count(Index n, Index input_len, Index step, Index horizon) {
  if (input_len < 1 || step < 1 || horizon < 1) {
    throw std::invalid_argument("windows: input_len, step and horizon must be >= 1");
  }
  if (n < input_len + horizon) return 0;
  return (n - input_len - horizon) / step + 1;
}

std::vector<Window> windows(Index n, Index input_len, Index step, Index horizon) {
  const Index count = window_count(n, input_len, step, horizon);
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back({i * step, input_len, horizon});
  return out;
}

std::vector<Window> windows(const FeatureSeries& series, Index input_len, Index step,
                            Index horizon) {
  return windows(static_cast<Index>(series.size()), input_len, step, horizon);
}

// ---------------------------------------------------------------------------
// Labeling

SemanticLabel heuristic_label(const FeatureRecord& r, const FeatureRecord* prev,
                              bool audio_active) {
  if (prev) {
    const bool triage = r.regular_victims_triaged > prev->regular_victims_triaged ||
                        r.critical_victims_triaged > prev->critical_victims_triaged;
    const bool role_tool_released = prev->tool_used == role_tool(r.player_role) &&
                                    r.tool_used == Tool::None;
    if (triage || role_tool_released) return SemanticLabel::RA;
  }
  if (r.tool_used != Tool::None) return SemanticLabel::TU;
  if (prev) {
    if (r.item_equipped != prev->item_equipped) return SemanticLabel::IE;
    const double before = prev->proximity_to_nearest_marker;
    const double now = r.proximity_to_nearest_marker;
    if (now < 1.0 && before - now > 1.0) return SemanticLabel::PM;
    if (before < 1.0 && now - before > 1.0) return SemanticLabel::RM;
    if (r.proximity_to_nearest_door < 1.0 && r.current_location != prev->current_location) {
      return SemanticLabel::OD;
    }
  }
  if (audio_active) return SemanticLabel::AC;
  if (r.item_equipped == Item::Stretcher && r.current_velocity > kStationarySpeed) {
    return SemanticLabel::TV;
  }
  if (r.current_location == Location::Room) return SemanticLabel::SR;
  if (r.current_location == Location::Corridor && r.current_velocity > kStationarySpeed) {
    return SemanticLabel::NV;
  }
  return SemanticLabel::ST;
}

std::vector<SemanticLabel> heuristic_labels(const FeatureSeries& series) {
  std::vector<SemanticLabel> out;
  out.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const bool audio = !series.audio_active.empty() && series.audio_active[i];
    out.push_back(heuristic_label(series.records[i], i ? &series.records[i - 1] : nullptr, audio));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace format

void write_trace(std::ostream& out, const FeatureSeries& series) {
  if (!series.labels.empty() && series.labels.size() != series.size()) {
    throw std::invalid_argument("write_trace: labels not aligned with records");
  }
  if (!series.audio_active.empty() && series.audio_active.size() != series.size()) {
    throw std::invalid_argument("write_trace: audio flags not aligned with records");
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& r = series.records[i];
    nlohmann::ordered_json j;
    j["ts_ms"] = series.timestamp(i);
    for (std::size_t f = 0; f < kFields.size(); ++f) {
      const auto& info = kFields[f];
      const std::string key(info.name);
      if (info.kind == FieldKind::Categorical) {
        j[key] = std::string(info.vocabulary[static_cast<std::size_t>(category_field(r, f))]);
      } else if (is_count_field(f)) {
        j[key] = static_cast<int>(numeric_field(r, f));
      } else {
        j[key] = numeric_field(r, f);
      }
    }
    if (!series.labels.empty()) j["label"] = std::string(label_name(series.labels[i]));
    if (!series.audio_active.empty()) j["audio_active"] = static_cast<bool>(series.audio_active[i]);
    out << j.dump() << '\n';
  }
}

namespace {

[[noreturn]] void parse_fail(std::size_t line, const std::string& msg) {
  throw TraceError(TraceError::Kind::Parse, "line " + std::to_string(line) + ": " + msg);
}

const nlohmann::json& require(const nlohmann::json& j, std::string_view field, std::size_t line) {
  const auto it = j.find(std::string(field));
  if (it == j.end()) parse_fail(line, "missing required field '" + std::string(field) + "'");
  return *it;
}

}  // namespace

FeatureSeries parse_trace(std::istream& in, std::int64_t period_ms) {
  FeatureSeries series;
  series.period_ms = period_ms;
  std::vector<std::optional<SemanticLabel>> labels;
  std::vector<std::optional<bool>> audio;
  std::string text;
  std::size_t line_no = 0;
  std::int64_t prev_ts = 0;

  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      parse_fail(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) parse_fail(line_no, "record is not a JSON object");

    FeatureRecord r;
    std::int64_t ts = 0;
    try {
      const auto& ts_json = require(j, "ts_ms", line_no);
      if (!ts_json.is_number_integer()) parse_fail(line_no, "field 'ts_ms' must be an integer");
      ts = ts_json.get<std::int64_t>();
      for (std::size_t f = 0; f < kFields.size(); ++f) {
        const auto& info = kFields[f];
        const auto& v = require(j, info.name, line_no);
        if (info.kind == FieldKind::Categorical) {
          if (!v.is_string()) parse_fail(line_no, "field '" + std::string(info.name) + "' must be a string");
          const auto s = v.get<std::string>();
          const auto it = std::find(info.vocabulary.begin(), info.vocabulary.end(), s);
          if (it == info.vocabulary.end()) {
            parse_fail(line_no, "field '" + std::string(info.name) + "' has unknown category '" + s + "'");
          }
          set_category_field(r, f, static_cast<int>(it - info.vocabulary.begin()));
        } else {
          if (!v.is_number()) parse_fail(line_no, "field '" + std::string(info.name) + "' must be a number");
          if (is_count_field(f) && !v.is_number_integer()) {
            parse_fail(line_no, "field '" + std::string(info.name) + "' must be an integer count");
          }
          set_numeric_field(r, f, v.get<double>());
        }
      }
      if (const auto it = j.find("label"); it != j.end()) {
        if (!it->is_string()) parse_fail(line_no, "field 'label' must be a string");
        try {
          labels.emplace_back(label_from_name(it->get<std::string>()));
        } catch (const std::invalid_argument& e) {
          parse_fail(line_no, std::string("field 'label': ") + e.what());
        }
      } else {
        labels.emplace_back(std::nullopt);
      }
      if (const auto it = j.find("audio_active"); it != j.end()) {
        if (!it->is_boolean()) parse_fail(line_no, "field 'audio_active' must be a boolean");
        audio.emplace_back(it->get<bool>());
      } else {
        audio.emplace_back(std::nullopt);
      }
    } catch (const nlohmann::json::exception& e) {
      parse_fail(line_no, e.what());
    }

    if (const auto v = record_violations(r); !v.empty()) parse_fail(line_no, v.front());

    if (series.records.empty()) {
      series.start_ms = ts;
      series.role = r.player_role;
    } else {
      if (ts <= prev_ts) {
        throw TraceError(TraceError::Kind::Ordering,
                         "line " + std::to_string(line_no) + ": timestamp " + std::to_string(ts) +
                             " does not follow " + std::to_string(prev_ts));
      }
      if (ts - prev_ts != period_ms) {
        throw TraceError(TraceError::Kind::Format,
                         "line " + std::to_string(line_no) + ": sampling step " +
                             std::to_string(ts - prev_ts) + " ms, expected " +
                             std::to_string(period_ms) + " ms");
      }
      const auto& p = series.records.back();
      if (r.player_role != series.role) parse_fail(line_no, "PlayerRole changes within a series");
      if (r.critical_victims_triaged < p.critical_victims_triaged ||
          r.critical_victims_saved < p.critical_victims_saved ||
          r.regular_victims_triaged < p.regular_victims_triaged ||
          r.regular_victims_saved < p.regular_victims_saved ||
          r.distance_traveled < p.distance_traveled) {
        parse_fail(line_no, "cumulative count decreased");
      }
    }
    if (ts % period_ms != 0) {
      throw TraceError(TraceError::Kind::Format, "line " + std::to_string(line_no) +
                                                     ": ts_ms not a multiple of the sampling period");
    }
    prev_ts = ts;
    series.records.push_back(r);
  }

  if (series.records.empty()) throw TraceError(TraceError::Kind::Empty, "trace contains no records");

  const auto has = [](const auto& v) {
    return std::any_of(v.begin(), v.end(), [](const auto& o) { return o.has_value(); });
  };
  if (has(labels)) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!labels[i]) {
        throw TraceError(TraceError::Kind::Parse,
                         "record " + std::to_string(i + 1) + ": label missing while others have one");
      }
      series.labels.push_back(*labels[i]);
    }
  }
  if (has(audio)) {
    for (const auto& a : audio) series.audio_active.push_back(a.value_or(false));
  }
  return series;
}

}  // namespace mtlstm
