#pragma once

// Synthetic search-and-rescue missions. Three agents (medic, engineer,
// transporter) act on an abstract corridor/room map under a three-level
// policy: a strategy layer that re-plans roughly every minute, a task layer
// (navigate, search, role action, transport, wait) lasting seconds, and a
// kinematic layer that integrates motion every 100 ms. The task layer emits
// the ground-truth semantic label of every record.

#include "mtlstm/behavior.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtlstm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

enum class NodeKind { Corridor, Door, Room, Treatment };

struct MapNode {
  Point pos;
  NodeKind kind = NodeKind::Corridor;
  int room = -1;  // room index for Door/Room nodes
};

struct MapEdge {
  int a = 0;
  int b = 0;
  double length = 0.0;  // blocks
};

struct Box {
  double x0, y0, x1, y1;
  bool contains(Point p) const { return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1; }
};

struct RoomInfo {
  int door_node = -1;
  int room_node = -1;
  int junction = 0;  // position along the corridor, used for zoning
  Box box{};
};

/// Rooms hang off a straight corridor; treatment areas sit at both ends.
struct MapGraph {
  std::vector<MapNode> nodes;
  std::vector<MapEdge> edges;
  std::vector<RoomInfo> rooms;
  std::vector<int> treatment_nodes;
  std::vector<Box> treatment_boxes;
  int junction_count = 0;

  /// `junctions` corridor junctions `spacing` blocks apart, one room on each side.
  static MapGraph corridor_layout(int junctions = 10, double spacing = 28.0);

  Location locate(Point p) const;
  /// True when every room node is reachable from the first treatment area.
  bool all_rooms_reachable() const;
};

/// Tunable agent-policy constants. Defaults give an NV-majority label mix.
struct PolicyParams {
  double walk_speed = 4.3;            // blocks/s before role multiplier
  double pace_spread = 0.2;           // per-epoch tempo factor in 1 +/- spread
  double search_speed = 2.4;          // blocks/s while searching a room
  double carry_speed_factor = 0.85;
  double replan_min_s = 45.0;         // strategy epoch bounds
  double replan_max_s = 75.0;
  double search_min_s = 1.5;
  double search_max_s = 8.0;
  double junction_pause_prob = 0.5;
  double pause_min_s = 2.0;
  double pause_max_s = 9.0;
  double regroup_wait_min_s = 6.0;
  double regroup_wait_max_s = 16.0;
  double triage_regular_s = 4.0;
  double triage_critical_s = 8.0;
  double rubble_s = 5.0;
  double signal_s = 2.0;
  double rubble_prob = 0.3;
  double audio_prob = 0.1;            // chance of a voice burst per task transition
  double audio_min_s = 1.0;
  double audio_max_s = 3.0;
  double marker_remove_prob = 0.1;
};

struct MissionConfig {
  MapGraph map = MapGraph::corridor_layout();
  int regular_victims = 20;
  int critical_victims = 15;
  double mission_seconds = kMissionSeconds;
  std::int64_t period_ms = 100;
  /// medic, engineer, transporter
  std::array<double, 3> speed_multiplier = {1.0, 0.9, 1.25};
  PolicyParams policy;
  std::uint64_t seed = 0;
  int team = 0;
  int mission = 0;

  std::vector<std::string> violations() const;
  void validate() const;
};

struct CriticalRescue {
  std::int64_t tick = 0;
  Point victim;
  std::array<Point, 3> agents;
};

struct MissionResult {
  std::array<FeatureSeries, 3> players;  // medic, engineer, transporter; labels filled
  std::vector<CriticalRescue> critical_rescues;
};

MissionResult simulate(const MissionConfig& config);

/// n_teams x 3 players x 2 missions; per-mission seeds derived from base_seed.
std::vector<FeatureSeries> generate_corpus(int n_teams, std::uint64_t base_seed,
                                           const PolicyParams& policy = {});

struct LabelHistogram {
  std::array<std::int64_t, 11> counts{};
  std::int64_t total = 0;
  double fraction(SemanticLabel l) const {
    return total ? static_cast<double>(counts[static_cast<std::size_t>(l)]) / static_cast<double>(total) : 0.0;
  }
};

LabelHistogram label_histogram(std::span<const FeatureSeries> corpus);

}  // namespace mtlstm
