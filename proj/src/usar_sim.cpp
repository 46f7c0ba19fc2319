#include "mtlstm/usar_sim.hpp"

#include "mtlstm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <sstream>

namespace mtlstm {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// ---------------------------------------------------------------------------
// Map

MapGraph MapGraph::corridor_layout(int junctions, double spacing) {
  MapGraph m;
  m.junction_count = junctions;
  const double length = junctions * spacing;
  auto add = [&m](Point p, NodeKind k, int room = -1) {
    m.nodes.push_back({p, k, room});
    return static_cast<int>(m.nodes.size() - 1);
  };
  auto link = [&m](int a, int b) {
    m.edges.push_back({a, b, distance(m.nodes[static_cast<std::size_t>(a)].pos,
                                      m.nodes[static_cast<std::size_t>(b)].pos)});
  };

  const int ta_left = add({-6.0, 0.0}, NodeKind::Treatment);
  const int end_left = add({0.0, 0.0}, NodeKind::Corridor);
  link(ta_left, end_left);
  int prev = end_left;
  const double half_width = std::min(5.0, spacing / 2.0 - 1.0);
  for (int j = 0; j < junctions; ++j) {
    const double x = spacing / 2.0 + j * spacing;
    const int junction = add({x, 0.0}, NodeKind::Corridor);
    link(prev, junction);
    prev = junction;
    for (double side : {1.0, -1.0}) {
      const int room = static_cast<int>(m.rooms.size());
      const int door = add({x, 2.0 * side}, NodeKind::Door, room);
      const int center = add({x, 7.0 * side}, NodeKind::Room, room);
      link(junction, door);
      link(door, center);
      const Box box = side > 0 ? Box{x - half_width, 2.0, x + half_width, 12.0}
                               : Box{x - half_width, -12.0, x + half_width, -2.0};
      m.rooms.push_back({door, center, j, box});
    }
  }
  const int end_right = add({length, 0.0}, NodeKind::Corridor);
  link(prev, end_right);
  const int ta_right = add({length + 6.0, 0.0}, NodeKind::Treatment);
  link(end_right, ta_right);
  m.treatment_nodes = {ta_left, ta_right};
  m.treatment_boxes = {{-12.0, -3.0, 0.0, 3.0}, {length, -3.0, length + 12.0, 3.0}};
  return m;
}

Location MapGraph::locate(Point p) const {
  for (const auto& r : rooms) {
    if (r.box.contains(p)) return Location::Room;
  }
  for (const auto& b : treatment_boxes) {
    if (b.contains(p)) return Location::TreatmentArea;
  }
  return Location::Corridor;
}

bool MapGraph::all_rooms_reachable() const {
  if (nodes.empty() || treatment_nodes.empty()) return false;
  std::vector<char> seen(nodes.size(), 0);
  std::vector<int> stack = {treatment_nodes.front()};
  seen[static_cast<std::size_t>(treatment_nodes.front())] = 1;
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    for (const auto& e : edges) {
      const int other = e.a == n ? e.b : (e.b == n ? e.a : -1);
      if (other >= 0 && !seen[static_cast<std::size_t>(other)]) {
        seen[static_cast<std::size_t>(other)] = 1;
        stack.push_back(other);
      }
    }
  }
  return std::all_of(rooms.begin(), rooms.end(), [&](const RoomInfo& r) {
    return r.room_node >= 0 && r.room_node < static_cast<int>(nodes.size()) &&
           seen[static_cast<std::size_t>(r.room_node)] &&
           seen[static_cast<std::size_t>(r.door_node)];
  });
}

std::vector<std::string> MissionConfig::violations() const {
  std::vector<std::string> v;
  if (map.rooms.empty()) v.emplace_back("map has no rooms");
  if (map.treatment_nodes.empty()) v.emplace_back("map has no treatment area");
  if (!map.rooms.empty() && !map.treatment_nodes.empty() && !map.all_rooms_reachable()) {
    v.emplace_back("map has unreachable rooms");
  }
  if (regular_victims < 0 || critical_victims < 0) v.emplace_back("victim counts must be >= 0");
  if (period_ms <= 0) v.emplace_back("sampling period must be positive");
  if (mission_seconds <= 0) v.emplace_back("mission length must be positive");
  const double ms = mission_seconds * 1000.0;
  if (period_ms > 0 && (std::floor(ms) != ms || static_cast<std::int64_t>(ms) % period_ms != 0)) {
    v.emplace_back("mission length must be a multiple of the sampling period");
  }
  for (double s : speed_multiplier) {
    if (!(s > 0)) {
      v.emplace_back("speed multipliers must be positive");
      break;
    }
  }
  if (policy.replan_min_s <= 0 || policy.replan_max_s < policy.replan_min_s) {
    v.emplace_back("strategy re-plan interval is invalid");
  }
  return v;
}

void MissionConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  for (std::size_t i = 0; i < v.size(); ++i) msg << (i ? "; " : "") << v[i];
  throw ConfigError(msg.str());
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

enum class VictimState { Waiting, Triaged, Carried, Saved };

struct Victim {
  Point pos;
  bool critical = false;
  int room = 0;
  VictimState state = VictimState::Waiting;
  bool claimed = false;  // a transporter is on its way
};

struct Marker {
  Point pos;
  bool active = true;
};

enum class TaskKind {
  Navigate,    // along the graph to a node
  MoveTo,      // straight line inside a room
  Search,      // wander inside a room
  Pause,       // stand still
  Equip,
  UseTool,     // role action: tool in hand for `ticks`, then a completion tick
  PlaceMarker,
  RemoveMarker,
  PickUp,
  Drop,
  WaitPartner,  // medic at a critical victim
  WaitAssist,   // partner standing by during a critical triage
};

enum class Effect { None, TriageRegular, TriageCritical, ClearRubble, Signal };

struct Task {
  TaskKind kind = TaskKind::Pause;
  int target = -1;  // node, victim or marker index
  Point point{};
  std::int64_t ticks = 0;
  Item item = Item::None;
  Tool tool = Tool::None;
  Effect effect = Effect::None;
  double speed = 0.0;
};

enum class Mode { Sweep, Relocate, Regroup, Ferry };

struct World;

struct Agent {
  Role role = Role::Medic;
  int index = 0;
  Rng rng{0};
  Point pos{};
  int node = 0;  // last graph node reached
  double speed = 0.0;
  Item item = Item::None;
  Tool tool = Tool::None;
  int regular_triaged = 0, regular_saved = 0, critical_triaged = 0, critical_saved = 0;
  double travelled = 0.0;
  std::deque<Task> tasks;
  std::deque<Point> waypoints;
  std::vector<int> waypoint_nodes;
  std::optional<Point> wander;
  Mode mode = Mode::Sweep;
  int direction = 1;  // sweep direction along the corridor
  double epoch_s = 60.0;  // strategy epoch length, fixed per mission
  int cycle = 0;
  bool replan_pause = false;
  double regroup_wait_s = 10.0;
  double pace = 1.0;  // per-epoch tempo
  double dwell_s = 3.0;
  double pause_s = 4.0;
  bool pauses = false;
  std::int64_t replan_at = 0;
  std::int64_t audio_ticks = 0;
  int carrying = -1;
  int assist_victim = -1;  // pending or active assist request
  bool assisting = false;
  std::vector<char> visited;

  std::optional<SemanticLabel> event;
  SemanticLabel base = SemanticLabel::ST;
};

struct World {
  const MissionConfig* config = nullptr;
  const MapGraph* map = nullptr;
  std::vector<Victim> victims;
  std::vector<char> rubble;
  std::vector<char> signaled;
  std::vector<int> door_marker;  // marker index per room or -1
  std::vector<Marker> markers;
  std::vector<std::vector<int>> next_hop;
  std::array<Agent, 3> agents;
  std::vector<CriticalRescue> rescues;
  std::int64_t tick = 0;
  double dt = 0.1;

  std::int64_t seconds(double s) const {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(s / dt)));
  }
  const MapNode& node(int i) const { return map->nodes[static_cast<std::size_t>(i)]; }
};

std::vector<std::vector<int>> all_pairs_next_hop(const MapGraph& m) {
  const auto n = m.nodes.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  std::vector<std::vector<int>> next(n, std::vector<int>(n, -1));
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0.0;
    next[i][i] = static_cast<int>(i);
  }
  for (const auto& e : m.edges) {
    const auto a = static_cast<std::size_t>(e.a), b = static_cast<std::size_t>(e.b);
    d[a][b] = d[b][a] = e.length;
    next[a][b] = e.b;
    next[b][a] = e.a;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (d[i][k] + d[k][j] < d[i][j]) {
          d[i][j] = d[i][k] + d[k][j];
          next[i][j] = next[i][k];
        }
  return next;
}

int nearest_treatment(const World& w, Point p) {
  int best = w.map->treatment_nodes.front();
  for (int t : w.map->treatment_nodes) {
    if (distance(p, w.node(t).pos) < distance(p, w.node(best).pos)) best = t;
  }
  return best;
}

Point random_point_in(const Box& b, Rng& rng, double margin) {
  return {rng.uniform(b.x0 + margin, b.x1 - margin), rng.uniform(b.y0 + margin, b.y1 - margin)};
}

// --- task construction helpers -------------------------------------------

Task navigate(int node, double speed) {
  Task t;
  t.kind = TaskKind::Navigate;
  t.target = node;
  t.speed = speed;
  return t;
}

Task move_to(Point p, double speed) {
  Task t;
  t.kind = TaskKind::MoveTo;
  t.point = p;
  t.speed = speed;
  return t;
}

Task pause(std::int64_t ticks) {
  Task t;
  t.kind = TaskKind::Pause;
  t.ticks = ticks;
  return t;
}

Task equip(Item item) {
  Task t;
  t.kind = TaskKind::Equip;
  t.item = item;
  return t;
}

Task use_tool(Tool tool, std::int64_t ticks, Effect effect, int target) {
  Task t;
  t.kind = TaskKind::UseTool;
  t.tool = tool;
  t.ticks = ticks;
  t.effect = effect;
  t.target = target;
  return t;
}

Task simple(TaskKind kind, int target = -1, std::int64_t ticks = 0) {
  Task t;
  t.kind = kind;
  t.target = target;
  t.ticks = ticks;
  return t;
}

Item item_for(Tool tool) {
  switch (tool) {
    case Tool::Medkit: return Item::Medkit;
    case Tool::Hammer: return Item::Hammer;
    case Tool::Signal: return Item::Signal;
    case Tool::Stretcher: return Item::Stretcher;
    case Tool::None: break;
  }
  return Item::None;
}

double walk_speed(const World& w, Agent& a) {
  const auto& p = w.config->policy;
  return p.walk_speed * w.config->speed_multiplier[static_cast<std::size_t>(a.role)] * a.pace *
         a.rng.uniform(0.97, 1.03);
}

// Appends a tool use, equipping the tool first when needed. `held` tracks what
// will be in hand once the queued tasks have run.
void queue_tool(std::deque<Task>& q, Item& held, Tool tool, std::int64_t ticks, Effect effect,
                int target) {
  if (held != item_for(tool)) {
    q.push_back(equip(item_for(tool)));
    held = item_for(tool);
  }
  q.push_back(use_tool(tool, ticks, effect, target));
}

void queue_marker(World& w, Agent& a, std::deque<Task>& q, int room, Item held) {
  if (w.door_marker[static_cast<std::size_t>(room)] >= 0) return;
  q.push_back(equip(Item::Marker));
  q.push_back(simple(TaskKind::PlaceMarker, room));
  q.push_back(equip(held));
  (void)a;
}

// --- strategy and task layers --------------------------------------------

bool can_enter(const World& w, const Agent& a, int room) {
  return !w.rubble[static_cast<std::size_t>(room)] || a.role == Role::Engineer;
}

int junction_near(const World& w, Point p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& r : w.map->rooms) {
    const double d = std::abs(w.node(r.door_node).pos.x - p.x);
    if (d < best_d) {
      best_d = d;
      best = r.junction;
    }
  }
  return best;
}

// Next unvisited room along the sweep direction; turns around at the end of
// the corridor. -1 when nothing is left on either side.
int next_sweep_room(const World& w, Agent& a) {
  const int here = junction_near(w, a.pos);
  for (int pass = 0; pass < 2; ++pass) {
    int best = -1;
    int best_score = std::numeric_limits<int>::max();
    for (int r = 0; r < static_cast<int>(w.map->rooms.size()); ++r) {
      if (a.visited[static_cast<std::size_t>(r)] || !can_enter(w, a, r)) continue;
      const int ahead = (w.map->rooms[static_cast<std::size_t>(r)].junction - here) * a.direction;
      if (ahead < 0) continue;
      const int score = 2 * ahead + (r % 2);
      if (score < best_score) {
        best_score = score;
        best = r;
      }
    }
    if (best >= 0) return best;
    a.direction = -a.direction;
  }
  return -1;
}

int waiting_transport_victim(const World& w) {
  for (int v = 0; v < static_cast<int>(w.victims.size()); ++v) {
    const auto& victim = w.victims[static_cast<std::size_t>(v)];
    if (!victim.critical && victim.state == VictimState::Triaged && !victim.claimed &&
        !w.rubble[static_cast<std::size_t>(victim.room)]) {
      return v;
    }
  }
  return -1;
}

void choose_mode(World& w, Agent& a) {
  // Strategy epochs alternate between relocating and regrouping, with the
  // agent sweeping rooms in between; ferry runs take the place of a relocation.
  const bool relocate = a.cycle++ % 2 == 0;
  a.mode = relocate ? Mode::Relocate : Mode::Regroup;
  if (relocate && waiting_transport_victim(w) >= 0 &&
      (a.role == Role::Transporter || (a.role == Role::Engineer && a.rng.bernoulli(0.3)))) {
    a.mode = Mode::Ferry;
  }
  const auto& p = w.config->policy;
  a.replan_at = w.tick + w.seconds(a.epoch_s * a.rng.uniform(0.95, 1.05));
  // Tempo held for the whole strategy epoch.
  a.pace = a.rng.uniform(1.0 - p.pace_spread, 1.0 + p.pace_spread);
  a.dwell_s = a.rng.uniform(p.search_min_s, p.search_max_s);
  a.pause_s = a.rng.uniform(p.pause_min_s, p.pause_max_s);
  a.pauses = a.rng.bernoulli(p.junction_pause_prob);
}

void plan_room_visit(World& w, Agent& a, int room) {
  const auto& p = w.config->policy;
  const auto& info = w.map->rooms[static_cast<std::size_t>(room)];
  const double speed = walk_speed(w, a);
  auto& q = a.tasks;
  Item held = a.item;

  if (a.pauses) q.push_back(pause(w.seconds(a.pause_s * a.rng.uniform(0.9, 1.1))));
  q.push_back(navigate(info.door_node, speed));
  a.visited[static_cast<std::size_t>(room)] = 1;

  if (w.rubble[static_cast<std::size_t>(room)]) {
    // Only engineers plan blocked rooms.
    queue_tool(q, held, Tool::Hammer, w.seconds(p.rubble_s), Effect::ClearRubble, room);
  }
  if (a.role == Role::Transporter && !w.signaled[static_cast<std::size_t>(room)]) {
    queue_tool(q, held, Tool::Signal, w.seconds(p.signal_s), Effect::Signal, room);
    const bool empty = std::none_of(w.victims.begin(), w.victims.end(), [&](const Victim& v) {
      return v.room == room && v.state != VictimState::Saved;
    });
    if (empty) {
      queue_marker(w, a, q, room, held);
      return;
    }
  }

  const double slow = p.search_speed * a.rng.uniform(0.8, 1.25);
  q.push_back(move_to(random_point_in(info.box, a.rng, 1.5), slow));
  Task search = simple(TaskKind::Search, room,
                       w.seconds(a.dwell_s * a.rng.uniform(0.9, 1.1)));
  search.speed = slow;
  q.push_back(search);

  if (a.role == Role::Medic) {
    for (int v = 0; v < static_cast<int>(w.victims.size()); ++v) {
      const auto& victim = w.victims[static_cast<std::size_t>(v)];
      if (victim.room != room || victim.state != VictimState::Waiting) continue;
      q.push_back(move_to(victim.pos, slow));
      if (victim.critical) q.push_back(simple(TaskKind::WaitPartner, v));
      queue_tool(q, held, Tool::Medkit,
                 w.seconds(victim.critical ? p.triage_critical_s : p.triage_regular_s),
                 victim.critical ? Effect::TriageCritical : Effect::TriageRegular, v);
    }
  }
  q.push_back(move_to(w.node(info.door_node).pos, slow));
  if (a.rng.bernoulli(0.7)) queue_marker(w, a, q, room, held);
}

void plan_ferry(World& w, Agent& a, int victim_index) {
  auto& victim = w.victims[static_cast<std::size_t>(victim_index)];
  victim.claimed = true;
  const auto& info = w.map->rooms[static_cast<std::size_t>(victim.room)];
  const double speed = walk_speed(w, a);
  const double slow = w.config->policy.search_speed * 1.2;
  auto& q = a.tasks;
  q.push_back(navigate(info.door_node, speed));
  q.push_back(move_to(victim.pos, slow));
  if (a.item != Item::Stretcher) q.push_back(equip(Item::Stretcher));
  q.push_back(simple(TaskKind::PickUp, victim_index));
  const double carry = speed * w.config->policy.carry_speed_factor;
  q.push_back(move_to(w.node(info.door_node).pos, carry));
  q.push_back(navigate(nearest_treatment(w, w.node(info.door_node).pos), carry));
  q.push_back(simple(TaskKind::Drop, victim_index));
  q.push_back(equip(Item::None));
}

void plan(World& w, Agent& a) {
  const auto& p = w.config->policy;
  if (w.tick >= a.replan_at) {
    choose_mode(w, a);
    if (a.replan_pause) {
      a.tasks.push_back(pause(w.seconds(a.rng.uniform(p.pause_min_s, p.pause_max_s))));
      return;
    }
  }

  switch (a.mode) {
    case Mode::Ferry: {
      const int v = waiting_transport_victim(w);
      if (v >= 0) {
        plan_ferry(w, a, v);
        return;
      }
      a.mode = Mode::Sweep;
      [[fallthrough]];
    }
    case Mode::Sweep: {
      const int room = next_sweep_room(w, a);
      if (room >= 0) {
        plan_room_visit(w, a, room);
        return;
      }
      // Everything reachable has been seen: start another pass elsewhere.
      std::fill(a.visited.begin(), a.visited.end(), 0);
      a.mode = Mode::Relocate;
      [[fallthrough]];
    }
    case Mode::Relocate: {
      const int here = junction_near(w, a.pos);
      const int n = w.map->junction_count;
      int j = here;
      for (int tries = 0; tries < 8 && std::abs(j - here) < std::max(1, n / 3); ++tries) {
        j = static_cast<int>(a.rng.below(static_cast<std::uint64_t>(n)));
      }
      a.direction = a.rng.bernoulli(0.5) ? 1 : -1;
      const int door = w.map->rooms[static_cast<std::size_t>(2 * j)].door_node;
      int junction = -1;
      for (const auto& e : w.map->edges) {
        if (e.a == door && w.node(e.b).kind == NodeKind::Corridor) junction = e.b;
        if (e.b == door && w.node(e.a).kind == NodeKind::Corridor) junction = e.a;
      }
      a.tasks.push_back(navigate(junction, walk_speed(w, a)));
      if (a.pauses) a.tasks.push_back(pause(w.seconds(a.pause_s)));
      a.mode = Mode::Sweep;
      return;
    }
    case Mode::Regroup: {
      const int target = a.rng.bernoulli(0.5)
                             ? nearest_treatment(w, a.pos)
                             : w.agents[static_cast<std::size_t>((a.index + 1 + a.rng.below(2)) % 3)].node;
      const auto& tnode = w.node(target);
      int goal = target;
      if (tnode.kind == NodeKind::Room) goal = w.map->rooms[static_cast<std::size_t>(tnode.room)].door_node;
      a.tasks.push_back(navigate(goal, walk_speed(w, a)));
      a.tasks.push_back(pause(w.seconds(a.regroup_wait_s * a.rng.uniform(0.95, 1.05))));
      a.audio_ticks = std::max(a.audio_ticks, w.seconds(a.rng.uniform(p.audio_min_s, p.audio_max_s)));
      a.mode = Mode::Sweep;
      return;
    }
  }
}

// --- kinematics -------------------------------------------------------------

// Moves toward `goal` at a smoothed speed; true when reached this tick.
bool step_toward(World& w, Agent& a, Point goal, double target_speed, double& budget) {
  const double d = distance(a.pos, goal);
  if (d <= budget) {
    budget -= d;
    a.pos = goal;
    return true;
  }
  a.pos.x += (goal.x - a.pos.x) / d * budget;
  a.pos.y += (goal.y - a.pos.y) / d * budget;
  budget = 0.0;
  (void)w;
  (void)target_speed;
  return false;
}

double tick_budget(World& w, Agent& a, double target_speed) {
  const double jitter = 1.0 + 0.04 * a.rng.normal();
  a.speed += 0.45 * (target_speed - a.speed);
  a.speed = std::max(0.0, a.speed * jitter);
  return a.speed * w.dt;
}

void build_path(World& w, Agent& a, int goal) {
  a.waypoints.clear();
  a.waypoint_nodes.clear();
  int at = a.node;
  if (distance(a.pos, w.node(at).pos) > 1e-9) {
    a.waypoints.push_back(w.node(at).pos);
    a.waypoint_nodes.push_back(at);
  }
  while (at != goal) {
    at = w.next_hop[static_cast<std::size_t>(at)][static_cast<std::size_t>(goal)];
    if (at < 0) throw ConfigError("simulate: no path between map nodes");
    a.waypoints.push_back(w.node(at).pos);
    a.waypoint_nodes.push_back(at);
  }
}

// Advances along the queued waypoints; true when the path is exhausted.
bool follow_path(World& w, Agent& a, double target_speed) {
  double budget = tick_budget(w, a, target_speed);
  while (!a.waypoints.empty()) {
    if (!step_toward(w, a, a.waypoints.front(), target_speed, budget)) return false;
    a.node = a.waypoint_nodes.front();
    a.waypoints.pop_front();
    a.waypoint_nodes.erase(a.waypoint_nodes.begin());
  }
  return true;
}

// --- per-tick execution -------------------------------------------------------

bool interruptible(const Agent& a) {
  if (a.carrying >= 0 || a.assisting) return false;
  if (a.tasks.empty()) return true;
  const auto k = a.tasks.front().kind;
  return k == TaskKind::Navigate || k == TaskKind::Pause || k == TaskKind::Search ||
         (k == TaskKind::MoveTo && a.item != Item::Stretcher);
}

void start_assist(World& w, Agent& a) {
  const auto& victim = w.victims[static_cast<std::size_t>(a.assist_victim)];
  const auto& info = w.map->rooms[static_cast<std::size_t>(victim.room)];
  a.tasks.clear();
  a.waypoints.clear();
  a.waypoint_nodes.clear();
  a.wander.reset();
  // Leave a room the way we came in before heading over.
  if (w.map->locate(a.pos) == Location::Room) {
    const int room = w.node(a.node).room;
    if (room >= 0 && room != victim.room) {
      a.tasks.push_back(move_to(w.node(w.map->rooms[static_cast<std::size_t>(room)].door_node).pos,
                                w.config->policy.search_speed * 1.3));
    }
  }
  const bool same_room = w.map->locate(a.pos) == Location::Room && w.node(a.node).room == victim.room;
  if (!same_room) a.tasks.push_back(navigate(info.door_node, walk_speed(w, a)));
  Point spot = victim.pos;
  spot.x += victim.pos.x > info.box.x0 + 2.0 ? -1.0 : 1.0;
  a.tasks.push_back(move_to(spot, w.config->policy.search_speed * 1.3));
  a.tasks.push_back(simple(TaskKind::WaitAssist, a.assist_victim));
  a.tasks.push_back(move_to(w.node(info.door_node).pos, w.config->policy.search_speed));
  a.assisting = true;
  if (a.rng.bernoulli(0.5)) {
    a.audio_ticks = std::max(a.audio_ticks, w.seconds(a.rng.uniform(1.0, 2.5)));
  }
}

void request_partner(World& w, int medic, int victim) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (i == medic) continue;
    const auto& other = w.agents[static_cast<std::size_t>(i)];
    if (other.assist_victim >= 0 || other.carrying >= 0) continue;
    const double d = distance(other.pos, w.victims[static_cast<std::size_t>(victim)].pos);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best >= 0) w.agents[static_cast<std::size_t>(best)].assist_victim = victim;
}

bool partner_near(const World& w, int medic, int victim) {
  for (int i = 0; i < 3; ++i) {
    if (i == medic) continue;
    const auto& other = w.agents[static_cast<std::size_t>(i)];
    if (other.assist_victim == victim &&
        distance(other.pos, w.victims[static_cast<std::size_t>(victim)].pos) <= 2.0) {
      return true;
    }
  }
  return false;
}

void finish_task(World& w, Agent& a) {
  a.tasks.pop_front();
  const auto& p = w.config->policy;
  if (a.rng.bernoulli(p.audio_prob)) {
    a.audio_ticks = std::max(a.audio_ticks, w.seconds(a.rng.uniform(p.audio_min_s, p.audio_max_s)));
  }
}

void apply_effect(World& w, Agent& a, const Task& t) {
  switch (t.effect) {
    case Effect::TriageRegular: {
      auto& v = w.victims[static_cast<std::size_t>(t.target)];
      v.state = VictimState::Triaged;
      a.regular_triaged += 1;
      break;
    }
    case Effect::TriageCritical: {
      auto& v = w.victims[static_cast<std::size_t>(t.target)];
      v.state = VictimState::Saved;
      a.critical_triaged += 1;
      a.critical_saved += 1;
      CriticalRescue r;
      r.tick = w.tick;
      r.victim = v.pos;
      for (std::size_t i = 0; i < 3; ++i) r.agents[i] = w.agents[i].pos;
      w.rescues.push_back(r);
      break;
    }
    case Effect::ClearRubble: w.rubble[static_cast<std::size_t>(t.target)] = 0; break;
    case Effect::Signal: w.signaled[static_cast<std::size_t>(t.target)] = 1; break;
    case Effect::None: break;
  }
}

void act(World& w, Agent& a) {
  a.tool = Tool::None;
  a.event.reset();
  if (a.audio_ticks > 0) --a.audio_ticks;

  if (a.assist_victim >= 0 && !a.assisting && interruptible(a)) start_assist(w, a);
  // A new strategy epoch cuts short walking, pausing and searching.
  if (w.tick >= a.replan_at && !a.assisting && a.carrying < 0 && !a.tasks.empty()) {
    const auto k = a.tasks.front().kind;
    if (k == TaskKind::Navigate || k == TaskKind::Pause || k == TaskKind::Search) {
      a.tasks.clear();
      a.waypoints.clear();
      a.waypoint_nodes.clear();
      a.wander.reset();
    }
  }
  if (a.tasks.empty()) plan(w, a);

  Task& t = a.tasks.front();
  const Location here = w.map->locate(a.pos);
  const bool in_room = here == Location::Room;
  a.base = in_room ? SemanticLabel::SR : SemanticLabel::ST;
  bool moved = false;

  switch (t.kind) {
    case TaskKind::Navigate: {
      if (a.waypoints.empty() && !(a.node == t.target && distance(a.pos, w.node(t.target).pos) < 1e-9)) {
        build_path(w, a, t.target);
      }
      const bool done = follow_path(w, a, t.speed);
      moved = true;
      a.base = SemanticLabel::NV;
      if (done) finish_task(w, a);
      break;
    }
    case TaskKind::MoveTo: {
      double budget = tick_budget(w, a, t.speed);
      moved = true;
      a.base = SemanticLabel::SR;
      if (step_toward(w, a, t.point, t.speed, budget)) {
        // Arrival at a door puts the agent back on the graph.
        const auto& door_check = w.map->nodes;
        for (std::size_t n = 0; n < door_check.size(); ++n) {
          if (distance(door_check[n].pos, a.pos) < 1e-9) a.node = static_cast<int>(n);
        }
        if (w.map->locate(a.pos) == Location::Room) {
          const int room = w.node(a.node).room;
          if (room < 0 || w.node(a.node).kind != NodeKind::Room) {
            for (std::size_t r = 0; r < w.map->rooms.size(); ++r) {
              if (w.map->rooms[r].box.contains(a.pos)) a.node = w.map->rooms[r].room_node;
            }
          }
        }
        finish_task(w, a);
      }
      break;
    }
    case TaskKind::Search: {
      const auto& info = w.map->rooms[static_cast<std::size_t>(t.target)];
      a.node = info.room_node;
      if (!a.wander) a.wander = random_point_in(info.box, a.rng, 1.5);
      double budget = tick_budget(w, a, t.speed);
      if (step_toward(w, a, *a.wander, t.speed, budget)) a.wander.reset();
      moved = true;
      a.base = SemanticLabel::SR;
      if (--t.ticks <= 0) {
        a.wander.reset();
        finish_task(w, a);
      }
      break;
    }
    case TaskKind::Pause:
      a.speed = 0.0;
      if (--t.ticks <= 0) finish_task(w, a);
      break;
    case TaskKind::Equip:
      a.speed = 0.0;
      if (a.item != t.item) a.event = SemanticLabel::IE;
      a.item = t.item;
      finish_task(w, a);
      break;
    case TaskKind::UseTool:
      a.speed = 0.0;
      if (t.ticks > 0) {
        a.tool = t.tool;
        a.event = SemanticLabel::TU;
        --t.ticks;
      } else {
        apply_effect(w, a, t);
        a.event = SemanticLabel::RA;
        finish_task(w, a);
      }
      break;
    case TaskKind::PlaceMarker: {
      a.speed = 0.0;
      const int room = t.target;
      if (w.door_marker[static_cast<std::size_t>(room)] < 0) {
        w.markers.push_back({a.pos, true});
        w.door_marker[static_cast<std::size_t>(room)] = static_cast<int>(w.markers.size() - 1);
        a.event = SemanticLabel::PM;
      }
      finish_task(w, a);
      break;
    }
    case TaskKind::RemoveMarker: {
      a.speed = 0.0;
      auto& m = w.markers[static_cast<std::size_t>(t.target)];
      if (m.active) {
        m.active = false;
        a.event = SemanticLabel::RM;
        for (auto& dm : w.door_marker) {
          if (dm == t.target) dm = -1;
        }
      }
      finish_task(w, a);
      break;
    }
    case TaskKind::PickUp: {
      a.speed = 0.0;
      auto& v = w.victims[static_cast<std::size_t>(t.target)];
      a.tool = Tool::Stretcher;
      a.event = SemanticLabel::TU;
      v.state = VictimState::Carried;
      a.carrying = t.target;
      finish_task(w, a);
      break;
    }
    case TaskKind::Drop: {
      a.speed = 0.0;
      auto& v = w.victims[static_cast<std::size_t>(t.target)];
      v.state = VictimState::Saved;
      v.pos = a.pos;
      a.carrying = -1;
      a.regular_saved += 1;
      finish_task(w, a);
      break;
    }
    case TaskKind::WaitPartner: {
      a.speed = 0.0;
      const bool requested = std::any_of(w.agents.begin(), w.agents.end(), [&](const Agent& o) {
        return o.assist_victim == t.target;
      });
      if (!requested) request_partner(w, a.index, t.target);
      if (partner_near(w, a.index, t.target)) finish_task(w, a);
      break;
    }
    case TaskKind::WaitAssist: {
      a.speed = 0.0;
      if (w.victims[static_cast<std::size_t>(t.target)].state == VictimState::Saved) {
        a.assist_victim = -1;
        a.assisting = false;
        finish_task(w, a);
      }
      break;
    }
  }
  if (!moved) a.speed = 0.0;

  if (a.carrying >= 0) w.victims[static_cast<std::size_t>(a.carrying)].pos = a.pos;

  // Markers near doors are occasionally picked back up on the way past.
  if (!a.event && a.tasks.size() > 0 && a.tasks.front().kind == TaskKind::Navigate &&
      w.map->locate(a.pos) == Location::Corridor) {
    for (std::size_t m = 0; m < w.markers.size(); ++m) {
      if (w.markers[m].active && distance(w.markers[m].pos, a.pos) < 0.5 &&
          a.rng.bernoulli(w.config->policy.marker_remove_prob)) {
        a.tasks.push_front(simple(TaskKind::RemoveMarker, static_cast<int>(m)));
        break;
      }
    }
  }
}

double nearest(Point p, const std::vector<Point>& pts) {
  double best = kProximityCap;
  for (const auto& q : pts) best = std::min(best, distance(p, q));
  return best;
}

}  // namespace

MissionResult simulate(const MissionConfig& config) {
  config.validate();
  const auto& p = config.policy;
  World w;
  w.config = &config;
  w.map = &config.map;
  w.dt = static_cast<double>(config.period_ms) / 1000.0;
  w.next_hop = all_pairs_next_hop(config.map);
  const auto room_count = config.map.rooms.size();
  w.rubble.assign(room_count, 0);
  w.signaled.assign(room_count, 0);
  w.door_marker.assign(room_count, -1);

  const std::uint64_t key = hash_key({config.seed, static_cast<std::uint64_t>(config.team),
                                      static_cast<std::uint64_t>(config.mission)});
  Rng world_rng(hash_key({key, 0x776f726cULL}));
  for (std::size_t r = 0; r < room_count; ++r) w.rubble[r] = world_rng.bernoulli(p.rubble_prob) ? 1 : 0;
  for (int i = 0; i < config.regular_victims + config.critical_victims; ++i) {
    Victim v;
    v.critical = i >= config.regular_victims;
    v.room = static_cast<int>(world_rng.below(room_count));
    v.pos = random_point_in(config.map.rooms[static_cast<std::size_t>(v.room)].box, world_rng, 1.5);
    w.victims.push_back(v);
  }

  const int spawn = config.map.treatment_nodes.front();
  for (int i = 0; i < 3; ++i) {
    auto& a = w.agents[static_cast<std::size_t>(i)];
    a.role = static_cast<Role>(i);
    a.index = i;
    a.rng = Rng(hash_key({key, static_cast<std::uint64_t>(i) + 1}));
    a.node = spawn;
    a.pos = config.map.nodes[static_cast<std::size_t>(spawn)].pos;
    a.visited.assign(room_count, 0);
    a.direction = a.rng.bernoulli(0.5) ? 1 : -1;
    a.epoch_s = a.rng.uniform(p.replan_min_s, p.replan_max_s);
    a.cycle = static_cast<int>(a.rng.below(2));
    a.replan_pause = a.rng.bernoulli(0.35);
    a.regroup_wait_s = a.rng.uniform(p.regroup_wait_min_s, p.regroup_wait_max_s);
    a.replan_at = w.seconds(a.epoch_s * a.rng.uniform(0.2, 1.0));
    a.pace = a.rng.uniform(1.0 - p.pace_spread, 1.0 + p.pace_spread);
    a.dwell_s = a.rng.uniform(p.search_min_s, p.search_max_s);
    a.pause_s = a.rng.uniform(p.pause_min_s, p.pause_max_s);
    a.pauses = a.rng.bernoulli(p.junction_pause_prob);
  }

  const auto ticks = static_cast<std::int64_t>(std::llround(config.mission_seconds * 1000.0)) /
                     config.period_ms;
  MissionResult result;
  for (int i = 0; i < 3; ++i) {
    auto& s = result.players[static_cast<std::size_t>(i)];
    s.team = config.team;
    s.role = static_cast<Role>(i);
    s.mission_id = "team" + std::to_string(config.team) + "_mission" + std::to_string(config.mission);
    s.player_id = s.mission_id + "_" + std::string(role_name(s.role));
    s.period_ms = config.period_ms;
    s.start_ms = 0;
    s.records.reserve(static_cast<std::size_t>(ticks));
    s.labels.reserve(static_cast<std::size_t>(ticks));
    s.audio_active.reserve(static_cast<std::size_t>(ticks));
  }

  std::vector<Point> doors, treatments;
  for (const auto& r : config.map.rooms) doors.push_back(config.map.nodes[static_cast<std::size_t>(r.door_node)].pos);
  for (int t : config.map.treatment_nodes) treatments.push_back(config.map.nodes[static_cast<std::size_t>(t)].pos);

  std::array<Point, 3> prev_pos;
  std::array<Location, 3> prev_loc;
  for (std::size_t i = 0; i < 3; ++i) {
    prev_pos[i] = w.agents[i].pos;
    prev_loc[i] = config.map.locate(w.agents[i].pos);
  }

  for (w.tick = 0; w.tick < ticks; ++w.tick) {
    if (w.tick > 0) {
      for (auto& a : w.agents) act(w, a);
    }

    std::vector<Point> regular, critical, markers;
    for (const auto& v : w.victims) {
      if (v.state == VictimState::Saved) continue;
      (v.critical ? critical : regular).push_back(v.pos);
    }
    for (const auto& m : w.markers) {
      if (m.active) markers.push_back(m.pos);
    }

    for (std::size_t i = 0; i < 3; ++i) {
      auto& a = w.agents[i];
      const double step = distance(prev_pos[i], a.pos);
      a.travelled += step;
      FeatureRecord r;
      r.current_location = config.map.locate(a.pos);
      r.current_velocity = w.tick > 0 ? step / w.dt : 0.0;
      r.critical_victims_triaged = a.critical_triaged;
      r.critical_victims_saved = a.critical_saved;
      r.distance_traveled = a.travelled;
      r.item_equipped = a.item;
      r.mission_time = static_cast<double>(w.tick) * w.dt;
      r.player_role = a.role;
      r.proximity_to_nearest_door = nearest(a.pos, doors);
      r.proximity_to_nearest_treatment_area = nearest(a.pos, treatments);
      r.proximity_to_medic = std::min(kProximityCap, distance(a.pos, w.agents[0].pos));
      r.proximity_to_engineer = std::min(kProximityCap, distance(a.pos, w.agents[1].pos));
      r.proximity_to_transporter = std::min(kProximityCap, distance(a.pos, w.agents[2].pos));
      r.proximity_to_nearest_regular = nearest(a.pos, regular);
      r.proximity_to_nearest_critical = nearest(a.pos, critical);
      r.proximity_to_nearest_marker = nearest(a.pos, markers);
      r.regular_victims_triaged = a.regular_triaged;
      r.regular_victims_saved = a.regular_saved;
      r.tool_used = a.tool;

      SemanticLabel label = a.base;
      if (a.event) {
        label = *a.event;
      } else if (r.current_location != prev_loc[i] &&
                 (r.current_location == Location::Room || prev_loc[i] == Location::Room)) {
        label = SemanticLabel::OD;
      } else if (a.audio_ticks > 0) {
        label = SemanticLabel::AC;
      } else if (a.carrying >= 0 && r.current_velocity > kStationarySpeed) {
        label = SemanticLabel::TV;
      }
      if (w.tick == 0) label = SemanticLabel::ST;

      auto& s = result.players[i];
      s.records.push_back(r);
      s.labels.push_back(label);
      s.audio_active.push_back(a.audio_ticks > 0);
      prev_pos[i] = a.pos;
      prev_loc[i] = r.current_location;
    }
  }
  result.critical_rescues = std::move(w.rescues);
  return result;
}

std::vector<FeatureSeries> generate_corpus(int n_teams, std::uint64_t base_seed,
                                           const PolicyParams& policy) {
  if (n_teams < 1) throw std::invalid_argument("generate_corpus: n_teams must be >= 1");
  std::vector<FeatureSeries> corpus;
  corpus.reserve(static_cast<std::size_t>(n_teams) * 6);
  for (int team = 0; team < n_teams; ++team) {
    for (int mission = 0; mission < 2; ++mission) {
      MissionConfig cfg;
      cfg.policy = policy;
      cfg.team = team;
      cfg.mission = mission;
      cfg.seed = base_seed;
      auto result = simulate(cfg);
      for (auto& s : result.players) corpus.push_back(std::move(s));
    }
  }
  return corpus;
}

LabelHistogram label_histogram(std::span<const FeatureSeries> corpus) {
  LabelHistogram h;
  for (const auto& s : corpus) {
    for (auto l : s.labels) {
      h.counts[static_cast<std::size_t>(l)] += 1;
      h.total += 1;
    }
  }
  return h;
}

}  // namespace mtlstm
