#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dplan/geometry.hpp"
#include "dplan/metrics.hpp"
#include "dplan/plan.hpp"
#include "dplan/rng.hpp"

namespace dplan {

// A synthetic driving frame: observations, ego state, mission goal, and the
// ground-truth structured response.
struct Scene {
  std::string id;
  std::vector<AgentObservation> agents;
  EgoState ego;
  MissionGoal goal = MissionGoal::kForward;
  PlanResponse ground_truth;
};

struct GenParams {
  int min_agents = 0;
  int max_agents = 4;           // hard range 0..8
  double agent_speed_max = 8.0; // m/s, hard cap 12
  double agent_dist_min = 4.0;
  double agent_dist_max = 35.0;
  double ego_speed_max = 12.0;  // m/s
  double ego_accel_max = 1.5;   // m/s^2
  double curvature_max = 0.08;  // 1/m, signed
  double parked_prob = 0.10;    // stationary-ego scenes
  double straight_prob = 0.34;  // zero-curvature scenes
  EgoExtent ego_extent{};

  void validate() const {
    require(min_agents >= 0 && max_agents <= 8 && min_agents <= max_agents,
            "gen: agent count outside 0..8");
    require(agent_speed_max >= 0 && agent_speed_max <= 12.0, "gen: agent speed outside 0..12");
    require(std::fabs(curvature_max) <= 0.08, "gen: |curvature| above 0.08");
    require(ego_speed_max > 0 && ego_speed_max <= 12.0, "gen: ego speed outside (0,12]");
    require(agent_dist_min > 0 && agent_dist_min < agent_dist_max, "gen: bad agent distance range");
  }
};

struct EgoRollout {
  Trajectory trajectory;        // future 3 s, 2-decimal grid
  std::array<Waypoint, 4> history;  // past 2 s, 2-decimal grid
  std::string meta_action;
  TurnKind turn = TurnKind::kStraight;
  double clipped_accel = 0;     // accel after the v >= 0 clip
};

namespace detail {

// Position after arc length s along a constant-curvature path that starts at
// the origin heading +y. kappa > 0 turns right (+x).
inline Waypoint arc_position(double s, double kappa) {
  if (std::fabs(kappa) < 1e-12) return {0.0, s};
  return {(1.0 - std::cos(kappa * s)) / kappa, std::sin(kappa * s) / kappa};
}

// Arc length at time t under clipped constant acceleration: once the speed
// reaches zero it stays zero.
inline double arc_length(double t, double v0, double a) {
  if (a < 0) {
    double t_stop = -v0 / a;
    if (t >= t_stop) return v0 * t_stop + 0.5 * a * t_stop * t_stop;
  }
  return v0 * t + 0.5 * a * t * t;
}

}  // namespace detail

// Constant-curvature, constant-acceleration rollout of the ego vehicle,
// labeled with the meta action. Thresholds: |x6| > 0.5 m separates turning
// from straight; |v(3s) - v0| > 0.5 m/s separates accel/decel from constant.
inline EgoRollout rollout_ego(double v0, double accel, double kappa) {
  require(v0 >= 0, "rollout_ego: negative initial speed");
  EgoRollout out;
  double a = accel;
  if (v0 + a * 3.0 < 0.0) a = -v0 / 3.0;  // keep speed nonnegative over the horizon
  out.clipped_accel = a;

  for (int k = 1; k <= 6; ++k) {
    double s = detail::arc_length(0.5 * k, v0, a);
    Waypoint p = detail::arc_position(s, kappa);
    out.trajectory[k - 1] = {quantize2(p.x), quantize2(p.y)};
  }
  for (int k = 0; k < 4; ++k) {
    double t = -2.0 + 0.5 * k;  // oldest first
    double s = v0 * t + 0.5 * a * t * t;
    Waypoint p = detail::arc_position(s, kappa);
    out.history[k] = {quantize2(p.x), quantize2(p.y)};
  }

  double x6 = out.trajectory[5].x;
  out.turn = std::fabs(x6) <= 0.5 ? TurnKind::kStraight
                                  : (x6 > 0 ? TurnKind::kRight : TurnKind::kLeft);
  double dv = (v0 + a * 3.0 < 0 ? 0.0 : v0 + a * 3.0) - v0;
  SpeedKind sk = std::fabs(dv) <= 0.5 ? SpeedKind::kConstant
                                      : (dv > 0 ? SpeedKind::kAccel : SpeedKind::kDecel);
  out.meta_action = make_meta_action(out.turn, sk);
  return out;
}

namespace detail {

inline double point_segment_distance(const Waypoint& p, const Waypoint& a, const Waypoint& b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double len2 = vx * vx + vy * vy;
  double t = len2 == 0 ? 0.0 : ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

inline double point_polyline_distance(const Waypoint& p, const Trajectory& traj) {
  Waypoint prev{0, 0};
  double best = std::numeric_limits<double>::infinity();
  for (const Waypoint& w : traj.points) {
    best = std::min(best, point_segment_distance(p, prev, w));
    prev = w;
  }
  return best;
}

// Earliest time in [0, 3] at which the agent's linear path comes within the
// 2 m corridor around the ground-truth polyline; negative if it never does.
inline double corridor_entry_time(const AgentObservation& a, const Trajectory& gt) {
  for (int i = 0; i <= 30; ++i) {
    double t = 0.1 * i;
    if (point_polyline_distance(a.at_time(t), gt) <= 2.0) return t;
  }
  return -1.0;
}

inline void agent_extent(AgentClass c, double& length, double& width) {
  switch (c) {
    case AgentClass::kCar: length = 4.08; width = 1.73; break;
    case AgentClass::kTruck: length = 6.50; width = 2.50; break;
    case AgentClass::kAdult: length = 0.55; width = 0.55; break;
    case AgentClass::kBicycle: length = 1.70; width = 0.60; break;
  }
}

}  // namespace detail

// Deterministic scene construction from a seed. Agents that would make the
// ground truth unsafe are resampled; after 1000 attempts the parameters are
// reported infeasible.
inline Scene generate_scene(uint64_t seed, const GenParams& params, const std::string& id = "") {
  params.validate();
  Rng rng(Rng::mix(0x5ce9e5ull, seed));
  Scene scene;
  scene.id = id.empty() ? "frame-" + std::to_string(seed) : id;

  // ego kinematics
  double v0, a, kappa;
  if (rng.bernoulli(params.parked_prob)) {
    v0 = 0;
    a = 0;
    kappa = 0;
  } else {
    v0 = rng.uniform(0.5, params.ego_speed_max);
    a = rng.uniform(-params.ego_accel_max, params.ego_accel_max);
    if (rng.bernoulli(params.straight_prob)) {
      kappa = 0;
    } else {
      // bound the total turn so trajectories stay in a plausible envelope
      double s6 = std::max(1.0, detail::arc_length(3.0, v0, std::max(a, -v0 / 3.0)));
      double mag = rng.uniform(0.004, std::min(params.curvature_max, 1.2 / s6));
      kappa = rng.bernoulli(0.5) ? mag : -mag;
    }
  }
  EgoRollout roll = rollout_ego(v0, a, kappa);

  scene.ego.vx = 0;
  scene.ego.vy = v0;
  scene.ego.ax = kappa * v0 * v0;  // centripetal (+x toward the turn center)
  scene.ego.ay = roll.clipped_accel;
  scene.ego.yaw_rate = kappa * v0;
  scene.ego.history = roll.history;

  switch (roll.turn) {
    case TurnKind::kStraight: scene.goal = MissionGoal::kForward; break;
    case TurnKind::kLeft: scene.goal = MissionGoal::kLeft; break;
    case TurnKind::kRight: scene.goal = MissionGoal::kRight; break;
  }

  // agents, resampled until the ground truth stays collision-free
  int n_agents = params.min_agents + rng.uniform_int(params.max_agents - params.min_agents + 1);
  std::array<double, 6> gt_headings = ego_headings(roll.trajectory);
  OrientedBox ego_now{{0, 0}, 1.5707963267948966, params.ego_extent.length,
                      params.ego_extent.width};
  int attempts = 0;
  while (static_cast<int>(scene.agents.size()) < n_agents) {
    if (++attempts > 1000) fail("generate_scene: infeasible params, 1000 resampling attempts");
    AgentObservation agent;
    agent.cls = static_cast<AgentClass>(rng.uniform_int(4));
    detail::agent_extent(agent.cls, agent.length, agent.width);
    double r = rng.uniform(params.agent_dist_min, params.agent_dist_max);
    double ang = rng.uniform(0.0, 6.283185307179586);
    agent.position = {quantize2(r * std::cos(ang)), quantize2(r * std::sin(ang))};
    double speed = rng.uniform(0.0, params.agent_speed_max);
    double dir = rng.uniform(0.0, 6.283185307179586);
    agent.predicted = {quantize2(agent.position.x + 3.0 * speed * std::cos(dir)),
                       quantize2(agent.position.y + 3.0 * speed * std::sin(dir))};
    agent.heading = speed > 0.05 ? dir : 0.0;

    OrientedBox now{agent.position, agent.heading, agent.length, agent.width};
    if (boxes_overlap(ego_now, now)) continue;  // never spawn on top of the ego
    auto flags = collision_flags(roll.trajectory, {agent}, params.ego_extent, &gt_headings);
    bool hits = false;
    for (bool f : flags) hits = hits || f;
    if (hits) continue;
    scene.agents.push_back(agent);
  }

  // deterministic ordering: by distance, then class, then sampling order
  std::vector<size_t> order(scene.agents.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    double di = std::hypot(scene.agents[i].position.x, scene.agents[i].position.y);
    double dj = std::hypot(scene.agents[j].position.x, scene.agents[j].position.y);
    if (di != dj) return di < dj;
    return static_cast<int>(scene.agents[i].cls) < static_cast<int>(scene.agents[j].cls);
  });
  std::vector<AgentObservation> sorted;
  sorted.reserve(order.size());
  for (size_t i : order) sorted.push_back(scene.agents[i]);
  scene.agents = std::move(sorted);

  // ground truth response: notable objects are the agents whose predicted
  // path enters the 2 m corridor around the trajectory within 3 s
  PlanResponse& gt = scene.ground_truth;
  gt.trajectory = roll.trajectory;
  gt.meta_action = roll.meta_action;
  for (const AgentObservation& agent : scene.agents) {
    double entry = detail::corridor_entry_time(agent, roll.trajectory);
    if (entry < 0) continue;
    double rounded = std::ceil(entry / 0.5 - 1e-9) * 0.5;
    char phrase[64];
    std::snprintf(phrase, sizeof(phrase), "within safety zone at %.1fs", rounded);
    gt.potential_effects.push_back(
        {static_cast<int>(gt.notable_objects.size()), phrase});
    gt.notable_objects.push_back({agent.cls, agent.position});
  }
  return scene;
}

}  // namespace dplan
