#pragma once

#include <string>
#include <vector>

#include "dplan/geometry.hpp"

namespace dplan {

// Meta-action label grammar:
//   {GO STRAIGHT | TURN LEFT | TURN RIGHT} WITH {AN ACCELERATION | A DECELERATION | A CONSTANT SPEED}
enum class TurnKind { kStraight, kLeft, kRight };
enum class SpeedKind { kAccel, kDecel, kConstant };

inline std::string make_meta_action(TurnKind t, SpeedKind s) {
  std::string out;
  switch (t) {
    case TurnKind::kStraight: out = "GO STRAIGHT"; break;
    case TurnKind::kLeft: out = "TURN LEFT"; break;
    case TurnKind::kRight: out = "TURN RIGHT"; break;
  }
  out += " WITH ";
  switch (s) {
    case SpeedKind::kAccel: out += "AN ACCELERATION"; break;
    case SpeedKind::kDecel: out += "A DECELERATION"; break;
    case SpeedKind::kConstant: out += "A CONSTANT SPEED"; break;
  }
  return out;
}

inline bool meta_action_valid(const std::string& s) {
  for (TurnKind t : {TurnKind::kStraight, TurnKind::kLeft, TurnKind::kRight})
    for (SpeedKind k : {SpeedKind::kAccel, SpeedKind::kDecel, SpeedKind::kConstant})
      if (s == make_meta_action(t, k)) return true;
  return false;
}

struct NotableObject {
  AgentClass cls = AgentClass::kCar;
  Waypoint position;
};

struct PotentialEffect {
  int object_index = 0;  // index into the notable-objects list
  std::string phrase;    // e.g. "within safety zone at 1.0s"; no commas
};

// Structured assistant output: reasoning sections plus the trajectory.
struct PlanResponse {
  std::vector<NotableObject> notable_objects;
  std::vector<PotentialEffect> potential_effects;
  std::string meta_action;
  Trajectory trajectory;
};

// Validity contract for rendering. The positional effect encoding requires one
// phrase per notable object, in order; phrases stay on the grammar's alphabet
// and avoid the list separator.
inline void validate_plan(const PlanResponse& p) {
  validate_trajectory(p.trajectory);
  require(meta_action_valid(p.meta_action), "plan: meta action not in the label grammar");
  require(p.potential_effects.size() == p.notable_objects.size(),
          "plan: one potential effect per notable object");
  for (size_t i = 0; i < p.potential_effects.size(); ++i) {
    const auto& e = p.potential_effects[i];
    require(e.object_index == static_cast<int>(i), "plan: effects must follow object order");
    require(!e.phrase.empty(), "plan: empty effect phrase");
    for (char c : e.phrase)
      require(c != ',' && c != '\n' && c != ':', "plan: effect phrase contains a reserved character");
  }
}

inline bool plan_equal_2dp(const PlanResponse& a, const PlanResponse& b) {
  auto q = [](double v) { return quantize2(v); };
  if (a.notable_objects.size() != b.notable_objects.size()) return false;
  for (size_t i = 0; i < a.notable_objects.size(); ++i) {
    if (a.notable_objects[i].cls != b.notable_objects[i].cls) return false;
    if (q(a.notable_objects[i].position.x) != q(b.notable_objects[i].position.x)) return false;
    if (q(a.notable_objects[i].position.y) != q(b.notable_objects[i].position.y)) return false;
  }
  if (a.potential_effects.size() != b.potential_effects.size()) return false;
  for (size_t i = 0; i < a.potential_effects.size(); ++i) {
    if (a.potential_effects[i].object_index != b.potential_effects[i].object_index) return false;
    if (a.potential_effects[i].phrase != b.potential_effects[i].phrase) return false;
  }
  if (a.meta_action != b.meta_action) return false;
  for (size_t i = 0; i < 6; ++i) {
    if (q(a.trajectory[i].x) != q(b.trajectory[i].x)) return false;
    if (q(a.trajectory[i].y) != q(b.trajectory[i].y)) return false;
  }
  return true;
}

}  // namespace dplan
