#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dplan/common.hpp"

namespace dplan {

// Ego frame: vehicle at the origin, +y along the current heading, +x to the
// right. All positions in meters.
struct Waypoint {
  double x = 0;
  double y = 0;
};

inline double dist(const Waypoint& a, const Waypoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Six waypoints at 0.5 s spacing covering a 3 s horizon.
struct Trajectory {
  std::array<Waypoint, 6> points;

  const Waypoint& operator[](size_t i) const { return points[i]; }
  Waypoint& operator[](size_t i) { return points[i]; }
};

inline void validate_trajectory(const Trajectory& t) {
  Waypoint prev{0, 0};
  for (const Waypoint& p : t.points) {
    require(std::isfinite(p.x) && std::isfinite(p.y), "trajectory: non-finite waypoint");
    require(std::fabs(p.x) <= 100.0 && std::fabs(p.y) <= 100.0,
            "trajectory: waypoint outside the 100 m envelope");
    require(dist(prev, p) <= 15.0, "trajectory: consecutive displacement above 15 m");
    prev = p;
  }
}

struct EgoState {
  double vx = 0, vy = 0;  // m/s
  double ax = 0, ay = 0;  // m/s^2
  double yaw_rate = 0;    // rad/s
  std::array<Waypoint, 4> history;  // past 2 s at 0.5 s spacing, oldest first
};

enum class AgentClass { kCar, kTruck, kAdult, kBicycle };

inline const char* to_string(AgentClass c) {
  switch (c) {
    case AgentClass::kCar: return "car";
    case AgentClass::kTruck: return "truck";
    case AgentClass::kAdult: return "adult";
    case AgentClass::kBicycle: return "bicycle";
  }
  fail("unknown agent class");
}

inline bool agent_class_from_string(const std::string& s, AgentClass& out) {
  if (s == "car") out = AgentClass::kCar;
  else if (s == "truck") out = AgentClass::kTruck;
  else if (s == "adult") out = AgentClass::kAdult;
  else if (s == "bicycle") out = AgentClass::kBicycle;
  else return false;
  return true;
}

struct AgentObservation {
  AgentClass cls = AgentClass::kCar;
  Waypoint position;          // now
  Waypoint predicted;         // 3 s ahead, linear motion
  double heading = 0;         // rad, standard math convention (0 = +x, pi/2 = +y)
  double length = 4.08;
  double width = 1.73;

  Waypoint at_time(double t) const {
    // linear interpolation between the observed and predicted positions
    double f = t / 3.0;
    return {position.x + (predicted.x - position.x) * f,
            position.y + (predicted.y - position.y) * f};
  }
};

inline void validate_agent(const AgentObservation& a) {
  require(a.length > 0 && a.width > 0, "agent: extent must be positive");
  require(dist(a.position, a.predicted) / 3.0 <= 30.0, "agent: predicted speed above 30 m/s");
}

enum class MissionGoal { kForward, kLeft, kRight };

inline const char* to_string(MissionGoal g) {
  switch (g) {
    case MissionGoal::kForward: return "FORWARD";
    case MissionGoal::kLeft: return "LEFT";
    case MissionGoal::kRight: return "RIGHT";
  }
  fail("unknown mission goal");
}

inline bool mission_goal_from_string(const std::string& s, MissionGoal& out) {
  if (s == "FORWARD") out = MissionGoal::kForward;
  else if (s == "LEFT") out = MissionGoal::kLeft;
  else if (s == "RIGHT") out = MissionGoal::kRight;
  else return false;
  return true;
}

}  // namespace dplan
