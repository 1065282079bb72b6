#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dplan/geometry.hpp"

namespace dplan {

struct OrientedBox {
  Waypoint center;
  double heading = 0;  // rad, math convention; length axis points along heading
  double length = 4.08;
  double width = 1.73;

  std::array<Waypoint, 4> corners() const {
    double c = std::cos(heading), s = std::sin(heading);
    double hl = 0.5 * length, hw = 0.5 * width;
    std::array<Waypoint, 4> out;
    const double dx[4] = {hl, hl, -hl, -hl};
    const double dy[4] = {hw, -hw, -hw, hw};
    for (int i = 0; i < 4; ++i)
      out[i] = {center.x + c * dx[i] - s * dy[i], center.y + s * dx[i] + c * dy[i]};
    return out;
  }
};

// Signed separation margin over the four candidate face axes. Positive means
// a separating axis exists; for overlapping boxes the magnitude is the
// penetration depth. Touching boundaries give zero.
inline double box_separation_margin(const OrientedBox& a, const OrientedBox& b) {
  double margin = -std::numeric_limits<double>::infinity();
  const OrientedBox* boxes[2] = {&a, &b};
  double tx = b.center.x - a.center.x, ty = b.center.y - a.center.y;
  for (const OrientedBox* box : boxes) {
    double c = std::cos(box->heading), s = std::sin(box->heading);
    const double axes[2][2] = {{c, s}, {-s, c}};
    for (const auto& ax : axes) {
      double ra = 0.5 * a.length * std::fabs(ax[0] * std::cos(a.heading) + ax[1] * std::sin(a.heading)) +
                  0.5 * a.width * std::fabs(-ax[0] * std::sin(a.heading) + ax[1] * std::cos(a.heading));
      double rb = 0.5 * b.length * std::fabs(ax[0] * std::cos(b.heading) + ax[1] * std::sin(b.heading)) +
                  0.5 * b.width * std::fabs(-ax[0] * std::sin(b.heading) + ax[1] * std::cos(b.heading));
      double t = std::fabs(ax[0] * tx + ax[1] * ty);
      margin = std::max(margin, t - (ra + rb));
    }
  }
  return margin;
}

// Separating-axis test; touching edges count as overlap.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  require(a.length > 0 && a.width > 0 && b.length > 0 && b.width > 0,
          "boxes_overlap: extents must be positive");
  return box_separation_margin(a, b) <= 0.0;
}

// ---- L2 conventions ---------------------------------------------------------

inline std::array<double, 6> l2_per_step(const Trajectory& pred, const Trajectory& gt) {
  std::array<double, 6> out;
  for (size_t i = 0; i < 6; ++i) out[i] = dist(pred[i], gt[i]);
  return out;
}

// Cumulative-average convention: value at horizon h seconds is the mean of
// the first 2h half-second distances; the summary is the mean of the three.
struct HorizonL2 {
  std::array<double, 3> at;  // 1 s, 2 s, 3 s
  double average;
};

inline HorizonL2 stp3_l2(const std::array<double, 6>& d) {
  HorizonL2 out{};
  for (int h = 1; h <= 3; ++h) {
    double s = 0;
    for (int i = 0; i < 2 * h; ++i) s += d[i];
    out.at[h - 1] = s / (2 * h);
  }
  out.average = (out.at[0] + out.at[1] + out.at[2]) / 3.0;
  return out;
}

// Exact-horizon convention: distances at 1 s, 2 s, 3 s (indices 2, 4, 6,
// 1-based), averaged directly.
inline HorizonL2 uniad_l2(const std::array<double, 6>& d) {
  HorizonL2 out{};
  out.at = {d[1], d[3], d[5]};
  out.average = (d[1] + d[3] + d[5]) / 3.0;
  return out;
}

// ---- collision checking -----------------------------------------------------

// Heading of the ego box at each waypoint: direction of (p_k - p_{k-1}) with
// p_0 at the origin; zero-length segments inherit the previous heading, the
// initial heading is +y.
inline std::array<double, 6> ego_headings(const Trajectory& t) {
  std::array<double, 6> out;
  Waypoint prev{0, 0};
  double heading = 1.5707963267948966;  // +y
  for (size_t k = 0; k < 6; ++k) {
    double dx = t[k].x - prev.x, dy = t[k].y - prev.y;
    if (dx != 0.0 || dy != 0.0) heading = std::atan2(dy, dx);
    out[k] = heading;
    prev = t[k];
  }
  return out;
}

struct EgoExtent {
  double length = 4.08;
  double width = 1.73;
};

// Flag k: the ego box placed at waypoint k (time 0.5*(k+1) s) overlaps any
// agent box at its linearly interpolated position at the same time.
inline std::array<bool, 6> collision_flags(const Trajectory& pred,
                                           const std::vector<AgentObservation>& agents,
                                           EgoExtent ego = {},
                                           const std::array<double, 6>* headings = nullptr) {
  std::array<double, 6> hd = headings ? *headings : ego_headings(pred);
  std::array<bool, 6> flags{};
  for (size_t k = 0; k < 6; ++k) {
    OrientedBox ego_box{pred[k], hd[k], ego.length, ego.width};
    double t = 0.5 * (k + 1);
    for (const AgentObservation& a : agents) {
      OrientedBox agent_box{a.at_time(t), a.heading, a.length, a.width};
      if (boxes_overlap(ego_box, agent_box)) {
        flags[k] = true;
        break;
      }
    }
  }
  return flags;
}

// Cumulative per-horizon collision: collides at h seconds if any of the first
// 2h step flags is set.
inline std::array<bool, 3> cumulative_collision(const std::array<bool, 6>& flags) {
  std::array<bool, 3> out{};
  bool any = false;
  for (int k = 0; k < 6; ++k) {
    any = any || flags[k];
    if (k % 2 == 1) out[k / 2] = any;
  }
  return out;
}

// Instantaneous variant, kept behind this helper for comparison runs.
inline std::array<bool, 3> instantaneous_collision(const std::array<bool, 6>& flags) {
  return {flags[1], flags[3], flags[5]};
}

// Literal reading of the cumulative-average formula with i counting seconds
// rather than half-second steps; available for comparison.
inline HorizonL2 stp3_l2_literal(const std::array<double, 6>& d) {
  HorizonL2 out{};
  for (int h = 1; h <= 3; ++h) {
    double s = 0;
    for (int i = 1; i <= h; ++i) s += d[2 * i - 1];
    out.at[h - 1] = s / h;
  }
  out.average = (out.at[0] + out.at[1] + out.at[2]) / 3.0;
  return out;
}

}  // namespace dplan
