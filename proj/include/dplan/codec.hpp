#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dplan/plan.hpp"
#include "dplan/scene.hpp"

namespace dplan {

// Text grammar (BNF in docs/format.md). Prompts and responses are plain text
// over the tokenizer's alphabet; coordinates are fixed two-decimal. Prompt
// kinematics are expressed per 0.5 s step: velocity x0.5, acceleration x0.25,
// angular velocity x0.5.

struct FormatError {
  enum class Reason { kMissingTrajectoryHeader, kWrongWaypointCount, kUnparseableNumber, kTruncatedOutput };
  Reason reason;
  size_t byte_offset;
};

inline const char* to_string(FormatError::Reason r) {
  switch (r) {
    case FormatError::Reason::kMissingTrajectoryHeader: return "missing trajectory header";
    case FormatError::Reason::kWrongWaypointCount: return "wrong waypoint count";
    case FormatError::Reason::kUnparseableNumber: return "unparseable number";
    case FormatError::Reason::kTruncatedOutput: return "truncated output";
  }
  return "unknown";
}

using ParseResult = std::variant<PlanResponse, FormatError>;

namespace detail {

inline std::string pair_spaced(double x, double y) {
  return "(" + format_coord(x) + ", " + format_coord(y) + ")";
}

inline std::string pair_compact(double x, double y) {
  return "(" + format_coord(x) + "," + format_coord(y) + ")";
}

}  // namespace detail

// Prompt sections, in order: Perception & Prediction, Ego-States, Mission
// Goal. Agents are pre-sorted by the generator (distance, then class).
inline std::string render_prompt(const Scene& scene) {
  std::string out = "Perception & Prediction:";
  for (const AgentObservation& a : scene.agents) {
    out += " ";
    out += to_string(a.cls);
    out += " at " + detail::pair_spaced(a.position.x, a.position.y);
    out += ", moving to " + detail::pair_spaced(a.predicted.x, a.predicted.y) + ".";
  }
  out += "\nEgo-States: Velocity (vx,vy): " +
         detail::pair_spaced(scene.ego.vx * 0.5, scene.ego.vy * 0.5) +
         ". Acceleration (ax,ay): " +
         detail::pair_spaced(scene.ego.ax * 0.25, scene.ego.ay * 0.25) +
         ". Angular velocity: " + format_coord(scene.ego.yaw_rate * 0.5) + ". History: [";
  for (int i = 0; i < 4; ++i) {
    if (i) out += ", ";
    out += detail::pair_compact(scene.ego.history[i].x, scene.ego.history[i].y);
  }
  out += "]\nMission Goal: ";
  out += to_string(scene.goal);
  out += "\n";
  return out;
}

// Response sections, in order: Notable Objects, Potential Effects, Meta
// Action, Trajectory.
inline std::string render_response(const PlanResponse& plan) {
  validate_plan(plan);
  std::string out = "Thoughts: Notable Objects: ";
  if (plan.notable_objects.empty()) {
    out += "None";
  } else {
    for (size_t i = 0; i < plan.notable_objects.size(); ++i) {
      if (i) out += ", ";
      out += to_string(plan.notable_objects[i].cls);
      out += " at " + detail::pair_spaced(plan.notable_objects[i].position.x,
                                          plan.notable_objects[i].position.y);
    }
  }
  out += ". Potential Effects: ";
  if (plan.potential_effects.empty()) {
    out += "None";
  } else {
    for (size_t i = 0; i < plan.potential_effects.size(); ++i) {
      if (i) out += ", ";
      out += plan.potential_effects[i].phrase;
    }
  }
  out += ".\nMeta Action: " + plan.meta_action + "\nTrajectory: [";
  for (size_t i = 0; i < 6; ++i) {
    if (i) out += ", ";
    out += detail::pair_compact(plan.trajectory[i].x, plan.trajectory[i].y);
  }
  out += "]";
  return out;
}

namespace detail {

inline void skip_ws(std::string_view s, size_t& pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\n' || s[pos] == '\t' || s[pos] == '\r'))
    ++pos;
}

// Fixed-point number: optional '-', up to 9 integer digits, '.', 1-4
// decimals. No scientific notation (the grammar never emits it).
inline bool parse_number(std::string_view s, size_t& pos, double& out) {
  size_t p = pos;
  bool neg = false;
  if (p < s.size() && s[p] == '-') {
    neg = true;
    ++p;
  }
  size_t int_start = p;
  while (p < s.size() && s[p] >= '0' && s[p] <= '9') ++p;
  size_t int_digits = p - int_start;
  if (int_digits == 0 || int_digits > 9) return false;
  if (p >= s.size() || s[p] != '.') return false;
  ++p;
  size_t frac_start = p;
  while (p < s.size() && s[p] >= '0' && s[p] <= '9') ++p;
  size_t frac_digits = p - frac_start;
  if (frac_digits < 1 || frac_digits > 4) return false;
  // single mantissa/divisor split so short decimals round like literals
  int64_t mantissa = 0;
  for (size_t i = int_start; i < int_start + int_digits; ++i) mantissa = mantissa * 10 + (s[i] - '0');
  int64_t divisor = 1;
  for (size_t i = frac_start; i < frac_start + frac_digits; ++i) {
    mantissa = mantissa * 10 + (s[i] - '0');
    divisor *= 10;
  }
  double v = static_cast<double>(mantissa) / static_cast<double>(divisor);
  out = neg ? -v : v;
  pos = p;
  return true;
}

inline size_t section_end(std::string_view s, size_t from) {
  size_t end = s.size();
  for (std::string_view h : {"Potential Effects:", "Meta Action:", "Trajectory:"}) {
    size_t p = s.find(h, from);
    if (p != std::string_view::npos) end = std::min(end, p);
  }
  return end;
}

inline std::string_view trimmed(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\n' || s[b] == '\r' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\n' || s[e - 1] == '\r' || s[e - 1] == '\t')) --e;
  return s.substr(b, e - b);
}

// Scans "<class> at (x, y)" occurrences; unrecognized classes are skipped.
inline std::vector<NotableObject> scan_objects(std::string_view seg) {
  std::vector<NotableObject> out;
  size_t pos = 0;
  while (true) {
    size_t at = seg.find(" at (", pos);
    if (at == std::string_view::npos) break;
    size_t word_end = at;
    size_t word_begin = word_end;
    while (word_begin > 0 && std::isalpha(static_cast<unsigned char>(seg[word_begin - 1])))
      --word_begin;
    std::string word(seg.substr(word_begin, word_end - word_begin));
    size_t p = at + 5;
    double x, y;
    skip_ws(seg, p);
    if (!parse_number(seg, p, x)) {
      pos = at + 5;
      continue;
    }
    skip_ws(seg, p);
    if (p < seg.size() && seg[p] == ',') ++p;
    skip_ws(seg, p);
    if (!parse_number(seg, p, y)) {
      pos = at + 5;
      continue;
    }
    skip_ws(seg, p);
    if (p < seg.size() && seg[p] == ')') ++p;
    AgentClass cls;
    if (agent_class_from_string(word, cls)) out.push_back({cls, {x, y}});
    pos = p;
  }
  return out;
}

inline std::vector<PotentialEffect> scan_effects(std::string_view seg) {
  std::vector<PotentialEffect> out;
  std::string_view t = trimmed(seg);
  if (!t.empty() && t.back() == '.') t = trimmed(t.substr(0, t.size() - 1));
  if (t.empty() || t == "None") return out;
  size_t start = 0;
  while (start <= t.size()) {
    size_t sep = t.find(", ", start);
    std::string_view piece =
        sep == std::string_view::npos ? t.substr(start) : t.substr(start, sep - start);
    piece = trimmed(piece);
    if (!piece.empty())
      out.push_back({static_cast<int>(out.size()), std::string(piece)});
    if (sep == std::string_view::npos) break;
    start = sep + 2;
  }
  return out;
}

}  // namespace detail

// Parses arbitrary model output. Only the trajectory gates success: the last
// "Trajectory:" section must carry a bracketed list of exactly six
// "(x,y)" pairs. Reasoning sections are extracted when present and tolerated
// when malformed. Never throws on any byte string.
inline ParseResult parse_response(const std::string& text) {
  using R = FormatError::Reason;
  std::string_view s(text);

  const std::string_view header = "Trajectory:";
  size_t hpos = s.rfind(header);
  if (hpos == std::string_view::npos) return FormatError{R::kMissingTrajectoryHeader, s.size()};

  size_t pos = hpos + header.size();
  detail::skip_ws(s, pos);
  if (pos >= s.size()) return FormatError{R::kTruncatedOutput, pos};
  if (s[pos] != '[') return FormatError{R::kUnparseableNumber, pos};
  ++pos;

  std::vector<Waypoint> pts;
  while (true) {
    detail::skip_ws(s, pos);
    if (pos >= s.size()) return FormatError{R::kTruncatedOutput, pos};
    if (s[pos] == ']') {
      ++pos;
      break;
    }
    if (s[pos] == ',') {
      ++pos;
      continue;
    }
    if (s[pos] != '(') return FormatError{R::kUnparseableNumber, pos};
    ++pos;
    double x, y;
    detail::skip_ws(s, pos);
    if (!detail::parse_number(s, pos, x))
      return pos >= s.size() ? FormatError{R::kTruncatedOutput, pos}
                             : FormatError{R::kUnparseableNumber, pos};
    detail::skip_ws(s, pos);
    if (pos >= s.size()) return FormatError{R::kTruncatedOutput, pos};
    if (s[pos] != ',') return FormatError{R::kUnparseableNumber, pos};
    ++pos;
    detail::skip_ws(s, pos);
    if (!detail::parse_number(s, pos, y))
      return pos >= s.size() ? FormatError{R::kTruncatedOutput, pos}
                             : FormatError{R::kUnparseableNumber, pos};
    detail::skip_ws(s, pos);
    if (pos >= s.size()) return FormatError{R::kTruncatedOutput, pos};
    if (s[pos] != ')') return FormatError{R::kUnparseableNumber, pos};
    ++pos;
    pts.push_back({x, y});
    if (pts.size() > 6) return FormatError{R::kWrongWaypointCount, pos};
  }
  if (pts.size() != 6) return FormatError{R::kWrongWaypointCount, pos};

  PlanResponse plan;
  for (size_t i = 0; i < 6; ++i) plan.trajectory[i] = pts[i];

  // best-effort reasoning extraction, scoped to the text before the trajectory
  std::string_view head = s.substr(0, hpos);
  size_t no = head.find("Notable Objects:");
  if (no != std::string_view::npos) {
    size_t begin = no + 16;
    plan.notable_objects = detail::scan_objects(head.substr(begin, detail::section_end(head, begin) - begin));
  }
  size_t pe = head.find("Potential Effects:");
  if (pe != std::string_view::npos) {
    size_t begin = pe + 18;
    plan.potential_effects = detail::scan_effects(head.substr(begin, detail::section_end(head, begin) - begin));
  }
  size_t ma = head.find("Meta Action:");
  if (ma != std::string_view::npos) {
    size_t begin = ma + 12;
    size_t end = std::min(head.find('\n', begin), detail::section_end(head, begin));
    plan.meta_action = std::string(detail::trimmed(head.substr(begin, end - begin)));
  }
  return plan;
}

}  // namespace dplan
