#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dplan/codec.hpp"
#include "dplan/scene.hpp"

namespace dplan {

// One dataset record. Prompt and response are pre-rendered so training and
// evaluation never re-render; the scene carries what the metrics need.
struct Frame {
  std::string id;
  std::string prompt;
  std::string response;
  std::vector<AgentObservation> agents;
  EgoState ego;
  MissionGoal goal = MissionGoal::kForward;
  Trajectory gt_trajectory;
};

namespace detail {

inline nlohmann::json waypoint_json(const Waypoint& w) { return {w.x, w.y}; }

inline Waypoint waypoint_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace detail

inline nlohmann::json frame_to_json(const Frame& f) {
  nlohmann::json agents = nlohmann::json::array();
  for (const AgentObservation& a : f.agents) {
    agents.push_back({{"cls", to_string(a.cls)},
                      {"pos", detail::waypoint_json(a.position)},
                      {"pred", detail::waypoint_json(a.predicted)},
                      {"heading", a.heading},
                      {"extent", {a.length, a.width}}});
  }
  nlohmann::json history = nlohmann::json::array();
  for (const Waypoint& w : f.ego.history) history.push_back(detail::waypoint_json(w));
  nlohmann::json gt = nlohmann::json::array();
  for (const Waypoint& w : f.gt_trajectory.points) gt.push_back(detail::waypoint_json(w));
  return {{"id", f.id},
          {"prompt", f.prompt},
          {"response", f.response},
          {"scene",
           {{"agents", agents},
            {"ego",
             {{"velocity", {f.ego.vx, f.ego.vy}},
              {"acceleration", {f.ego.ax, f.ego.ay}},
              {"yaw_rate", f.ego.yaw_rate},
              {"history", history}}},
            {"goal", to_string(f.goal)},
            {"gt_trajectory", gt}}}};
}

inline Frame frame_from_json(const nlohmann::json& j) {
  Frame f;
  f.id = j.at("id").get<std::string>();
  f.prompt = j.at("prompt").get<std::string>();
  f.response = j.at("response").get<std::string>();
  const auto& scene = j.at("scene");
  for (const auto& a : scene.at("agents")) {
    AgentObservation agent;
    require(agent_class_from_string(a.at("cls").get<std::string>(), agent.cls),
            "dataset: unknown agent class");
    agent.position = detail::waypoint_from_json(a.at("pos"));
    agent.predicted = detail::waypoint_from_json(a.at("pred"));
    agent.heading = a.at("heading").get<double>();
    agent.length = a.at("extent").at(0).get<double>();
    agent.width = a.at("extent").at(1).get<double>();
    f.agents.push_back(agent);
  }
  const auto& ego = scene.at("ego");
  f.ego.vx = ego.at("velocity").at(0).get<double>();
  f.ego.vy = ego.at("velocity").at(1).get<double>();
  f.ego.ax = ego.at("acceleration").at(0).get<double>();
  f.ego.ay = ego.at("acceleration").at(1).get<double>();
  f.ego.yaw_rate = ego.at("yaw_rate").get<double>();
  for (int i = 0; i < 4; ++i)
    f.ego.history[i] = detail::waypoint_from_json(ego.at("history").at(i));
  require(mission_goal_from_string(scene.at("goal").get<std::string>(), f.goal),
          "dataset: unknown mission goal");
  for (int i = 0; i < 6; ++i)
    f.gt_trajectory[i] = detail::waypoint_from_json(scene.at("gt_trajectory").at(i));
  return f;
}

inline Frame frame_from_scene(const Scene& s) {
  Frame f;
  f.id = s.id;
  f.prompt = render_prompt(s);
  f.response = render_response(s.ground_truth);
  f.agents = s.agents;
  f.ego = s.ego;
  f.goal = s.goal;
  f.gt_trajectory = s.ground_truth.trajectory;
  return f;
}

inline void write_frames(const std::vector<Frame>& frames, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "dataset: cannot open " + path.string() + " for writing");
  for (const Frame& f : frames) out << frame_to_json(f).dump() << "\n";
  require(out.good(), "dataset: write failed for " + path.string());
}

inline std::vector<Frame> load_frames(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "dataset: cannot open " + path.string());
  std::vector<Frame> frames;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      frames.push_back(frame_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail("dataset: bad record at " + path.string() + ":" + std::to_string(lineno) + ": " +
           e.what());
    }
  }
  return frames;
}

// A frame belongs to the validation split when the hash of its id lands in
// the lowest val_percent bucket of 100.
inline bool is_validation_frame(const std::string& id, int val_percent) {
  return static_cast<int>(fnv1a(id) % 100) < val_percent;
}

}  // namespace dplan
