#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "dplan/codec.hpp"
#include "dplan/rng.hpp"

using namespace dplan;

namespace {

// The example input/output block from the planner grammar this codec targets.
const char* kExpectedOutput =
    "Thoughts: Notable Objects: adult at (-1.21, 6.78). Potential Effects: within safety zone at "
    "1.0s.\nMeta Action: TURN RIGHT WITH A CONSTANT SPEED\nTrajectory: [(0.11,1.14), (0.45,2.28), "
    "(1.12,3.47), (2.18,4.54), (3.65,5.29), (5.49,5.58)]";

PlanResponse expected_plan() {
  PlanResponse p;
  p.notable_objects = {{AgentClass::kAdult, {-1.21, 6.78}}};
  p.potential_effects = {{0, "within safety zone at 1.0s"}};
  p.meta_action = "TURN RIGHT WITH A CONSTANT SPEED";
  p.trajectory[0] = {0.11, 1.14};
  p.trajectory[1] = {0.45, 2.28};
  p.trajectory[2] = {1.12, 3.47};
  p.trajectory[3] = {2.18, 4.54};
  p.trajectory[4] = {3.65, 5.29};
  p.trajectory[5] = {5.49, 5.58};
  return p;
}

PlanResponse random_valid_plan(Rng& rng) {
  PlanResponse p;
  int n_obj = rng.uniform_int(3);
  for (int i = 0; i < n_obj; ++i) {
    AgentClass cls = static_cast<AgentClass>(rng.uniform_int(4));
    p.notable_objects.push_back(
        {cls, {quantize2(rng.uniform(-60, 60)), quantize2(rng.uniform(-60, 60))}});
    char phrase[48];
    std::snprintf(phrase, sizeof(phrase), "within safety zone at %.1fs",
                  0.5 * (1 + rng.uniform_int(6)));
    p.potential_effects.push_back({i, phrase});
  }
  auto turn = static_cast<TurnKind>(rng.uniform_int(3));
  auto speed = static_cast<SpeedKind>(rng.uniform_int(3));
  p.meta_action = make_meta_action(turn, speed);
  double x = 0, y = 0;
  for (int k = 0; k < 6; ++k) {
    x += rng.uniform(-2, 2);
    y += rng.uniform(0, 5);
    p.trajectory[k] = {quantize2(x), quantize2(y)};
  }
  return p;
}

}  // namespace

TEST_CASE("render_response reproduces the reference output block byte for byte") {
  CHECK(render_response(expected_plan()) == kExpectedOutput);
}

TEST_CASE("parse_response extracts the reference trajectory exactly") {
  ParseResult r = parse_response(kExpectedOutput);
  REQUIRE(std::holds_alternative<PlanResponse>(r));
  const PlanResponse& p = std::get<PlanResponse>(r);
  const double want[6][2] = {{0.11, 1.14}, {0.45, 2.28}, {1.12, 3.47},
                             {2.18, 4.54}, {3.65, 5.29}, {5.49, 5.58}};
  for (int k = 0; k < 6; ++k) {
    CHECK(p.trajectory[k].x == want[k][0]);
    CHECK(p.trajectory[k].y == want[k][1]);
  }
  REQUIRE(p.notable_objects.size() == 1);
  CHECK(p.notable_objects[0].cls == AgentClass::kAdult);
  CHECK(p.notable_objects[0].position.x == -1.21);
  REQUIRE(p.potential_effects.size() == 1);
  CHECK(p.potential_effects[0].phrase == "within safety zone at 1.0s");
  CHECK(p.meta_action == "TURN RIGHT WITH A CONSTANT SPEED");
}

TEST_CASE("render_prompt matches the reference prompt lines") {
  Scene s;
  s.agents.push_back({AgentClass::kCar, {-8.67, 0.12}, {-8.50, -0.08}, 0.0, 4.08, 1.73});
  s.agents.push_back({AgentClass::kAdult, {-1.21, 6.78}, {-1.29, 10.48}, 0.0, 0.55, 0.55});
  s.ego.vx = 0.0;
  s.ego.vy = 2.92;  // renders as per-step displacement (0.00, 1.46)
  s.goal = MissionGoal::kRight;
  std::string prompt = render_prompt(s);
  CHECK(prompt.find("Perception & Prediction: car at (-8.67, 0.12), moving to (-8.50, -0.08). "
                    "adult at (-1.21, 6.78), moving to (-1.29, 10.48).") != std::string::npos);
  CHECK(prompt.find("Velocity (vx,vy): (0.00, 1.46).") != std::string::npos);
  CHECK(prompt.find("Mission Goal: RIGHT") != std::string::npos);
  CHECK(render_prompt(s) == prompt);  // stable bytes
}

TEST_CASE("zero agents give an empty perception body") {
  Scene s;
  std::string prompt = render_prompt(s);
  CHECK(prompt.rfind("Perception & Prediction:\n", 0) == 0);
}

TEST_CASE("stationary plan renders six origin pairs") {
  PlanResponse p;
  p.meta_action = make_meta_action(TurnKind::kStraight, SpeedKind::kConstant);
  std::string text = render_response(p);
  CHECK(text.find("Trajectory: [(0.00,0.00), (0.00,0.00), (0.00,0.00), (0.00,0.00), (0.00,0.00), "
                  "(0.00,0.00)]") != std::string::npos);
  CHECK(text.find("Notable Objects: None.") != std::string::npos);
  CHECK(text.find("Potential Effects: None.") != std::string::npos);
}

TEST_CASE("parse(render(p)) == p for random valid plans") {
  Rng rng(2024);
  for (int i = 0; i < 2000; ++i) {
    PlanResponse p = random_valid_plan(rng);
    std::string text = render_response(p);
    ParseResult r = parse_response(text);
    REQUIRE(std::holds_alternative<PlanResponse>(r));
    CHECK(plan_equal_2dp(std::get<PlanResponse>(r), p));
  }
}

TEST_CASE("format errors") {
  using R = FormatError::Reason;
  auto reason_of = [](const std::string& text) {
    ParseResult r = parse_response(text);
    REQUIRE(std::holds_alternative<FormatError>(r));
    return std::get<FormatError>(r).reason;
  };
  CHECK(reason_of("") == R::kMissingTrajectoryHeader);
  CHECK(reason_of("Meta Action: GO STRAIGHT WITH A CONSTANT SPEED") ==
        R::kMissingTrajectoryHeader);
  CHECK(reason_of("Trajectory: [(1.00,2.00), (1.00,2.00), (1.00,2.00), (1.00,2.00), (1.00,2.00)]") ==
        R::kWrongWaypointCount);
  CHECK(reason_of("Trajectory: [(1.00,2.00), (1.00,2.00), (1.00,2.00), (1.00,2.00), (1.00,2.00), "
                  "(1.00,2.00), (1.00,2.00)]") == R::kWrongWaypointCount);
  CHECK(reason_of("Trajectory: [(1.00,abc)") == R::kUnparseableNumber);
  CHECK(reason_of("Trajectory: [(1.00,2.00") == R::kTruncatedOutput);
  CHECK(reason_of("Trajectory: [") == R::kTruncatedOutput);
  CHECK(reason_of("Trajectory:") == R::kTruncatedOutput);
  CHECK(reason_of("Trajectory: [(1e3,2.00), ...]") == R::kUnparseableNumber);
}

TEST_CASE("last trajectory block wins") {
  std::string text =
      "Trajectory: [(9.00,9.00), (9.00,9.00), (9.00,9.00), (9.00,9.00), (9.00,9.00), (9.00,9.00)]\n"
      "Trajectory: [(1.00,1.00), (2.00,2.00), (3.00,3.00), (4.00,4.00), (5.00,5.00), (6.00,6.00)]";
  ParseResult r = parse_response(text);
  REQUIRE(std::holds_alternative<PlanResponse>(r));
  CHECK(std::get<PlanResponse>(r).trajectory[0].x == 1.0);
}

TEST_CASE("trailing whitespace keeps a successful parse identical") {
  std::string text = kExpectedOutput;
  ParseResult a = parse_response(text);
  ParseResult b = parse_response(text + "  \n \t ");
  REQUIRE(std::holds_alternative<PlanResponse>(a));
  REQUIRE(std::holds_alternative<PlanResponse>(b));
  CHECK(plan_equal_2dp(std::get<PlanResponse>(a), std::get<PlanResponse>(b)));
}

TEST_CASE("parser accepts 1-4 decimals and optional minus") {
  std::string text =
      "Trajectory: [(0.5,1.1234), (-0.1,2.0), (1.25,3.333), (2.0,4.0), (3.0,5.0), (4.0,6.0)]";
  ParseResult r = parse_response(text);
  REQUIRE(std::holds_alternative<PlanResponse>(r));
  CHECK(std::get<PlanResponse>(r).trajectory[0].y == Catch::Approx(1.1234));
  CHECK(std::get<PlanResponse>(r).trajectory[1].x == Catch::Approx(-0.1));
}

TEST_CASE("fuzzing parse_response never aborts (smoke)") {
  Rng rng(77);
  const std::string alphabet = "0123456789.,():-[] \nTrajectoryMetaActionNone";
  for (int i = 0; i < 20000; ++i) {
    std::string s;
    int len = rng.uniform_int(120);
    for (int j = 0; j < len; ++j) s += alphabet[rng.uniform_int((int)alphabet.size())];
    CHECK_NOTHROW(parse_response(s));
  }
  // mutations of a valid response
  std::string base = kExpectedOutput;
  for (int i = 0; i < 20000; ++i) {
    std::string s = base;
    int cut = rng.uniform_int((int)s.size());
    if (rng.bernoulli(0.5)) s = s.substr(0, cut);
    else s[cut] = static_cast<char>(rng.uniform_int(256));
    CHECK_NOTHROW(parse_response(s));
  }
}
