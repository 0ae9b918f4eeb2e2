#include "doctest.h"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ipd/envlab/dataset_io.hpp"
#include "ipd/envlab/env.hpp"
#include "ipd/envlab/generate.hpp"

using namespace ipd::envlab;
using ipd::Rng;

namespace {

EnvSpec scalar_lqr() {
  EnvSpec e;
  e.name = EnvName::lqr;
  e.state_dim = 1;
  e.action_dim = 1;
  e.action_low = Vec::Constant(1, -100.0);
  e.action_high = Vec::Constant(1, 100.0);
  e.max_episode_steps = 50;
  e.dynamics_params = {1.0, 1.0, 1.0, 1.0};  // A=B=Q=R=1
  e.process_noise_std = 0.0;
  return e;
}

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("step: scalar lqr arithmetic") {
  EnvSpec e = scalar_lqr();
  Vec s = Vec::Constant(1, 1.0), a = Vec::Zero(1), n = Vec::Zero(1);
  StepResult r = step(e, s, a, n);
  CHECK(r.next_state(0) == doctest::Approx(1.0));
  CHECK(r.reward == doctest::Approx(-1.0));
  CHECK_FALSE(r.terminal);
}

TEST_CASE("step: lqr origin is a fixed point") {
  EnvSpec e = EnvSpec::lqr_default();
  Vec s = Vec::Zero(2), a = Vec::Zero(1), n = Vec::Zero(2);
  StepResult r = step(e, s, a, n);
  CHECK(r.reward == doctest::Approx(0.0));
  CHECK(r.next_state.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("step: pointring at goal center is terminal with near-zero reward") {
  EnvSpec e = EnvSpec::pointring_default();
  Vec s = Vec::Zero(4);
  s.head<2>() = e.pr_goal();
  StepResult r = step(e, s, Vec::Zero(2), Vec::Zero(4));
  CHECK(r.terminal);
  CHECK(std::abs(r.reward) < 0.05);
}

TEST_CASE("step: out-of-bounds actions are clipped") {
  EnvSpec e = scalar_lqr();
  Vec s = Vec::Zero(1), n = Vec::Zero(1);
  StepResult a = step(e, s, Vec::Constant(1, 1e6), n);
  StepResult b = step(e, s, Vec::Constant(1, 100.0), n);
  CHECK(a.next_state(0) == b.next_state(0));
}

TEST_CASE("step: non-finite state rejected") {
  EnvSpec e = scalar_lqr();
  Vec s = Vec::Constant(1, std::nan(""));
  CHECK_THROWS_AS(step(e, s, Vec::Zero(1), Vec::Zero(1)), std::invalid_argument);
}

TEST_CASE("riccati: scalar fixed point is the golden ratio") {
  EnvSpec e = scalar_lqr();
  RiccatiSolution sol = riccati_solve(e, 1.0);
  CHECK(sol.P(0, 0) == doctest::Approx((1.0 + std::sqrt(5.0)) / 2.0).epsilon(1e-8));
  CHECK(riccati_value(e, Vec::Zero(1), 1.0) == doctest::Approx(0.0));
}

TEST_CASE("riccati: P symmetric positive definite, values nonpositive") {
  EnvSpec e = EnvSpec::lqr_default();
  RiccatiSolution sol = riccati_solve(e, 0.99);
  CHECK((sol.P - sol.P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat> eig(sol.P);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Vec s(2);
    s << rng.normal(), rng.normal();
    CHECK(riccati_value(e, s, 0.99) <= 0.0);
  }
}

TEST_CASE("riccati: optimal rollout return matches -s0'Ps0 with truncation remainder") {
  EnvSpec e = EnvSpec::lqr_default();
  const double gamma = 0.99;
  RiccatiSolution sol = riccati_solve(e, gamma);
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    // stay inside the region where the optimal action avoids the clip
    Vec s(2);
    s << 0.5 * rng.normal(), 0.5 * rng.normal();
    const Vec s0 = s;
    double ret = 0.0, g = 1.0;
    for (int t = 0; t < 200; ++t) {
      Vec a = -sol.K * s;
      StepResult r = step(e, s, a, Vec::Zero(2));
      ret += g * r.reward;
      g *= gamma;
      s = r.next_state;
    }
    const double expected = -s0.dot(sol.P * s0) - g * (-s.dot(sol.P * s));
    CHECK(std::abs(ret - expected) < 1e-6);
  }
}

TEST_CASE("discounted_return: direct sums and backward-recursion oracle") {
  Trajectory t;
  auto push = [&](double r) {
    Transition tr;
    tr.state = Vec::Zero(1);
    tr.action = Vec::Zero(1);
    tr.next_state = Vec::Zero(1);
    tr.reward = r;
    t.transitions.push_back(tr);
  };
  push(0.0);
  push(0.0);
  CHECK(discounted_return(t, 0.5) == doctest::Approx(0.0));

  t.transitions.clear();
  push(1.0);
  push(1.0);
  push(1.0);
  CHECK(discounted_return(t, 0.99) == doctest::Approx(2.9701).epsilon(1e-12));

  // random rewards vs reversed accumulation R_t = r_t + g R_{t+1}
  t.transitions.clear();
  Rng rng(7);
  for (int i = 0; i < 37; ++i) push(rng.normal());
  const double gamma = 0.93;
  double back = 0.0;
  for (int i = 36; i >= 0; --i)
    back = t.transitions[static_cast<size_t>(i)].reward + gamma * back;
  CHECK(discounted_return(t, gamma) == doctest::Approx(back).epsilon(1e-12));

  Trajectory empty;
  CHECK_THROWS_AS(discounted_return(empty, 0.99), std::invalid_argument);
}

TEST_CASE("generate_dataset: rejects bad preconditions") {
  EnvSpec e = EnvSpec::lqr_default();
  CHECK_THROWS_AS(generate_dataset(e, {{PolicyKind::random, 1.0}}, 0, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_dataset(e, {{PolicyKind::random, 0.5}}, 3, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(policy_kind_from_string("warp"), std::invalid_argument);
}

TEST_CASE("generate_dataset: deterministic, valid, byte-identical files") {
  namespace fs = std::filesystem;
  EnvSpec e = EnvSpec::lqr_default();
  BehaviorMix mix{{PolicyKind::expert, 0.4}, {PolicyKind::noisy, 0.4},
                  {PolicyKind::random, 0.2}};
  Dataset a = generate_dataset(e, mix, 12, 99);
  Dataset b = generate_dataset(e, mix, 12, 99);
  validate(a);
  CHECK(a.total_transitions() == b.total_transitions());
  const fs::path dir = fs::temp_directory_path() / "ipd_gen_test";
  fs::create_directories(dir);
  write_dataset(a, (dir / "a.ipdt").string());
  write_dataset(b, (dir / "b.ipdt").string());
  CHECK(slurp((dir / "a.ipdt").string()) == slurp((dir / "b.ipdt").string()));
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset: pointring stitching requires composition") {
  EnvSpec e = EnvSpec::pointring_default();
  BehaviorMix mix{{PolicyKind::half_a, 0.5}, {PolicyKind::half_b, 0.35},
                  {PolicyKind::random, 0.15}};
  Dataset ds = generate_dataset(e, mix, 40, 7);
  validate(ds);

  // undiscounted returns; best single trajectory
  double best = -1e18;
  for (const auto& t : ds.trajectories) best = std::max(best, discounted_return(t, 1.0));

  // explicit splice: half_a prefix until closest approach to the midpoint,
  // then a half_b suffix from where it stops waiting (detected by speed)
  const Eigen::Vector2d midpt(0.0, e.pr_ring());
  const Trajectory* ha = nullptr;
  const Trajectory* hb = nullptr;
  // half_a trajectories come first in the mix ordering, half_b after
  double best_ha = -1e18, best_hb = -1e18;
  for (const auto& t : ds.trajectories) {
    const Eigen::Vector2d p0 = t.transitions.front().state.head<2>();
    const bool starts_at_start = (p0 - Eigen::Vector2d(e.pr_start())).norm() < 0.3;
    const bool starts_at_mid = (p0 - midpt).norm() < 0.3;
    const double ret = discounted_return(t, 1.0);
    if (starts_at_start && ret > best_ha) {
      // half_a candidates end near the midpoint
      const Eigen::Vector2d pT = t.transitions.back().next_state.head<2>();
      if ((pT - midpt).norm() < 0.3) {
        best_ha = ret;
        ha = &t;
      }
    }
    if (starts_at_mid && t.transitions.back().terminal && ret > best_hb) {
      best_hb = ret;
      hb = &t;
    }
  }
  REQUIRE(ha != nullptr);
  REQUIRE(hb != nullptr);

  // prefix of ha: until first step within 0.2 of the midpoint
  double spliced = 0.0;
  bool reached_mid = false;
  for (const auto& tr : ha->transitions) {
    spliced += tr.reward;
    if ((tr.next_state.head<2>() - midpt).norm() < 0.2) {
      reached_mid = true;
      break;
    }
  }
  REQUIRE(reached_mid);
  // suffix of hb: from the first step with real forward speed
  size_t dep = 0;
  for (; dep < hb->transitions.size(); ++dep)
    if (hb->transitions[dep].state.tail<2>().norm() > 0.35) break;
  REQUIRE(dep < hb->transitions.size());
  for (size_t k = dep; k < hb->transitions.size(); ++k)
    spliced += hb->transitions[k].reward;

  INFO("best single return ", best, " spliced ", spliced);
  CHECK(spliced > best);
}

TEST_CASE("pointring half experts never traverse the full route alone") {
  EnvSpec e = EnvSpec::pointring_default();
  Dataset ds = generate_dataset(
      e, {{PolicyKind::half_a, 0.5}, {PolicyKind::half_b, 0.5}}, 20, 11);
  for (const auto& t : ds.trajectories) {
    const Eigen::Vector2d p0 = t.transitions.front().state.head<2>();
    const bool from_start = (p0 - Eigen::Vector2d(e.pr_start())).norm() < 0.3;
    if (from_start) {
      // half_a: must never enter the goal region
      CHECK_FALSE(t.transitions.back().terminal);
    } else {
      // half_b: starts at the midpoint, so the full route is never covered
      CHECK((p0 - Eigen::Vector2d(0.0, e.pr_ring())).norm() < 0.3);
    }
  }
}

TEST_CASE("dataset io: round-trip, empty dataset, error codes") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ipd_io_test";
  fs::create_directories(dir);
  const std::string path = (dir / "d.ipdt").string();

  // empty dataset round-trips
  Dataset empty;
  empty.env = EnvSpec::pointring_default();
  write_dataset(empty, path);
  Dataset back = read_dataset(path);
  CHECK(back.trajectories.empty());
  CHECK(back.env.name == EnvName::pointring);

  // 2-trajectory round-trip is exact at stored precision
  Dataset ds = generate_dataset(EnvSpec::lqr_default(),
                                {{PolicyKind::expert, 0.5}, {PolicyKind::random, 0.5}}, 2, 4);
  write_dataset(ds, path);
  Dataset rd = read_dataset(path);
  REQUIRE(rd.trajectories.size() == ds.trajectories.size());
  for (size_t t = 0; t < rd.trajectories.size(); ++t) {
    const auto& ta = ds.trajectories[t];
    const auto& tb = rd.trajectories[t];
    REQUIRE(ta.transitions.size() == tb.transitions.size());
    CHECK(ta.provenance == tb.provenance);
    CHECK(ta.source_index == tb.source_index);
    for (size_t k = 0; k < ta.transitions.size(); ++k) {
      CHECK((ta.transitions[k].state - tb.transitions[k].state).cwiseAbs().maxCoeff() == 0.0);
      CHECK((ta.transitions[k].action - tb.transitions[k].action).cwiseAbs().maxCoeff() == 0.0);
      CHECK(ta.transitions[k].reward == tb.transitions[k].reward);
      CHECK((ta.transitions[k].next_state - tb.transitions[k].next_state)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      CHECK(ta.transitions[k].terminal == tb.transitions[k].terminal);
    }
  }
  // write(read(x)) is byte-identical
  const std::string path2 = (dir / "d2.ipdt").string();
  write_dataset(rd, path2);
  CHECK(slurp(path) == slurp(path2));

  // corrupted magic
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("NOPE", 4);
  }
  try {
    read_dataset(path);
    CHECK(false);
  } catch (const DatasetIoError& err) {
    CHECK(err.code == DatasetError::bad_magic);
  }

  // version mismatch
  write_dataset(ds, path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const uint32_t v = 999;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    read_dataset(path);
    CHECK(false);
  } catch (const DatasetIoError& err) {
    CHECK(err.code == DatasetError::bad_version);
  }

  // truncation
  write_dataset(ds, path);
  fs::resize_file(path, fs::file_size(path) - 5);
  try {
    read_dataset(path);
    CHECK(false);
  } catch (const DatasetIoError& err) {
    CHECK(err.code == DatasetError::truncated);
  }
  fs::remove_all(dir);
}
