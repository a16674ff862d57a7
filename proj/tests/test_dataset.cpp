#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nnmpc/dataset.hpp"
#include "nnmpc/errors.hpp"

using namespace nnmpc;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::filesystem::path temp_file(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "nnmpc_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

OcpSpec tiny_spec() {
  OcpSpec spec = default_pendulum_spec();
  spec.horizon = 5;
  return spec;
}

}  // namespace

TEST_CASE("2x2 grid on the unit square") {
  GridSpec grid{Vec{{0.0, 0.0}}, Vec{{1.0, 1.0}}, {2, 2}};
  const auto pts = seed_grid(grid);
  REQUIRE(pts.size() == 4);
  CHECK((pts[0] - Vec{{0.0, 0.0}}).norm() == 0.0);
  CHECK((pts[1] - Vec{{0.0, 1.0}}).norm() == 0.0);  // last dimension fastest
  CHECK((pts[2] - Vec{{1.0, 0.0}}).norm() == 0.0);
  CHECK((pts[3] - Vec{{1.0, 1.0}}).norm() == 0.0);
}

TEST_CASE("the 25x14 study grid has 350 points and exact spacing") {
  GridSpec grid{Vec{{-2.0 * M_PI, -1.0}}, Vec{{2.0 * M_PI, 1.0}}, {25, 14}};
  const auto pts = seed_grid(grid);
  CHECK(pts.size() == 350);
  const Vec h = grid.spacing();
  CHECK(h[0] == doctest::Approx(4.0 * M_PI / 24.0).epsilon(1e-15));
  CHECK(h[1] == doctest::Approx(2.0 / 13.0).epsilon(1e-15));
  // consecutive points along the fast axis differ by exactly the spacing
  CHECK(pts[1][1] - pts[0][1] == doctest::Approx(h[1]).epsilon(1e-14));
  // both endpoints included
  CHECK(pts.front()[0] == -2.0 * M_PI);
  CHECK(pts.back()[0] == 2.0 * M_PI);
  CHECK(pts.back()[1] == 1.0);
}

TEST_CASE("grid validation rejects bad shapes") {
  CHECK_THROWS_AS(seed_grid(GridSpec{Vec{{0.0}}, Vec{{1.0}}, {1}}), std::invalid_argument);
  CHECK_THROWS_AS(seed_grid(GridSpec{Vec{{1.0}}, Vec{{0.0}}, {3}}), std::invalid_argument);
}

TEST_CASE("covering radius of full grids is the half cell diagonal") {
  GridSpec unit{Vec{{0.0, 0.0}}, Vec{{1.0, 1.0}}, {2, 2}};
  Dataset ds;
  ds.n_x = 2;
  ds.n_u = 1;
  ds.grid = unit;
  for (const Vec& p : seed_grid(unit)) {
    Sample s;
    s.x = p;
    s.u = Vec::Zero(1);
    s.status = SolveStatus::converged;
    s.kkt_residual = 0.0;
    ds.samples.push_back(std::move(s));
  }
  CHECK(covering_radius(ds, unit, 0) ==
        doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-12));
  // probing agrees with the analytic value
  CHECK(covering_radius(ds, unit, 101) ==
        doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-3));

  GridSpec study{Vec{{-2.0 * M_PI, -1.0}}, Vec{{2.0 * M_PI, 1.0}}, {25, 14}};
  Dataset big;
  big.n_x = 2;
  big.n_u = 1;
  big.grid = study;
  for (const Vec& p : seed_grid(study)) {
    Sample s;
    s.x = p;
    s.u = Vec::Zero(1);
    s.status = SolveStatus::converged;
    big.samples.push_back(std::move(s));
  }
  const double expected = 0.5 * std::hypot(4.0 * M_PI / 24.0, 2.0 / 13.0);
  CHECK(covering_radius(big, study, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.27287).epsilon(1e-4));
}

TEST_CASE("single central sample covers at the half diagonal") {
  GridSpec unit{Vec{{0.0, 0.0}}, Vec{{1.0, 1.0}}, {2, 2}};
  Dataset ds;
  ds.n_x = 2;
  ds.n_u = 1;
  Sample s;
  s.x = Vec{{0.5, 0.5}};
  s.u = Vec::Zero(1);
  s.status = SolveStatus::converged;
  ds.samples.push_back(std::move(s));
  CHECK(covering_radius(ds, unit, 201) ==
        doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-2));
}

TEST_CASE("empty dataset has no covering radius") {
  GridSpec unit{Vec{{0.0, 0.0}}, Vec{{1.0, 1.0}}, {2, 2}};
  Dataset ds;
  ds.n_x = 2;
  ds.n_u = 1;
  CHECK_THROWS_AS(covering_radius(ds, unit, 10), std::invalid_argument);
}

TEST_CASE("generation labels the origin with zero input and an lqr-like gain") {
  OcpSpec spec = tiny_spec();
  GenerateOptions opt;
  opt.workers = 1;
  const Dataset ds = generate({Vec::Zero(2)}, spec, opt);
  REQUIRE(ds.samples.size() == 1);
  const Sample& s = ds.samples[0];
  REQUIRE(s.converged());
  CHECK(s.u.lpNorm<Eigen::Infinity>() <= 1e-8);
  REQUIRE(s.jac.has_value());

  // finite-difference check of the stored gain
  const SqpSolver solver;
  Mat fd(1, 2);
  for (int i = 0; i < 2; ++i) {
    Vec xp = Vec::Zero(2), xm = Vec::Zero(2);
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    NlpInstance a(spec, xp), b(spec, xm);
    fd.col(i) = (solver.solve(a).input - solver.solve(b).input) / 2e-5;
  }
  CHECK((*s.jac - fd).lpNorm<Eigen::Infinity>() <=
        1e-4 * std::max(1.0, fd.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("parallel generation equals serial generation") {
  OcpSpec spec = tiny_spec();
  GridSpec grid{Vec{{-1.0, -0.5}}, Vec{{1.0, 0.5}}, {4, 3}};
  const auto pts = seed_grid(grid);

  GenerateOptions serial;
  serial.workers = 1;
  GenerateOptions parallel;
  parallel.workers = 4;
  const Dataset a = generate(pts, spec, serial);
  const Dataset b = generate(pts, spec, parallel);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].status == b.samples[i].status);
    CHECK((a.samples[i].x - b.samples[i].x).norm() == 0.0);
    CHECK((a.samples[i].u - b.samples[i].u).norm() == 0.0);
    REQUIRE(a.samples[i].jac.has_value() == b.samples[i].jac.has_value());
    if (a.samples[i].jac) {
      CHECK((*a.samples[i].jac - *b.samples[i].jac).norm() == 0.0);
    }
  }
}

TEST_CASE("save/load round trip is byte identical and lossless") {
  OcpSpec spec = tiny_spec();
  GridSpec grid{Vec{{-0.4, -0.3}}, Vec{{0.4, 0.3}}, {3, 2}};
  GenerateOptions opt;
  Dataset ds = generate(seed_grid(grid), spec, opt, {"deadbeef", "", 42});
  ds.grid = grid;

  const auto p1 = temp_file("roundtrip1.jsonl");
  const auto p2 = temp_file("roundtrip2.jsonl");
  save_dataset(ds, p1);
  const Dataset loaded = load_dataset(p1);
  save_dataset(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));

  CHECK(loaded.provenance.spec_hash == "deadbeef");
  CHECK(loaded.provenance.seed == 42);
  CHECK(loaded.provenance.version == ds.provenance.version);
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK((loaded.samples[i].x - ds.samples[i].x).lpNorm<Eigen::Infinity>() == 0.0);
    if (ds.samples[i].converged()) {
      CHECK((loaded.samples[i].u - ds.samples[i].u).lpNorm<Eigen::Infinity>() == 0.0);
    }
    CHECK(loaded.samples[i].kkt_residual == ds.samples[i].kkt_residual);
  }
}

TEST_CASE("regeneration with the same settings is bit identical") {
  OcpSpec spec = tiny_spec();
  GridSpec grid{Vec{{-0.5, -0.5}}, Vec{{0.5, 0.5}}, {3, 3}};
  GenerateOptions opt;
  const auto p1 = temp_file("regen1.jsonl");
  const auto p2 = temp_file("regen2.jsonl");
  Dataset a = generate(seed_grid(grid), spec, opt, {"h", "", 7});
  a.grid = grid;
  Dataset b = generate(seed_grid(grid), spec, opt, {"h", "", 7});
  b.grid = grid;
  save_dataset(a, p1);
  save_dataset(b, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("loading a file with mismatched dimensions fails with the line number") {
  const auto p = temp_file("bad_dims.jsonl");
  {
    std::ofstream out(p);
    out << R"({"n_x":2,"n_u":1,"grid":null,"provenance":{"spec_hash":"","version":"x","seed":0}})" << "\n";
    out << R"({"x":[0.0,0.0,0.0],"u":[0.0],"status":"ok","kkt":0.0})" << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("line 2"), ConfigError);
}

TEST_CASE("malformed json reports a parse error") {
  const auto p = temp_file("broken.jsonl");
  {
    std::ofstream out(p);
    out << R"({"n_x":2,"n_u":1,"grid":null,"provenance":{"spec_hash":"","version":"x","seed":0}})" << "\n";
    out << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("line 2"), ConfigError);
}

TEST_CASE("without sensitivities the jacobian fields stay empty") {
  OcpSpec spec = tiny_spec();
  GenerateOptions opt;
  opt.with_sensitivities = false;
  const Dataset ds = generate({Vec{{0.2, 0.1}}}, spec, opt);
  REQUIRE(ds.samples.size() == 1);
  CHECK(!ds.samples[0].jac.has_value());
  CHECK(ds.labeled_jacobian_count() == 0);
}

TEST_CASE("uniform sampling is reproducible and inside the box") {
  GridSpec box{Vec{{-1.0, 2.0}}, Vec{{1.0, 3.0}}, {2, 2}};
  const auto a = sample_uniform(box, 100, 9);
  const auto b = sample_uniform(box, 100, 9);
  REQUIRE(a.size() == 100);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i] - b[i]).norm() == 0.0);
    CHECK(a[i][0] >= -1.0);
    CHECK(a[i][0] <= 1.0);
    CHECK(a[i][1] >= 2.0);
    CHECK(a[i][1] <= 3.0);
  }
}
