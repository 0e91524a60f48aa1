#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "flowrec/benchmarks.hpp"
#include "flowrec/csv_io.hpp"

using namespace flowrec;

TEST_CASE("lotka-volterra generation: 201 positive samples at 1 Hz") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  const auto data = generate(spec);
  CHECK(data.rows() == 201);
  CHECK(data.states.cols() == 2);
  CHECK(data.inputs.cols() == 1);
  CHECK(data.states.minCoeff() > 0.0);
  CHECK((data.inputs.array() == 1.0).all());
  CHECK(data.times[200] == doctest::Approx(200.0));
}

TEST_CASE("generation is deterministic given the seed") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  spec.noise = 0.5;
  spec.seed = 12;
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(a.states == b.states);
  spec.seed = 13;
  const auto c = generate(spec);
  CHECK(a.states != c.states);
}

TEST_CASE("lorenz stays on the attractor over 200 s at 20 Hz") {
  BenchmarkSpec spec;
  spec.system = SystemId::lorenz;
  const auto data = generate(spec);
  CHECK(data.rows() == 4001);
  CHECK(data.states.cols() == 3);
  CHECK(data.inputs.cols() == 0);
  CHECK(data.states.array().abs().maxCoeff() < 60.0);
}

TEST_CASE("f8 cruiser and pathogen generate bounded trajectories") {
  BenchmarkSpec f8;
  f8.system = SystemId::f8_cruiser;
  f8.duration = 60;
  const auto fd = generate(f8);
  CHECK(fd.rows() == 601);
  CHECK(all_finite(fd.states));
  CHECK(fd.states.array().abs().maxCoeff() < 10.0);

  BenchmarkSpec sir;
  sir.system = SystemId::pathogen;
  const auto sd = generate(sir);
  CHECK(sd.rows() == 201);
  // S+I+R is conserved by the SIR structure
  const Vector<double> total = sd.states.rowwise().sum();
  CHECK((total.array() - total[0]).abs().maxCoeff() < 1e-6);
}

TEST_CASE("downsampled generation is solver-resolution independent") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  spec.substeps = 100;
  const auto coarse = generate(spec);
  spec.substeps = 1000;
  const auto fine = generate(spec);
  const double scale = fine.states.array().abs().maxCoeff();
  CHECK((coarse.states - fine.states).array().abs().maxCoeff() / scale < 1e-6);

  // chaotic system: check a short horizon only
  BenchmarkSpec lor;
  lor.system = SystemId::lorenz;
  lor.duration = 5;
  lor.substeps = 100;
  const auto lc = generate(lor);
  lor.substeps = 1000;
  const auto lf = generate(lor);
  const double lscale = lf.states.array().abs().maxCoeff();
  CHECK((lc.states - lf.states).array().abs().maxCoeff() / lscale < 1e-6);
}

TEST_CASE("noise stays within six standard deviations of the clean signal") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  const auto clean = generate(spec);
  spec.noise = 0.25;
  spec.seed = 99;
  const auto noisy = generate(spec);
  const double max_dev =
      (noisy.states - clean.states).array().abs().maxCoeff();
  CHECK(max_dev > 0.0);
  CHECK(max_dev <= 6.0 * spec.noise);
}

TEST_CASE("generation validates the spec") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  spec.substeps = 10;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.substeps = 100;
  spec.duration = 200.3;  // 200.3 samples at 1 Hz
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}

TEST_CASE("divergent ground truth aborts with the divergence time") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  spec.x0 = Eigen::Vector2d(1e8, 1e8);
  CHECK_THROWS_WITH_AS(generate(spec),
                       doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("csv round-trip is bit-exact") {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  spec.noise = 0.1;  // exercise non-trivial digits
  spec.seed = 4;
  const auto data = generate(spec);
  const std::string path = "roundtrip_test.csv";
  save_csv(data, path);
  const auto loaded = load_csv(path);
  CHECK(loaded.times == data.times);
  CHECK(loaded.states == data.states);
  CHECK(loaded.inputs == data.inputs);
  CHECK(loaded.rows() == 201);
  CHECK(loaded.states.cols() == 2);
  CHECK(loaded.inputs.cols() == 1);
  std::remove(path.c_str());
}

TEST_CASE("csv loader rejects gaps, bad cells, and bad headers") {
  const std::string path = "bad_test.csv";
  {
    std::ofstream out(path);
    out << "t,x1,u1\n0,1,0\n1,2,0\n3,3,0\n";  // gap at row 4
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("row 4"),
                       std::runtime_error);
  {
    std::ofstream out(path);
    out << "t,x1,u1\n0,1,0\n1,oops,0\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("non-numeric"),
                       std::runtime_error);
  {
    std::ofstream out(path);
    out << "time,x1\n0,1\n";
  }
  CHECK_THROWS_AS(load_csv(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "t,x1,x3\n0,1,2\n";  // x3 out of order
  }
  CHECK_THROWS_AS(load_csv(path), std::runtime_error);
  std::remove(path.c_str());
}
